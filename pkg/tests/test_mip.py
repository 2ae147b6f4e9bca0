import numpy as np
import pytest

from beatplan.errors import BeatPlanError
from beatplan.geo import atomize
from beatplan.mip import (
    build_document,
    build_model,
    count_report,
    design_flow_assignment,
    model_from_dimensions,
    read_lp,
    write_lp,
)
from beatplan.partition import BeatDesign, CompactnessParams, is_contiguous, objective_value

from conftest import max_flow_beat_feasible, rect_grid


def evaluate(document, values):
    """Check every constraint row of a document against a variable valuation."""
    get = lambda v: values.get(v, 0.0)
    for name, terms, sense, rhs in document.constraints:
        lhs = sum(c * get(v) for c, v in terms)
        if sense == "=" and abs(lhs - rhs) > 1e-9:
            return False, name
        if sense == "<=" and lhs > rhs + 1e-9:
            return False, name
        if sense == ">=" and lhs < rhs - 1e-9:
            return False, name
    for var, sense, bound in document.bounds:
        if sense == ">=" and get(var) < bound - 1e-9:
            return False, f"bound {var}"
    for var in document.binaries:
        if get(var) not in (0.0, 0, 1, 1.0):
            return False, f"binary {var}"
    return True, None


def witness_values(witness):
    values = {}
    for (i, k), v in witness["d"].items():
        values[f"d_{i}_{k}"] = v
    for (i, k), v in witness["h"].items():
        values[f"h_{i}_{k}"] = v
    for (i, j, k), v in witness["f"].items():
        values[f"f_{i}_{j}_{k}"] = v
    return values


def assignment_flow_feasible(assignment, k, neighbors, q):
    for beat in range(k):
        members = [int(i) for i in np.flatnonzero(assignment == beat)]
        if not members:
            return False
        if not any(max_flow_beat_feasible(members, s, neighbors, q) for s in members):
            return False
    return True


def test_full_city_dense_counts():
    model = model_from_dimensions(1187, 15, mode="dense")
    rep = count_report(model)
    assert rep.variables["assign_d"] + rep.variables["sink_h"] == 35610
    assert rep.variables["flow_f"] == 21134535
    assert rep.total_variables == 21170145
    assert rep.binary_variables == 35610
    assert rep.continuous_variables == 21134535
    assert rep.reconciliation["dense_variable_identity"] == 21170145
    assert rep.reconciliation["dense_constraint_identity"] == 63421410
    assert rep.reconciliation["model_matches_variable_identity"]


def test_tiny_sparse_hand_count():
    grid = rect_grid(1, 2)
    model = build_model(grid, np.ones(2), 1, q=2, mode="sparse")
    rep = count_report(model)
    assert rep.variables == {"assign_d": 2, "sink_h": 2, "flow_f": 2}
    assert rep.constraints["assign_one"] == 2
    assert rep.constraints["net_outflow"] == 2
    assert rep.constraints["sink_total"] == 1
    assert rep.constraints["one_sink_per_beat"] == 1
    assert rep.constraints["inflow_cap"] == 2
    assert rep.constraints["sink_in_beat"] == 2
    assert rep.constraints["pair_flow_cap"] == 2
    doc = build_document(model)
    assert len(doc.constraints) == rep.total_constraints
    names = {v for _, terms, _, _ in doc.constraints for _, v in terms}
    assert names == {"d_0_0", "d_1_0", "h_0_0", "h_1_0", "f_0_1_0", "f_1_0_0"}


def test_single_beat_feasible(grid3x3):
    model = build_model(grid3x3, np.ones(9), 1, mode="sparse")
    doc = build_document(model)
    witness = design_flow_assignment(model, np.zeros(9, dtype=int))
    assert witness is not None
    ok, bad = evaluate(doc, witness_values(witness))
    assert ok, bad


def test_objective_expansion_matches_partition():
    grid = rect_grid(2, 3)
    rng = np.random.default_rng(8)
    w = rng.uniform(0, 4, 6)
    model = build_model(grid, w, 2, mode="sparse")
    doc = build_document(model)
    for assignment in ([0, 0, 1, 0, 1, 1], [0, 1, 1, 0, 0, 1], [1, 1, 0, 0, 0, 0]):
        assignment = np.array(assignment)
        values = {f"d_{i}_{k}": float(assignment[i] == k) for i in range(6) for k in range(2)}
        quad = sum(c * values.get(v1, 0) * values.get(v2, 0)
                   for c, v1, v2 in doc.objective_quadratic)
        z_doc = quad + doc.objective_constant
        z_ref = objective_value(BeatDesign(assignment, 2), w)
        assert z_doc == pytest.approx(z_ref, abs=1e-9)


def test_flow_system_equals_contiguity_on_path():
    grid = rect_grid(1, 4)
    model = build_model(grid, np.ones(4), 2, q=4, mode="sparse")
    doc = build_document(model)
    neighbors = grid.neighbors
    for bits in range(2 ** 4):
        assignment = np.array([(bits >> i) & 1 for i in range(4)])
        has_both = assignment.min() == 0 and assignment.max() == 1
        flow_ok = assignment_flow_feasible(assignment, 2, neighbors, model.q)
        if not has_both:
            assert not flow_ok  # empty beat has no sink
            continue
        design = BeatDesign(assignment, 2)
        contiguous, _ = is_contiguous(design, grid)
        assert flow_ok == contiguous
        witness = design_flow_assignment(model, assignment)
        assert (witness is not None) == contiguous
        if witness is not None:
            ok, bad = evaluate(doc, witness_values(witness))
            assert ok, bad


def test_heuristic_designs_satisfy_export(grid4x4):
    rng = np.random.default_rng(9)
    w = rng.uniform(0, 3, 16)
    model = build_model(grid4x4, w, 2, mode="sparse")
    doc = build_document(model)
    band = BeatDesign(np.repeat([0, 1], 8), 2)
    witness = design_flow_assignment(model, band.assignment)
    assert witness is not None
    ok, bad = evaluate(doc, witness_values(witness))
    assert ok, bad


def test_compactness_families_present_only_when_enabled():
    grid = rect_grid(2, 2)
    plain = build_model(grid, np.ones(4), 2, mode="sparse")
    assert "pair_e" not in count_report(plain).variables
    compact = build_model(grid, np.ones(4), 2, mode="sparse",
                          compactness=CompactnessParams(c1=9.0, c2=2.0))
    rep = count_report(compact)
    assert rep.variables["pair_e"] == 6 * 2
    assert rep.constraints["diameter_cap"] == 12
    assert rep.constraints["shape_cap"] == 12
    doc = build_document(compact)
    evars = [v for v in doc.binaries if v.startswith("e_")]
    assert len(evars) == 12


def test_lp_file_roundtrip_and_byte_stability(tmp_path):
    grid = rect_grid(2, 2)
    w = np.array([1.5, 0.0, 2.25, 3.0])
    model = build_model(grid, w, 2, q=3, mode="sparse",
                        compactness=CompactnessParams(c1=8.0, c2=4.0))
    p1 = tmp_path / "m1.lp"
    p2 = tmp_path / "m2.lp"
    doc = write_lp(model, str(p1))
    write_lp(model, str(p2))
    assert p1.read_bytes() == p2.read_bytes()
    parsed = read_lp(str(p1))
    assert parsed == doc
    text = p1.read_text()
    assert "e_0_1_0" in text
    assert text.startswith("\\")
    assert "Minimize" in text and "Subject To" in text and "End" in text


def test_lp_file_without_compactness_has_no_e(tmp_path):
    grid = rect_grid(2, 2)
    model = build_model(grid, np.ones(4), 2, mode="sparse")
    path = tmp_path / "m.lp"
    write_lp(model, str(path))
    import re

    body = "\n".join(ln for ln in path.read_text().splitlines() if not ln.startswith("\\"))
    assert not re.search(r"\be_\d", body)


def test_dense_mode_refusal():
    grid = rect_grid(2, 2)
    with pytest.raises(BeatPlanError) as err:
        build_model(grid, np.ones(4), 2, mode="dense", dense_cap=3)
    assert err.value.code == "model-too-large"
    assert err.value.context["estimated_variables"] == 2 * 4 * 2 + 16 * 2


def test_beats_exceeding_atoms_rejected():
    grid = rect_grid(1, 2)
    with pytest.raises(BeatPlanError) as err:
        build_model(grid, np.ones(2), 3)
    assert err.value.code == "bad-beat-count"


def test_dense_document_has_all_pair_flows():
    grid = rect_grid(1, 2)
    model = build_model(grid, np.ones(2), 1, mode="dense")
    doc = build_document(model)
    fvars = {v for v, _, _ in doc.bounds}
    assert fvars == {"f_0_0_0", "f_0_1_0", "f_1_0_0", "f_1_1_0"}
    rep = count_report(model)
    assert rep.variables["flow_f"] == 4
    assert rep.constraints["pair_flow_cap"] == 4


def test_metadata_model_cannot_be_written(tmp_path):
    model = model_from_dimensions(10, 2, mode="dense")
    with pytest.raises(BeatPlanError):
        write_lp(model, str(tmp_path / "x.lp"))


def test_count_report_json(tmp_path):
    model = model_from_dimensions(1187, 15, mode="dense")
    text = count_report(model).to_json(str(tmp_path / "c.json"))
    assert "21170145" in text.replace(" ", "").replace(",", "")
