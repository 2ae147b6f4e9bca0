"""Exact mixed-integer program export for the beat-design problem.

Materializes the balance objective (a quadratic in the assignment variables),
single-sink flow contiguity, and optional diameter/shape compactness caps as
a solver-ready LP-format text file. Nothing here solves the program.

Two indexing modes for the flow variables f_i_j_k:
  dense  - every ordered atom pair, matching the full-city variable counts
           usually quoted for this formulation (quadratic in atom count);
  sparse - adjacency pairs only, which is what a solver should be fed.
Flow conservation always sums over adjacency; in dense mode the non-adjacent
flow variables exist but only appear in their pair capacity rows.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import BeatPlanError
from .geo import AtomGrid
from .partition import CompactnessParams

DENSE_ATOM_CAP = 2000


@dataclass(frozen=True)
class MipModel:
    """Everything needed to emit or count the program; nothing is materialized."""

    num_atoms: int
    num_beats: int
    q: int
    mode: str  # "dense" | "sparse"
    adjacency: tuple[tuple[int, int], ...] | None  # undirected pairs i<j
    weights: np.ndarray | None       # per-atom workload for the objective
    areas: np.ndarray | None
    centroids: np.ndarray | None
    compactness: CompactnessParams = field(default_factory=lambda: CompactnessParams(None, None))

    @property
    def num_edges(self) -> int:
        if self.adjacency is None:
            raise BeatPlanError("model built from dimensions only has no adjacency",
                                code="metadata-only")
        return len(self.adjacency)

    def neighbors_out(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.num_atoms)]
        for i, j in self.adjacency:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return [sorted(v) for v in nbrs]


def build_model(grid: AtomGrid, w_month: np.ndarray, num_beats: int, q: int | None = None,
                mode: str = "sparse",
                compactness: CompactnessParams | None = None,
                dense_cap: int = DENSE_ATOM_CAP) -> MipModel:
    """Assemble the program over a real grid.

    q defaults to the atom count, leaving beat capacity unconstrained. Dense
    mode refuses grids above dense_cap atoms since the flow block grows with
    the square of the atom count.
    """
    n = len(grid)
    if num_beats < 1 or num_beats > n:
        raise BeatPlanError(f"number of beats must be in 1..{n}", code="bad-beat-count",
                            context={"num_atoms": n, "num_beats": num_beats})
    if mode not in ("dense", "sparse"):
        raise BeatPlanError(f"unknown indexing mode {mode!r}", code="bad-mode")
    if mode == "dense" and n > dense_cap:
        estimate = 2 * n * num_beats + n * n * num_beats
        raise BeatPlanError(
            f"dense mode with {n} atoms would create {estimate:,} variables; "
            f"use sparse mode or raise dense_cap", code="model-too-large",
            context={"estimated_variables": estimate, "cap": dense_cap})
    q = n if q is None else q
    if q < 1:
        raise BeatPlanError("q must be at least 1", code="bad-capacity")
    w = np.asarray(w_month, dtype=float)
    if w.shape != (n,):
        raise BeatPlanError("workload vector length must equal atom count",
                            code="dimension-mismatch")
    return MipModel(num_atoms=n, num_beats=num_beats, q=q, mode=mode,
                    adjacency=tuple(grid.adjacency), weights=w, areas=grid.areas,
                    centroids=grid.centroids,
                    compactness=compactness or CompactnessParams(None, None))


def model_from_dimensions(num_atoms: int, num_beats: int, q: int | None = None,
                          mode: str = "dense", num_edges: int | None = None) -> MipModel:
    """Counting-only model: enough for count_report, nothing emittable."""
    if mode == "sparse" and num_edges is None:
        raise BeatPlanError("sparse counting needs the undirected edge count",
                            code="missing-edge-count")
    adjacency = None
    if num_edges is not None:
        adjacency = tuple((0, j + 1) for j in range(num_edges))  # placeholder of the right size
    return MipModel(num_atoms=num_atoms, num_beats=num_beats,
                    q=num_atoms if q is None else q, mode=mode, adjacency=adjacency,
                    weights=None, areas=None, centroids=None)


# ---------------------------------------------------------------------------
# counting


@dataclass(frozen=True)
class CountReport:
    variables: dict[str, int]
    constraints: dict[str, int]
    total_variables: int
    total_constraints: int
    binary_variables: int
    continuous_variables: int
    reconciliation: dict

    def to_json(self, path: str | None = None) -> str:
        doc = {
            "variables": self.variables,
            "constraints": self.constraints,
            "total_variables": self.total_variables,
            "total_constraints": self.total_constraints,
            "binary_variables": self.binary_variables,
            "continuous_variables": self.continuous_variables,
            "reconciliation": self.reconciliation,
        }
        text = json.dumps(doc, indent=2)
        if path:
            with open(path, "w") as f:
                f.write(text)
        return text


def count_report(model: MipModel) -> CountReport:
    """Closed-form per-family counts plus the dense-identity block.

    The reconciliation evaluates 2IK + I^2 K (variables) and 3 I^2 K + IK
    (constraints), the closed forms the dense formulation is usually counted
    by at full-city scale, next to this model's own itemization.
    """
    n, k, q = model.num_atoms, model.num_beats, model.q
    pairs = n * (n - 1) // 2
    if model.mode == "dense":
        flow_vars = n * n * k
        flow_cap_rows = n * n * k
    else:
        flow_vars = 2 * model.num_edges * k
        flow_cap_rows = 2 * model.num_edges * k
    variables = {"assign_d": n * k, "sink_h": n * k, "flow_f": flow_vars}
    constraints = {
        "assign_one": n,
        "net_outflow": n * k,
        "sink_total": 1,
        "one_sink_per_beat": k,
        "inflow_cap": n * k,
        "sink_in_beat": n * k,
        "pair_flow_cap": flow_cap_rows,
    }
    c = model.compactness
    if c.enabled:
        variables["pair_e"] = pairs * k
        constraints["pair_on_lb"] = pairs * k
        constraints["pair_on_ub_first"] = pairs * k
        constraints["pair_on_ub_second"] = pairs * k
        if c.c1 is not None:
            constraints["diameter_cap"] = pairs * k
        if c.c2 is not None:
            constraints["shape_cap"] = pairs * k
    total_v = sum(variables.values())
    total_c = sum(constraints.values())
    binary = variables["assign_d"] + variables["sink_h"] + variables.get("pair_e", 0)
    reconciliation = {
        "num_atoms": n,
        "num_beats": k,
        "dense_variable_identity": 2 * n * k + n * n * k,
        "dense_constraint_identity": 3 * n * n * k + n * k,
        "variable_identity_formula": "2*I*K + I^2*K",
        "constraint_identity_formula": "3*I^2*K + I*K",
        "model_matches_variable_identity": (model.mode == "dense" and not c.enabled
                                            and total_v == 2 * n * k + n * n * k),
    }
    return CountReport(variables=variables, constraints=constraints,
                       total_variables=total_v, total_constraints=total_c,
                       binary_variables=binary, continuous_variables=flow_vars,
                       reconciliation=reconciliation)


# ---------------------------------------------------------------------------
# document form (materialized program)


@dataclass
class LpDocument:
    """Parsed/emittable program: a neutral structure both writer and reader share."""

    objective_constant: float
    objective_quadratic: list[tuple[float, str, str]]
    constraints: list[tuple[str, list[tuple[float, str]], str, float]]  # name, terms, sense, rhs
    bounds: list[tuple[str, str, float]]  # var, sense, value
    binaries: list[str]

    def __eq__(self, other):
        return (isinstance(other, LpDocument)
                and self.objective_constant == other.objective_constant
                and self.objective_quadratic == other.objective_quadratic
                and self.constraints == other.constraints
                and self.bounds == other.bounds
                and self.binaries == other.binaries)


def _dvar(i, k):
    return f"d_{i}_{k}"


def _hvar(i, k):
    return f"h_{i}_{k}"


def _fvar(i, j, k):
    return f"f_{i}_{j}_{k}"


def _evar(i, j, k):
    return f"e_{i}_{j}_{k}"


def build_document(model: MipModel) -> LpDocument:
    """Materialize every row of the program. Intended for desk-scale exports."""
    if model.weights is None:
        raise BeatPlanError("counting-only model cannot be written", code="metadata-only")
    n, k, q = model.num_atoms, model.num_beats, model.q
    w = model.weights
    nbrs = model.neighbors_out()

    # objective: sum_k (beat workload)^2 - (total workload)^2 / K, expanded in d
    quad: list[tuple[float, str, str]] = []
    nz = [i for i in range(n) if w[i] != 0.0]
    for kk in range(k):
        for ai_pos, i in enumerate(nz):
            quad.append((float(w[i] * w[i]), _dvar(i, kk), _dvar(i, kk)))
            for j in nz[ai_pos + 1:]:
                quad.append((float(2.0 * w[i] * w[j]), _dvar(i, kk), _dvar(j, kk)))
    constant = -float(w.sum()) ** 2 / k

    cons: list[tuple[str, list[tuple[float, str]], str, float]] = []
    for i in range(n):
        cons.append((f"assign_one_{i}",
                     [(1.0, _dvar(i, kk)) for kk in range(k)], "=", 1.0))
    for i in range(n):
        for kk in range(k):
            terms = [(1.0, _fvar(i, j, kk)) for j in nbrs[i]]
            terms += [(-1.0, _fvar(j, i, kk)) for j in nbrs[i]]
            terms += [(-1.0, _dvar(i, kk)), (float(q), _hvar(i, kk))]
            cons.append((f"net_outflow_{i}_{kk}", terms, ">=", 0.0))
    cons.append(("sink_total",
                 [(1.0, _hvar(i, kk)) for i in range(n) for kk in range(k)], "=", float(k)))
    for kk in range(k):
        cons.append((f"one_sink_per_beat_{kk}",
                     [(1.0, _hvar(i, kk)) for i in range(n)], "=", 1.0))
    for i in range(n):
        for kk in range(k):
            terms = [(1.0, _fvar(j, i, kk)) for j in nbrs[i]]
            terms.append((-(float(q) - 1.0), _dvar(i, kk)))
            cons.append((f"inflow_cap_{i}_{kk}", terms, "<=", 0.0))
    for i in range(n):
        for kk in range(k):
            cons.append((f"sink_in_beat_{i}_{kk}",
                         [(1.0, _hvar(i, kk)), (-1.0, _dvar(i, kk))], "<=", 0.0))
    if model.mode == "dense":
        pair_iter = ((i, j) for i in range(n) for j in range(n))
    else:
        pair_iter = ((i, j) for i, j in _ordered_adjacency(model))
    for i, j in pair_iter:
        for kk in range(k):
            cons.append((f"pair_flow_cap_{i}_{j}_{kk}",
                         [(1.0, _fvar(i, j, kk)), (1.0, _fvar(j, i, kk)),
                          (-(float(q) - 1.0), _dvar(i, kk))], "<=", 0.0))

    binaries = [_dvar(i, kk) for i in range(n) for kk in range(k)]
    binaries += [_hvar(i, kk) for i in range(n) for kk in range(k)]

    c = model.compactness
    if c.enabled:
        for i in range(n):
            for j in range(i + 1, n):
                l_ij = float(((model.centroids[i] - model.centroids[j]) ** 2).sum())
                for kk in range(k):
                    e = _evar(i, j, kk)
                    cons.append((f"pair_on_lb_{i}_{j}_{kk}",
                                 [(1.0, e), (-1.0, _dvar(i, kk)), (-1.0, _dvar(j, kk))],
                                 ">=", -1.0))
                    cons.append((f"pair_on_ub_first_{i}_{j}_{kk}",
                                 [(1.0, e), (-1.0, _dvar(i, kk))], "<=", 0.0))
                    cons.append((f"pair_on_ub_second_{i}_{j}_{kk}",
                                 [(1.0, e), (-1.0, _dvar(j, kk))], "<=", 0.0))
                    if c.c1 is not None:
                        cons.append((f"diameter_cap_{i}_{j}_{kk}",
                                     [(l_ij, e)], "<=", float(c.c1)))
                    if c.c2 is not None:
                        terms = [(l_ij, e)]
                        terms += [(-float(c.c2 * model.areas[a]), _dvar(a, kk))
                                  for a in range(n)]
                        cons.append((f"shape_cap_{i}_{j}_{kk}", terms, "<=", 0.0))
        binaries += [_evar(i, j, kk) for i in range(n) for j in range(i + 1, n)
                     for kk in range(k)]

    if model.mode == "dense":
        fvars = [_fvar(i, j, kk) for i in range(n) for j in range(n) for kk in range(k)]
    else:
        fvars = [_fvar(i, j, kk) for i, j in _ordered_adjacency(model) for kk in range(k)]
    bounds = [(v, ">=", 0.0) for v in fvars]

    return LpDocument(objective_constant=constant, objective_quadratic=quad,
                      constraints=cons, bounds=bounds, binaries=binaries)


def _ordered_adjacency(model: MipModel):
    out = []
    for i, j in model.adjacency:
        out.append((i, j))
        out.append((j, i))
    return sorted(out)


# ---------------------------------------------------------------------------
# LP text


_HEADER = [
    "balanced contiguous districting program",
    "objective: sum over beats of squared workload deviation from the mean,",
    "expanded as a quadratic in d plus a design-independent constant",
    "families: assign_one (each atom in one beat); net_outflow / sink_total /",
    "one_sink_per_beat / inflow_cap / sink_in_beat / pair_flow_cap (single-sink",
    "flow certifies each beat is connected); pair_on_* (e_i_j_k = both i and j",
    "in beat k); diameter_cap / shape_cap (compactness caps on e)",
]


def _num(x: float) -> str:
    return repr(float(x))


def write_lp(model: MipModel, path: str) -> LpDocument:
    """Emit the program deterministically; returns the materialized document."""
    doc = build_document(model)
    with open(path, "w") as f:
        for line in _HEADER:
            f.write(f"\\ {line}\n")
        f.write(f"\\ atoms={model.num_atoms} beats={model.num_beats} q={model.q} "
                f"mode={model.mode}\n")
        f.write("Minimize\n obj:")
        f.write(" [")
        for coef, v1, v2 in doc.objective_quadratic:
            if v1 == v2:
                f.write(f" + {_num(2.0 * coef)} {v1} ^ 2")
            else:
                f.write(f" + {_num(2.0 * coef)} {v1} * {v2}")
        f.write(" ] / 2")
        if doc.objective_constant >= 0:
            f.write(f" + {_num(doc.objective_constant)}")
        else:
            f.write(f" - {_num(-doc.objective_constant)}")
        f.write("\nSubject To\n")
        for name, terms, sense, rhs in doc.constraints:
            parts = [f" {name}:"]
            for coef, var in terms:
                sign = "+" if coef >= 0 else "-"
                parts.append(f" {sign} {_num(abs(coef))} {var}")
            parts.append(f" {sense} {_num(rhs)}")
            f.write("".join(parts) + "\n")
        f.write("Bounds\n")
        for var, sense, value in doc.bounds:
            f.write(f" {var} {sense} {_num(value)}\n")
        f.write("Binary\n")
        for v in doc.binaries:
            f.write(f" {v}\n")
        f.write("End\n")
    return doc


_TERM_RE = re.compile(r"([+-])\s+([0-9.eE+-]+)\s+(\w+)")


def read_lp(path: str) -> LpDocument:
    """Parse a file produced by write_lp back into its document form."""
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    lines = [ln for ln in lines if not ln.startswith("\\")]
    text = "\n".join(lines)

    def section(start_kw, end_kws):
        start = text.index(start_kw) + len(start_kw)
        end = len(text)
        for kw in end_kws:
            pos = text.find(kw, start)
            if pos != -1:
                end = min(end, pos)
        return text[start:end]

    obj_text = section("Minimize", ["Subject To"])
    obj_text = obj_text.split("obj:", 1)[1]
    quad_part = obj_text[obj_text.index("[") + 1:obj_text.index("]")]
    tail = obj_text[obj_text.index("]") + 1:].replace("/ 2", "", 1).strip()
    quad = []
    for m in re.finditer(r"\+ ([0-9.eE+-]+) (\w+) (\^ 2|\* (\w+))", quad_part):
        coef = float(m.group(1)) / 2.0
        v1 = m.group(2)
        v2 = v1 if m.group(3) == "^ 2" else m.group(4)
        quad.append((coef, v1, v2))
    constant = 0.0
    m = re.match(r"([+-]) ([0-9.eE+-]+)", tail)
    if m:
        constant = float(m.group(2)) * (1 if m.group(1) == "+" else -1)

    cons = []
    for ln in section("Subject To", ["Bounds", "Binary", "End"]).strip().splitlines():
        ln = ln.strip()
        if not ln:
            continue
        name, rest = ln.split(":", 1)
        m = re.search(r"(<=|>=|=)\s+([0-9.eE+-]+)\s*$", rest)
        sense, rhs = m.group(1), float(m.group(2))
        terms = [(float(c) * (1 if s == "+" else -1), v)
                 for s, c, v in _TERM_RE.findall(rest[:m.start()])]
        cons.append((name.strip(), terms, sense, rhs))

    bounds = []
    if "Bounds" in text:
        for ln in section("Bounds", ["Binary", "End"]).strip().splitlines():
            ln = ln.strip()
            if not ln:
                continue
            var, sense, value = ln.split()
            bounds.append((var, sense, float(value)))

    binaries = []
    if "Binary" in text:
        binaries = [v for v in section("Binary", ["End"]).split() if v]

    return LpDocument(objective_constant=constant, objective_quadratic=quad,
                      constraints=cons, bounds=bounds, binaries=binaries)


# ---------------------------------------------------------------------------
# design validation against the exported program


def design_flow_assignment(model: MipModel, assignment: np.ndarray) -> dict | None:
    """Witness (d, h, f) values satisfying the flow system for a given design.

    Routes one unit from every member atom to its beat's sink (lowest member
    id) along a BFS tree. Returns None when some beat is not connected, in
    which case no witness exists.
    """
    n, k, q = model.num_atoms, model.num_beats, model.q
    assignment = np.asarray(assignment)
    nbrs = model.neighbors_out()
    d = {(i, int(assignment[i])): 1 for i in range(n)}
    h = {}
    f: dict[tuple[int, int, int], float] = {}
    for kk in range(k):
        members = np.flatnonzero(assignment == kk)
        if members.size == 0:
            return None
        if members.size > q:
            return None
        sink = int(members[0])
        h[(sink, kk)] = 1
        member_set = set(int(x) for x in members)
        parent = {sink: None}
        order = [sink]
        queue = [sink]
        while queue:
            u = queue.pop(0)
            for v in nbrs[u]:
                if v in member_set and v not in parent:
                    parent[v] = u
                    order.append(v)
                    queue.append(v)
        if len(parent) != members.size:
            return None
        subtree = {u: 1 for u in order}
        for u in reversed(order):
            if parent[u] is not None:
                subtree[parent[u]] += subtree[u]
        for u in order:
            p = parent[u]
            if p is not None:
                f[(u, p, kk)] = float(subtree[u])
    return {"d": d, "h": h, "f": f}
