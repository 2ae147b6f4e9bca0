"""Command-line pipeline: each subcommand runs one stage over files.

Every stage reads and writes the serialized artifacts in the configured
output directory, so stages can be re-run independently; run-all chains the
whole boundary-to-report pipeline. Failures print a machine-readable JSON
object {stage, code, message, context} on stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import forecast, geo, ingest, interp, mip, report, workload
from .config import PipelineConfig, load_config, require_inputs
from .errors import BeatPlanError
from .optimize import AnnealConfig, anneal_multi, greedy_expand
from .partition import (
    BeatDesign,
    component_design,
    design_from_csv,
    design_to_csv,
    design_to_geojson,
    workload_variance,
)


def _synthetic_spec(cfg: PipelineConfig) -> ingest.SyntheticSpec:
    raw = dict(cfg.synthetic)
    raw.setdefault("seed", cfg.seed)
    hotspots = tuple(ingest.Hotspot(**h) for h in raw.pop("hotspots", []))
    for key in ("beta", "factor_names", "categories"):
        if key in raw:
            raw[key] = tuple(raw[key])
    if "factor_ranges" in raw:
        raw["factor_ranges"] = tuple(tuple(r) for r in raw["factor_ranges"])
    try:
        return ingest.SyntheticSpec(hotspots=hotspots, **raw)
    except TypeError as exc:
        raise BeatPlanError(f"bad synthetic section: {exc}", code="bad-synthetic-spec") from exc


def cmd_synth(cfg: PipelineConfig, args) -> None:
    data = ingest.generate_synthetic(_synthetic_spec(cfg))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    ingest.write_boundary(data.boundary, cfg.path("boundary"))
    ingest.write_calls(data.calls, cfg.path("calls"))
    ingest.write_census(data.census_blocks, cfg.path("census_geo"), cfg.path("census_table"))
    truth = forecast.RateSurface(rates=data.truth.rates,
                                 month_indices=data.truth.month_indices)
    forecast.rates_to_csv(truth, cfg.path("truth_rates"))
    print(f"synth: {len(data.grid)} atoms, {len(data.calls)} calls -> {cfg.out_dir}")


def cmd_atomize(cfg: PipelineConfig, args) -> None:
    require_inputs(cfg, ["boundary"], "atomize")
    boundary, projection = geo.load_boundary(str(cfg.input_path("boundary")),
                                             units=cfg.boundary_units)
    grid = geo.atomize(boundary, cfg.side_length, cfg.grid_kind, projection)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    geo.save_grid(grid, cfg.path("grid"))
    print(f"atomize: {len(grid)} atoms ({cfg.grid_kind}, side {cfg.side_length} mi) "
          f"-> {cfg.path('grid')}")


def _load_grid(cfg: PipelineConfig) -> geo.AtomGrid:
    require_inputs(cfg, ["grid"], "load-grid")
    return geo.load_grid(cfg.path("grid"))


def cmd_interpolate(cfg: PipelineConfig, args) -> None:
    grid = _load_grid(cfg)
    require_inputs(cfg, ["census_geo", "census_table"], "interpolate")
    blocks = ingest.load_census(str(cfg.input_path("census_geo")),
                                str(cfg.input_path("census_table")))
    with open(cfg.input_path("census_geo")) as f:
        units = (json.load(f).get("properties") or {}).get("units", "lonlat")
    if units != "miles" and grid.projection.kind != "identity":
        blocks = [ingest.CensusBlockRecord(b.block_id,
                                           geo.project_geometry(b.geometry, grid.projection),
                                           b.year, b.factors) for b in blocks]
    factor_names = sorted({name for b in blocks for name in b.factors})
    if cfg.all_extensive:
        modes = {name: "extensive" for name in factor_names}
    else:
        modes = interp.default_factor_modes(factor_names)
        modes.update(cfg.factor_modes)
    weights = interp.overlay(grid, blocks)
    tensor = interp.interpolate(weights, blocks, modes, grid)
    interp.tensor_to_csv(tensor, cfg.path("tensor"))
    interp.tensor_to_cache(tensor, cfg.path("tensor_cache"))
    print(f"interpolate: {len(blocks)} block-years x {len(factor_names)} factors "
          f"-> {cfg.path('tensor')}")


def _load_tensor(cfg: PipelineConfig):
    if cfg.path("tensor_cache").exists():
        return interp.tensor_from_cache(cfg.path("tensor_cache"))
    return interp.tensor_from_csv(cfg.path("tensor"))


def cmd_workload(cfg: PipelineConfig, args) -> None:
    grid = _load_grid(cfg)
    require_inputs(cfg, ["calls"], "workload")
    calls = ingest.load_calls(str(cfg.input_path("calls")))
    calls = ingest.filter_calls(calls, cfg.categories_include, cfg.categories_exclude)
    calls = workload.project_calls(calls, grid.projection)
    counted = workload.count_calls(grid, calls, cfg.utc_offset_hours)
    panel = workload.estimate_workload(counted, calls, per_category=cfg.per_category_tau)
    workload.panel_to_csv(panel, cfg.path("panel"), cfg.path("panel_meta"))
    print(f"workload: {int(panel.counts.sum())} calls counted, {panel.unmatched} unmatched, "
          f"tau={panel.tau:.3f} h -> {cfg.path('panel')}")


def cmd_fit(cfg: PipelineConfig, args) -> None:
    grid = _load_grid(cfg)
    require_inputs(cfg, ["panel", "tensor"], "fit")
    panel = workload.panel_from_csv(cfg.path("panel"), cfg.path("panel_meta"))
    tensor = _load_tensor(cfg)
    weights = forecast.build_weights(grid)
    model = forecast.fit(panel, tensor, weights, p=cfg.lag_order, rho_grid=cfg.rho_grid)
    forecast.model_to_json(model, cfg.path("model"))
    diag = model.diagnostics
    print(f"fit: rho={model.rho:.3f} beta0={model.beta0:.3f} "
          f"R2={diag['r_squared']:.4f} -> {cfg.path('model')}")


def cmd_predict(cfg: PipelineConfig, args) -> None:
    grid = _load_grid(cfg)
    require_inputs(cfg, ["panel", "tensor", "model"], "predict")
    panel = workload.panel_from_csv(cfg.path("panel"), cfg.path("panel_meta"))
    tensor = _load_tensor(cfg)
    model = forecast.model_from_json(cfg.path("model"))
    weights = forecast.build_weights(grid)
    surface = forecast.predict(model, panel, tensor, weights, cfg.horizon,
                               census_mode=cfg.census_mode)
    forecast.rates_to_csv(surface, cfg.path("rates"))
    print(f"predict: months {surface.month_indices[0]}..{surface.month_indices[-1]} "
          f"-> {cfg.path('rates')}")


def _objective_vector(cfg: PipelineConfig) -> tuple[np.ndarray, int]:
    """Per-atom workload driving the optimization: the first forecast month by
    default, the last observed month without forecasts. objective_months > 1
    stacks that many consecutive months into columns so the searches average
    the objective over the horizon."""
    panel = workload.panel_from_csv(cfg.path("panel"), cfg.path("panel_meta"))
    if cfg.path("rates").exists():
        surface = forecast.rates_from_csv(cfg.path("rates"))
        month = cfg.target_month if cfg.target_month is not None else surface.month_indices[0]
        start = surface.month_indices.index(month)
        stop = min(start + cfg.objective_months, len(surface.month_indices))
        w = surface.rates[:, start:stop] * panel.tau
        return (w[:, 0] if w.shape[1] == 1 else w), month
    month = cfg.target_month if cfg.target_month is not None else panel.month_indices[-1]
    start = panel.month_indices.index(month)
    stop = min(start + cfg.objective_months, len(panel.month_indices))
    w = panel.workload[:, start:stop]
    return (w[:, 0] if w.shape[1] == 1 else w), month


def _initial_design(cfg: PipelineConfig, grid, args) -> BeatDesign:
    path = getattr(args, "initial_design", None)
    if path:
        return design_from_csv(path)
    return component_design(grid)


def cmd_greedy(cfg: PipelineConfig, args) -> None:
    grid = _load_grid(cfg)
    require_inputs(cfg, ["panel"], "greedy")
    w, month = _objective_vector(cfg)
    initial = _initial_design(cfg, grid, args)
    result = greedy_expand(initial, grid, w, cfg.k_target)
    design_to_csv(result.final, cfg.path("greedy_design"))
    report.elbow_curve(result.elbow, cfg.path("elbow"))
    v = workload_variance(result.final, w)
    note = f" ({result.diagnostic})" if result.diagnostic else ""
    print(f"greedy: K={result.final.num_beats} variance={v:.2f} month={month}{note} "
          f"-> {cfg.path('greedy_design')}")


def cmd_anneal(cfg: PipelineConfig, args) -> None:
    grid = _load_grid(cfg)
    require_inputs(cfg, ["panel"], "anneal")
    w, month = _objective_vector(cfg)
    from pathlib import Path

    design_path = Path(getattr(args, "design", None) or cfg.path("greedy_design"))
    if not design_path.exists():
        raise BeatPlanError(f"no starting design at {design_path}", code="missing-input",
                            context={"path": str(design_path)})
    initial = design_from_csv(str(design_path))
    conf = AnnealConfig(t0=cfg.anneal_t0, iterations=cfg.anneal_iterations,
                        seed=cfg.seed, gamma=cfg.anneal_gamma,
                        fixed_temperature=cfg.anneal_fixed_temperature,
                        compactness=cfg.compactness(), min_beat_size=cfg.min_beat_size,
                        target_month=month)
    best, traces = anneal_multi(initial, grid, w, conf, chains=cfg.anneal_chains)
    design_to_csv(best, cfg.path("annealed_design"))
    design_to_geojson(best, grid, cfg.path("annealed_geojson"))
    with open(cfg.path("trace"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["chain", "iteration", "z_current", "z_best", "accepted", "temperature"])
        for c, trace in enumerate(traces):
            for row in zip(trace.iterations, trace.z_current, trace.z_best,
                           trace.accepted, trace.temperature):
                writer.writerow([c, row[0], repr(row[1]), repr(row[2]), int(row[3]),
                                 repr(row[4])])
    v0 = workload_variance(initial, w)
    v1 = workload_variance(best, w)
    print(f"anneal: variance {v0:.2f} -> {v1:.2f} over {cfg.anneal_chains} chains "
          f"-> {cfg.path('annealed_design')}")


def cmd_export_mip(cfg: PipelineConfig | None, args) -> None:
    mode = args.mode or (cfg.mip_mode if cfg else "sparse")
    if args.count_only and args.num_atoms:
        model = mip.model_from_dimensions(args.num_atoms, args.num_beats or 15,
                                          q=args.q, mode=mode, num_edges=args.num_edges)
        rep = mip.count_report(model)
        if cfg:
            cfg.out_dir.mkdir(parents=True, exist_ok=True)
            rep.to_json(cfg.path("mip_counts"))
        print(f"variables: {rep.total_variables:,}")
        print(f"dense-identity constraints: {rep.reconciliation['dense_constraint_identity']:,}")
        print(rep.to_json())
        return
    if cfg is None:
        raise BeatPlanError("--config required unless --count-only with --num-atoms",
                            code="missing-config")
    grid = _load_grid(cfg)
    require_inputs(cfg, ["panel"], "export-mip")
    w, _ = _objective_vector(cfg)
    if w.ndim == 2:
        w = w[:, 0]  # the exported program is single-month
    k = args.num_beats or cfg.k_target
    model = mip.build_model(grid, w, k, q=args.q or cfg.mip_q, mode=mode,
                            compactness=cfg.compactness() if args.with_compactness else None)
    rep = mip.count_report(model)
    rep.to_json(cfg.path("mip_counts"))
    if args.count_only:
        print(f"variables: {rep.total_variables:,}")
        print(f"constraints: {rep.total_constraints:,}")
        return
    mip.write_lp(model, cfg.path("mip"))
    print(f"export-mip: {rep.total_variables:,} vars, {rep.total_constraints:,} rows "
          f"-> {cfg.path('mip')}")


def cmd_report(cfg: PipelineConfig, args) -> None:
    grid = _load_grid(cfg)
    require_inputs(cfg, ["panel"], "report")
    panel = workload.panel_from_csv(cfg.path("panel"), cfg.path("panel_meta"))
    designs = []
    for key, label in (("greedy_design", "greedy"), ("annealed_design", "refined")):
        if cfg.path(key).exists():
            designs.append((label, design_from_csv(cfg.path(key))))
    if not designs:
        raise BeatPlanError("no designs to report; run greedy and/or anneal first",
                            code="missing-input")
    w_matrix, month_indices = panel.workload, panel.month_indices
    if cfg.path("rates").exists():
        surface = forecast.rates_from_csv(cfg.path("rates"))
        w_matrix = np.hstack([w_matrix, forecast.forecast_workload(surface, panel.tau)])
        month_indices = month_indices + surface.month_indices
    years = cfg.report_years or sorted({m // 12 for m in month_indices})
    table = report.beat_table(designs, w_matrix, month_indices, years)
    report.beat_table_to_csv(table, cfg.path("beat_table"))
    w_vec, month = _objective_vector(cfg)
    if w_vec.ndim == 2:
        w_vec = w_vec[:, 0]
    report.heat_surface(w_vec, grid, cfg.out_dir / f"heat_{month}.geojson",
                        value_name="workload_hours")
    elbow = None
    if cfg.path("elbow").exists():
        with open(cfg.path("elbow")) as f:
            elbow = [(int(r["num_beats"]), float(r["variance"])) for r in csv.DictReader(f)]
    report.write_summary(cfg.path("summary"), table=table, elbow=elbow)
    print(f"report: {len(designs)} designs x {len(years)} years -> {cfg.path('beat_table')}")


def cmd_run_all(cfg: PipelineConfig, args) -> None:
    cmd_atomize(cfg, args)
    cmd_interpolate(cfg, args)
    cmd_workload(cfg, args)
    cmd_fit(cfg, args)
    cmd_predict(cfg, args)
    cmd_greedy(cfg, args)
    cmd_anneal(cfg, args)
    cmd_report(cfg, args)


COMMANDS = {
    "synth": cmd_synth,
    "atomize": cmd_atomize,
    "interpolate": cmd_interpolate,
    "workload": cmd_workload,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "greedy": cmd_greedy,
    "anneal": cmd_anneal,
    "export-mip": cmd_export_mip,
    "report": cmd_report,
    "run-all": cmd_run_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beatplan",
                                     description="balanced contiguous beat design pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML or JSON pipeline configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out-dir", help="override the output directory")
        if name in ("greedy", "run-all"):
            p.add_argument("--initial-design", help="CSV of atom_id,beat_id to expand from")
        if name == "anneal":
            p.add_argument("--design", help="CSV design to refine (default: greedy output)")
        if name == "export-mip":
            p.add_argument("--mode", choices=["dense", "sparse"])
            p.add_argument("--count-only", action="store_true")
            p.add_argument("--num-atoms", type=int)
            p.add_argument("--num-edges", type=int)
            p.add_argument("--num-beats", type=int)
            p.add_argument("--q", type=int)
            p.add_argument("--with-compactness", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stage = args.command
    try:
        cfg = None
        if args.config:
            cfg = load_config(args.config,
                              overrides={"seed": args.seed, "out_dir": args.out_dir})
        elif not (stage == "export-mip" and args.count_only and args.num_atoms):
            raise BeatPlanError("--config is required", code="missing-config")
        COMMANDS[stage](cfg, args)
        return 0
    except BeatPlanError as exc:
        json.dump(exc.to_json(stage), sys.stderr)
        sys.stderr.write("\n")
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        json.dump({"stage": stage, "code": "internal-error", "message": str(exc),
                   "context": {}}, sys.stderr)
        sys.stderr.write("\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
