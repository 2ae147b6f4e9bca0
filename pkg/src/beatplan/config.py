"""Pipeline configuration: one TOML or JSON file drives every subcommand.

Seeds are mandatory so every produced artifact is reproducible; validation
reports every violation it finds, not just the first.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import months
from .errors import BeatPlanError
from .geo import GRID_KINDS
from .partition import CompactnessParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_FILES = {
    "boundary": "boundary.geojson",
    "calls": "calls.csv",
    "census_geo": "census_blocks.geojson",
    "census_table": "census_table.csv",
    "grid": "grid.geojson",
    "tensor": "census_tensor.csv",
    "tensor_cache": "census_tensor.npz",
    "panel": "panel.csv",
    "panel_meta": "panel_meta.json",
    "model": "model.json",
    "rates": "rates.csv",
    "greedy_design": "design_greedy.csv",
    "annealed_design": "design_annealed.csv",
    "annealed_geojson": "design_annealed.geojson",
    "elbow": "elbow.csv",
    "trace": "trace.csv",
    "beat_table": "beat_table.csv",
    "summary": "summary.md",
    "mip": "model.lp",
    "mip_counts": "mip_counts.json",
    "truth_rates": "synthetic_truth.csv",
}


@dataclass
class PipelineConfig:
    seed: int
    out_dir: Path = Path("out")
    boundary_path: Path | None = None
    calls_path: Path | None = None
    census_geo_path: Path | None = None
    census_table_path: Path | None = None
    boundary_units: str = "auto"
    side_length: float = 0.345
    grid_kind: str = "square-rook"
    utc_offset_hours: float = months.DEFAULT_UTC_OFFSET_HOURS
    factor_modes: dict[str, str] = field(default_factory=dict)
    all_extensive: bool = False
    lag_order: int = 1
    rho_grid: list[float] | None = None
    horizon: int = 12
    census_mode: str = "linear"
    target_month: int | None = None
    objective_months: int = 1
    categories_include: list[str] = field(default_factory=list)
    categories_exclude: list[str] = field(default_factory=list)
    per_category_tau: bool = False
    k_target: int = 15
    anneal_t0: float = 5.0
    anneal_gamma: float = 0.999
    anneal_iterations: int = 10000
    anneal_chains: int = 3
    anneal_fixed_temperature: bool = False
    min_beat_size: int = 1
    compactness_c1: float | None = None
    compactness_c2: float | None = 64.0
    mip_mode: str = "sparse"
    mip_q: int | None = None
    report_years: list[int] = field(default_factory=list)
    files: dict[str, str] = field(default_factory=dict)
    synthetic: dict = field(default_factory=dict)

    def path(self, key: str) -> Path:
        return self.out_dir / self.files.get(key, DEFAULT_FILES[key])

    def compactness(self) -> CompactnessParams:
        return CompactnessParams(c1=self.compactness_c1, c2=self.compactness_c2)

    def input_path(self, kind: str) -> Path:
        """Configured input path, falling back to the out-dir conventional name."""
        explicit = {
            "boundary": self.boundary_path,
            "calls": self.calls_path,
            "census_geo": self.census_geo_path,
            "census_table": self.census_table_path,
        }.get(kind)
        return explicit if explicit is not None else self.path(kind)


def _load_raw(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise BeatPlanError(f"config file {path} does not exist", code="missing-config")
    if p.suffix.lower() == ".toml":
        with open(p, "rb") as f:
            return tomllib.load(f)
    with open(p) as f:
        return json.load(f)


def load_config(path: str, overrides: dict | None = None) -> PipelineConfig:
    raw = _load_raw(path)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    problems: list[str] = []
    if "seed" not in raw:
        problems.append("seed is required (no entropy default)")

    def take(key, default, cast=None):
        if key not in raw:
            return default
        try:
            return cast(raw[key]) if cast else raw[key]
        except (TypeError, ValueError):
            problems.append(f"{key} has an invalid value: {raw[key]!r}")
            return default

    cfg = PipelineConfig(
        seed=take("seed", 0, int),
        out_dir=Path(take("out_dir", "out")),
        boundary_path=Path(raw["boundary"]) if "boundary" in raw else None,
        calls_path=Path(raw["calls"]) if "calls" in raw else None,
        census_geo_path=Path(raw["census_geo"]) if "census_geo" in raw else None,
        census_table_path=Path(raw["census_table"]) if "census_table" in raw else None,
        boundary_units=take("boundary_units", "auto"),
        side_length=take("side_length", 0.345, float),
        grid_kind=take("grid_kind", "square-rook"),
        utc_offset_hours=take("utc_offset_hours", months.DEFAULT_UTC_OFFSET_HOURS, float),
        factor_modes=take("factor_modes", {}),
        all_extensive=take("all_extensive", False, bool),
        lag_order=take("lag_order", 1, int),
        rho_grid=take("rho_grid", None),
        horizon=take("horizon", 12, int),
        census_mode=take("census_mode", "linear"),
        target_month=take("target_month", None),
        objective_months=take("objective_months", 1, int),
        categories_include=take("categories_include", []),
        categories_exclude=take("categories_exclude", []),
        per_category_tau=take("per_category_tau", False, bool),
        k_target=take("k_target", 15, int),
        anneal_t0=take("anneal_t0", 5.0, float),
        anneal_gamma=take("anneal_gamma", 0.999, float),
        anneal_iterations=take("anneal_iterations", 10000, int),
        anneal_chains=take("anneal_chains", 3, int),
        anneal_fixed_temperature=take("anneal_fixed_temperature", False, bool),
        min_beat_size=take("min_beat_size", 1, int),
        compactness_c1=take("compactness_c1", None),
        compactness_c2=take("compactness_c2", 64.0),
        mip_mode=take("mip_mode", "sparse"),
        mip_q=take("mip_q", None),
        report_years=take("report_years", []),
        files=take("files", {}),
        synthetic=take("synthetic", {}),
    )

    if cfg.side_length <= 0:
        problems.append("side_length must be positive")
    if cfg.grid_kind not in GRID_KINDS:
        problems.append(f"grid_kind must be one of {GRID_KINDS}")
    if cfg.lag_order < 1:
        problems.append("lag_order must be at least 1")
    if cfg.horizon < 1:
        problems.append("horizon must be at least 1")
    if cfg.k_target < 1:
        problems.append("k_target must be at least 1")
    if cfg.objective_months < 1:
        problems.append("objective_months must be at least 1")
    if cfg.anneal_t0 <= 0:
        problems.append("anneal_t0 must be positive")
    if not (0 < cfg.anneal_gamma <= 1):
        problems.append("anneal_gamma must be in (0, 1]")
    if cfg.anneal_iterations < 0:
        problems.append("anneal_iterations must be non-negative")
    if cfg.anneal_chains < 1:
        problems.append("anneal_chains must be at least 1")
    if cfg.min_beat_size < 1:
        problems.append("min_beat_size must be at least 1")
    if cfg.mip_mode not in ("dense", "sparse"):
        problems.append("mip_mode must be dense or sparse")
    if cfg.census_mode not in ("linear", "hold"):
        problems.append("census_mode must be linear or hold")
    for name, mode in cfg.factor_modes.items():
        if mode not in ("extensive", "intensive"):
            problems.append(f"factor_modes[{name}] must be extensive or intensive")
    if cfg.rho_grid is not None:
        try:
            vals = [float(v) for v in cfg.rho_grid]
            if not vals or max(abs(v) for v in vals) >= 1:
                problems.append("rho_grid values must lie in (-1, 1)")
            cfg.rho_grid = vals
        except (TypeError, ValueError):
            problems.append("rho_grid must be a list of numbers")

    if problems:
        raise BeatPlanError("invalid configuration: " + "; ".join(problems),
                            code="invalid-config", context={"problems": problems})
    return cfg


def require_inputs(cfg: PipelineConfig, kinds: list[str], stage: str) -> None:
    missing = [str(cfg.input_path(k)) for k in kinds if not cfg.input_path(k).exists()]
    if missing:
        raise BeatPlanError(f"missing input files: {', '.join(missing)}",
                            code="missing-input", context={"paths": missing, "stage": stage})
