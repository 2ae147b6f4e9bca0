"""Input parsing for call-for-service and census files, plus the synthetic generator.

Real data formats: calls as CSV (call_id,lon,lat,call_time,clear_time,category),
census as a GeoJSON block file joined to a CSV table keyed by (block_id, year).
The synthetic generator produces deterministic desk-scale instances whose
ground truth doubles as the test oracle for interpolation, counting and
regression recovery.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np
from shapely.geometry import Polygon, box, mapping, shape

from . import months
from .errors import BeatPlanError
from .geo import AtomGrid, Projection, atomize

logger = logging.getLogger(__name__)

BAD_ROW_HARD_LIMIT = 0.10  # more than this fraction of bad rows fails the load

CALLS_COLUMNS = ["call_id", "lon", "lat", "call_time", "clear_time", "category"]


@dataclass(frozen=True)
class CallRecord:
    call_id: str
    lon: float
    lat: float
    call_time: datetime
    clear_time: datetime
    category: str

    @property
    def processing_hours(self) -> float:
        return (self.clear_time - self.call_time).total_seconds() / 3600.0


@dataclass(frozen=True)
class CensusBlockRecord:
    block_id: str
    geometry: Polygon
    year: int
    factors: dict[str, float | None]


def _parse_ts(raw: str) -> datetime:
    ts = datetime.fromisoformat(raw.strip())
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def load_calls(path: str, errors: list[dict] | None = None) -> list[CallRecord]:
    """Parse a calls CSV, dropping bad rows with row-numbered diagnostics.

    Appends one diagnostic dict per rejected row to `errors` when given
    (otherwise they are logged). More than 10% bad rows is a hard failure.
    """
    report = errors if errors is not None else []
    records: list[CallRecord] = []
    total = 0
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in CALLS_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise BeatPlanError(f"calls file missing columns: {', '.join(missing)}",
                                code="missing-column", context={"missing": missing})
        for rownum, row in enumerate(reader, start=2):
            total += 1
            try:
                lon = float(row["lon"])
                lat = float(row["lat"])
                if not (math.isfinite(lon) and math.isfinite(lat)):
                    raise ValueError("non-finite coordinate")
                call_time = _parse_ts(row["call_time"])
                clear_time = _parse_ts(row["clear_time"])
                if clear_time < call_time:
                    raise ValueError("clear_time before call_time")
            except (ValueError, KeyError) as exc:
                report.append({"row": rownum, "error": str(exc)})
                continue
            records.append(CallRecord(row["call_id"], lon, lat, call_time, clear_time,
                                      row["category"]))
    if errors is None:
        for item in report:
            logger.warning("calls row %d rejected: %s", item["row"], item["error"])
    if total and len(report) / total > BAD_ROW_HARD_LIMIT:
        raise BeatPlanError(
            f"{len(report)} of {total} call rows are invalid (over {BAD_ROW_HARD_LIMIT:.0%})",
            code="too-many-bad-rows", context={"bad_rows": report[:50], "total": total})
    records.sort(key=lambda r: (r.call_time, r.call_id))
    return records


def filter_calls(records: list[CallRecord], include: list[str] | None = None,
                 exclude: list[str] | None = None) -> list[CallRecord]:
    """Restrict to the given categories; all categories pass by default."""
    out = records
    if include:
        allowed = set(include)
        out = [r for r in out if r.category in allowed]
    if exclude:
        blocked = set(exclude)
        out = [r for r in out if r.category not in blocked]
    return out


def write_calls(records: list[CallRecord], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CALLS_COLUMNS)
        for r in records:
            writer.writerow([r.call_id, repr(r.lon), repr(r.lat),
                             r.call_time.isoformat(), r.clear_time.isoformat(), r.category])


def load_census(path_geo: str, path_table: str,
                errors: list[dict] | None = None) -> list[CensusBlockRecord]:
    """Join block geometries with the per-year factor table.

    Blocks absent from the table get one record per table year with null
    factors. Duplicate (block_id, year) keys are a hard failure.
    """
    report = errors if errors is not None else []
    with open(path_geo) as f:
        doc = json.load(f)
    geoms: dict[str, Polygon] = {}
    for feat in doc["features"]:
        bid = str(feat["properties"]["block_id"])
        geoms[bid] = shape(feat["geometry"])

    table: dict[tuple[str, int], dict[str, float | None]] = {}
    with open(path_table, newline="") as f:
        reader = csv.DictReader(f)
        fields = [c for c in (reader.fieldnames or []) if c not in ("block_id", "year")]
        for row in reader:
            key = (str(row["block_id"]), int(row["year"]))
            if key in table:
                raise BeatPlanError(f"duplicate census key {key}", code="duplicate-census-key",
                                    context={"block_id": key[0], "year": key[1]})
            table[key] = {c: (float(row[c]) if row[c] not in ("", None) else None) for c in fields}

    years = sorted({y for _, y in table})
    records: list[CensusBlockRecord] = []
    for (bid, year), factors in sorted(table.items()):
        if bid not in geoms:
            report.append({"block_id": bid, "year": year, "error": "no geometry for table row"})
            continue
        records.append(CensusBlockRecord(bid, geoms[bid], year, factors))
    covered = {r.block_id for r in records}
    for bid in sorted(set(geoms) - covered):
        report.append({"block_id": bid, "error": "block missing from table; factors null"})
        for year in years or [0]:
            records.append(CensusBlockRecord(bid, geoms[bid], year,
                                             {c: None for c in fields}))
    if errors is None:
        for item in report:
            logger.warning("census: %s", item)
    return records


def write_census(blocks: list[CensusBlockRecord], path_geo: str, path_table: str) -> None:
    seen: dict[str, Polygon] = {}
    for b in blocks:
        seen.setdefault(b.block_id, b.geometry)
    doc = {
        "type": "FeatureCollection",
        "properties": {"units": "miles"},
        "features": [{"type": "Feature", "geometry": mapping(g),
                      "properties": {"block_id": bid}} for bid, g in sorted(seen.items())],
    }
    with open(path_geo, "w") as f:
        json.dump(doc, f)
    factor_names = sorted({name for b in blocks for name in b.factors})
    with open(path_table, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["block_id", "year"] + factor_names)
        for b in sorted(blocks, key=lambda b: (b.block_id, b.year)):
            writer.writerow([b.block_id, b.year] +
                            [("" if b.factors.get(n) is None else repr(b.factors[n]))
                             for n in factor_names])


# ---------------------------------------------------------------------------
# Synthetic instances


@dataclass(frozen=True)
class Hotspot:
    x: float
    y: float
    amplitude: float
    width: float


@dataclass(frozen=True)
class SyntheticSpec:
    """Full recipe for one synthetic instance; the seed determines everything."""

    rows: int
    cols: int
    seed: int
    side_length: float = 1.0
    num_months: int = 12
    start_year: int = 2019
    start_month: int = 1
    base_rate: float = 20.0
    hotspots: tuple[Hotspot, ...] = ()
    rho: float = 0.3
    beta0: float = 0.5
    beta: tuple[float, ...] = (0.02, -0.01)
    intercept: float = 2.0
    factor_names: tuple[str, ...] = ("population", "housing_units")
    factor_ranges: tuple[tuple[float, float], ...] = ((100.0, 500.0), (40.0, 200.0))
    block_rows: int = 2
    block_cols: int = 2
    noise: str = "poisson"  # or "none"
    processing_log_mean: float = -1.2  # lognormal of hours, median ~0.3 h
    processing_log_sigma: float = 0.4
    categories: tuple[str, ...] = ("disturbance", "traffic", "alarm", "theft")
    utc_offset_hours: float = months.DEFAULT_UTC_OFFSET_HOURS

    def validate(self) -> None:
        problems = []
        if self.rows < 1 or self.cols < 1:
            problems.append("grid dimensions must be at least 1x1")
        if self.num_months < 1:
            problems.append("num_months must be at least 1")
        if abs(self.rho) >= 1:
            problems.append("|rho| must be below 1")
        if len(self.beta) != len(self.factor_names) or len(self.factor_ranges) != len(self.factor_names):
            problems.append("beta, factor_names and factor_ranges must have equal length")
        if self.noise not in ("poisson", "none"):
            problems.append(f"unknown noise mode {self.noise!r}")
        if problems:
            raise BeatPlanError("; ".join(problems), code="bad-synthetic-spec",
                                context={"problems": problems})


@dataclass(frozen=True)
class GroundTruth:
    rates: np.ndarray          # I x L0 arrival rates
    counts: np.ndarray         # I x L0 realized (or exact) counts
    atom_factors: np.ndarray   # I x M, constant over months
    month_indices: list[int]
    params: dict


@dataclass(frozen=True)
class SyntheticData:
    boundary: Polygon
    grid: AtomGrid
    calls: list[CallRecord]
    census_blocks: list[CensusBlockRecord]
    truth: GroundTruth


def _row_normalized_adjacency(grid: AtomGrid) -> np.ndarray:
    n = len(grid)
    w = np.zeros((n, n))
    for i, nbrs in enumerate(grid.neighbors):
        if len(nbrs):
            w[i, nbrs] = 1.0 / len(nbrs)
    return w


def generate_synthetic(spec: SyntheticSpec, with_calls: bool = True) -> SyntheticData:
    """Build one deterministic instance from the spec.

    Arrival rates follow the spatial-lag recursion exactly; counts add
    Poisson noise unless noise="none". Census blocks tile the grid in
    rectangular groups of atoms so block values are exact sums of the
    per-atom factor surface. with_calls=False skips materializing call
    records (rate/count matrices only), which matters for large Monte-Carlo
    sweeps; it does not change any random draw that produces the counts.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    width = spec.cols * spec.side_length
    height = spec.rows * spec.side_length
    boundary = box(0.0, 0.0, width, height)
    grid = atomize(boundary, spec.side_length, "square-rook")
    n = len(grid)
    m = len(spec.factor_names)

    # census blocks: tiles of block_rows x block_cols atoms, one value set per block
    blocks: list[CensusBlockRecord] = []
    block_of_atom = np.empty(n, dtype=int)
    tiles = []
    for br in range(math.ceil(spec.rows / spec.block_rows)):
        for bc in range(math.ceil(spec.cols / spec.block_cols)):
            tiles.append((br, bc))
    tile_index = {t: k for k, t in enumerate(tiles)}
    for a in grid.atoms:
        row, col = a.grid_coord
        block_of_atom[a.id] = tile_index[(row // spec.block_rows, col // spec.block_cols)]
    block_values = np.column_stack([rng.uniform(lo, hi, size=len(tiles))
                                    for lo, hi in spec.factor_ranges])
    years = sorted({months.year_month(months.month_index(spec.start_year, spec.start_month) + k)[0]
                    for k in range(spec.num_months)})
    for (br, bc), k in sorted(tile_index.items()):
        r0, c0 = br * spec.block_rows, bc * spec.block_cols
        geom = box(c0 * spec.side_length, r0 * spec.side_length,
                   min((c0 + spec.block_cols), spec.cols) * spec.side_length,
                   min((r0 + spec.block_rows), spec.rows) * spec.side_length)
        factors = {name: float(block_values[k, j]) for j, name in enumerate(spec.factor_names)}
        for year in years:
            blocks.append(CensusBlockRecord(f"B{k:04d}", geom, year, dict(factors)))

    # per-atom factor surface: the block value split evenly over its atoms
    atoms_per_block = np.bincount(block_of_atom, minlength=len(tiles))
    atom_factors = block_values[block_of_atom] / atoms_per_block[block_of_atom, None]

    # arrival-rate recursion
    w_adj = _row_normalized_adjacency(grid)
    lam0 = np.full(n, spec.base_rate)
    for h in spec.hotspots:
        d2 = ((grid.centroids - (h.x, h.y)) ** 2).sum(axis=1)
        lam0 = lam0 + h.amplitude * np.exp(-d2 / (2.0 * h.width ** 2))
    beta = np.asarray(spec.beta, dtype=float)
    system = np.eye(n) - spec.rho * w_adj
    rates = np.empty((n, spec.num_months))
    rates[:, 0] = np.maximum(lam0, 0.0)
    for ell in range(1, spec.num_months):
        rhs = spec.intercept + spec.beta0 * rates[:, ell - 1] + atom_factors @ beta
        rates[:, ell] = np.maximum(np.linalg.solve(system, rhs), 0.0)

    if spec.noise == "poisson":
        counts = rng.poisson(rates).astype(float)
    else:
        # oracle mode: counts equal the rates exactly so fits are noiseless
        counts = rates.copy()

    start = months.month_index(spec.start_year, spec.start_month)
    month_indices = [start + k for k in range(spec.num_months)]

    calls: list[CallRecord] = []
    seq = 0
    for ell, midx in enumerate(month_indices if with_calls else []):
        t0, t1 = months.month_bounds_utc(midx, spec.utc_offset_hours)
        span = (t1 - t0).total_seconds()
        for a in grid.atoms:
            k = int(counts[a.id, ell])
            if k == 0:
                continue
            minx, miny, maxx, maxy = a.cell.bounds
            xs = rng.uniform(minx, maxx, size=k)
            ys = rng.uniform(miny, maxy, size=k)
            offsets = rng.uniform(0.0, span, size=k)
            durations = rng.lognormal(spec.processing_log_mean, spec.processing_log_sigma, size=k)
            cats = rng.choice(spec.categories, size=k)
            for x, y, off, dur, cat in zip(xs, ys, offsets, durations, cats):
                t = t0 + timedelta(seconds=float(off))
                calls.append(CallRecord(f"C{seq:07d}", float(x), float(y), t,
                                        t + timedelta(hours=float(dur)), str(cat)))
                seq += 1
    calls.sort(key=lambda r: (r.call_time, r.call_id))

    truth = GroundTruth(rates=rates, counts=counts, atom_factors=atom_factors,
                        month_indices=month_indices,
                        params={"rho": spec.rho, "beta0": spec.beta0,
                                "beta": list(spec.beta), "intercept": spec.intercept})
    return SyntheticData(boundary=boundary, grid=grid, calls=calls,
                         census_blocks=blocks, truth=truth)


def write_boundary(geometry, path: str) -> None:
    doc = {
        "type": "FeatureCollection",
        "properties": {"units": "miles"},
        "features": [{"type": "Feature", "geometry": mapping(geometry), "properties": {}}],
    }
    with open(path, "w") as f:
        json.dump(doc, f)
