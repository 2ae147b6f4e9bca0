"""Areal interpolation of census-block factors onto atoms.

Extensive factors (counts) are split by the share of block area each atom
covers; intensive factors (medians, averages) take the area-weighted mean of
overlapping blocks. Annual values are replicated across the 12 months of
their year.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from shapely import STRtree

from . import months
from .errors import BeatPlanError
from .geo import AtomGrid
from .ingest import CensusBlockRecord

logger = logging.getLogger(__name__)

CACHE_VERSION = 1

# factor-name keywords that indicate a value is an average, not a count
_INTENSIVE_HINTS = ("median", "average", "avg", "mean", "rate", "income", "age",
                    "price", "year_built", "rooms")


def default_factor_modes(factor_names) -> dict[str, str]:
    """Heuristic mode per factor: averages/medians intensive, counts extensive."""
    modes = {}
    for name in factor_names:
        low = name.lower()
        modes[name] = "intensive" if any(h in low for h in _INTENSIVE_HINTS) else "extensive"
    return modes


@dataclass(frozen=True)
class OverlayWeights:
    """Sparse atom-block intersection table.

    weight(i, b) = area(atom_i ∩ block_b) / area(block_b); the block areas are
    kept so intersection areas can be recovered for intensive averaging.
    """

    weights: dict[tuple[int, str], float]
    block_areas: dict[str, float]

    def intersection_area(self, atom_id: int, block_id: str) -> float:
        return self.weights[(atom_id, block_id)] * self.block_areas[block_id]


@dataclass
class CensusTensor:
    """Dense atoms x months x factors array of interpolated values."""

    values: np.ndarray  # (I, L0, M); NaN marks null
    month_indices: list[int]
    factor_names: list[str]
    uncovered_atoms: list[int] = field(default_factory=list)

    @property
    def num_atoms(self) -> int:
        return self.values.shape[0]

    def factor(self, name: str) -> np.ndarray:
        return self.values[:, :, self.factor_names.index(name)]

    def at_month(self, month_index: int) -> np.ndarray:
        return self.values[:, self.month_indices.index(month_index), :]


def overlay(grid: AtomGrid, blocks: list[CensusBlockRecord]) -> OverlayWeights:
    """Exact intersection-area weights between atoms and (deduplicated) blocks."""
    geoms: dict[str, object] = {}
    for b in blocks:
        geoms.setdefault(b.block_id, b.geometry)
    block_ids = sorted(geoms)
    block_geoms = [geoms[bid] for bid in block_ids]
    areas = {bid: g.area for bid, g in zip(block_ids, block_geoms)}

    tree = STRtree([a.cell for a in grid.atoms])
    weights: dict[tuple[int, str], float] = {}
    total_hit = 0.0
    for bid, geom in zip(block_ids, block_geoms):
        if areas[bid] <= 0:
            raise BeatPlanError(f"census block {bid} has zero area", code="degenerate-block")
        for idx in sorted(tree.query(geom, predicate="intersects")):
            inter = grid.atoms[int(idx)].cell.intersection(geom)
            if inter.is_empty or inter.area == 0.0:
                continue
            weights[(int(idx), bid)] = inter.area / areas[bid]
            total_hit += inter.area
    if blocks and total_hit == 0.0:
        raise BeatPlanError(
            "no census block intersects any atom; boundary and census are likely in "
            "different coordinate frames", code="projection-mismatch")
    return OverlayWeights(weights=weights, block_areas=areas)


def interpolate(weights: OverlayWeights, blocks: list[CensusBlockRecord],
                modes: dict[str, str], grid: AtomGrid) -> CensusTensor:
    """Build the per-atom monthly factor tensor from block-year values.

    Atoms untouched by every block get 0 for extensive factors and the
    nearest block's value for intensive ones; those atom ids are recorded in
    the result for diagnostics.
    """
    factor_names = sorted({name for b in blocks for name in b.factors})
    for name in factor_names:
        if name not in modes:
            raise BeatPlanError(f"no interpolation mode for factor {name!r}",
                                code="missing-factor-mode")
        if modes[name] not in ("extensive", "intensive"):
            raise BeatPlanError(f"bad mode {modes[name]!r} for factor {name!r}",
                                code="bad-factor-mode")

    years = sorted({b.year for b in blocks})
    month_indices = [m for y in years for m in months.months_of_year(y)]
    n = len(grid)

    by_atom: dict[int, list[str]] = {}
    for (i, bid) in weights.weights:
        by_atom.setdefault(i, []).append(bid)
    uncovered = sorted(set(range(n)) - set(by_atom))

    # nearest block per uncovered atom, for intensive fallback
    nearest: dict[int, str] = {}
    if uncovered:
        ids = sorted(weights.block_areas)
        geom_of = {b.block_id: b.geometry for b in blocks}
        for i in uncovered:
            pt = grid.atoms[i].cell.centroid
            dists = [(geom_of[bid].distance(pt), bid) for bid in ids]
            nearest[i] = min(dists)[1]

    values = np.full((n, len(month_indices), len(factor_names)), np.nan)
    for year_pos, year in enumerate(years):
        value_of = {b.block_id: b.factors for b in blocks if b.year == year}
        cols = slice(year_pos * 12, year_pos * 12 + 12)
        for j, name in enumerate(factor_names):
            col = np.zeros(n)
            if modes[name] == "extensive":
                for i in range(n):
                    acc = 0.0
                    for bid in by_atom.get(i, ()):
                        v = value_of.get(bid, {}).get(name)
                        if v is None:
                            acc = np.nan
                            break
                        acc += weights.weights[(i, bid)] * v
                    col[i] = acc
            else:
                for i in range(n):
                    if i in nearest:
                        v = value_of.get(nearest[i], {}).get(name)
                        col[i] = np.nan if v is None else v
                        continue
                    num = den = 0.0
                    for bid in by_atom.get(i, ()):
                        v = value_of.get(bid, {}).get(name)
                        if v is None:
                            num = np.nan
                            break
                        a = weights.intersection_area(i, bid)
                        num += a * v
                        den += a
                    col[i] = num / den if den > 0 else num
            values[:, cols, j] = col[:, None]

    if uncovered:
        logger.warning("%d atoms outside every census block: %s%s", len(uncovered),
                       uncovered[:10], "..." if len(uncovered) > 10 else "")
    return CensusTensor(values=values, month_indices=month_indices,
                        factor_names=factor_names, uncovered_atoms=uncovered)


# ---------------------------------------------------------------------------
# serialization


def tensor_to_csv(tensor: CensusTensor, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["atom_id", "month", "factor", "value"])
        for i in range(tensor.num_atoms):
            for li, midx in enumerate(tensor.month_indices):
                for j, name in enumerate(tensor.factor_names):
                    v = tensor.values[i, li, j]
                    writer.writerow([i, midx, name, "" if np.isnan(v) else repr(float(v))])


def tensor_from_csv(path: str) -> CensusTensor:
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append((int(row["atom_id"]), int(row["month"]), row["factor"],
                         float(row["value"]) if row["value"] else np.nan))
    month_indices = sorted({r[1] for r in rows})
    factor_names = sorted({r[2] for r in rows})
    n = max(r[0] for r in rows) + 1
    values = np.full((n, len(month_indices), len(factor_names)), np.nan)
    mpos = {m: k for k, m in enumerate(month_indices)}
    fpos = {f: k for k, f in enumerate(factor_names)}
    for i, m, name, v in rows:
        values[i, mpos[m], fpos[name]] = v
    return CensusTensor(values=values, month_indices=month_indices, factor_names=factor_names)


def tensor_to_cache(tensor: CensusTensor, path: str) -> None:
    meta = json.dumps({"version": CACHE_VERSION, "month_indices": tensor.month_indices,
                       "factor_names": tensor.factor_names,
                       "uncovered_atoms": tensor.uncovered_atoms})
    np.savez_compressed(path, meta=np.array(meta), values=tensor.values)


def tensor_from_cache(path: str) -> CensusTensor:
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["meta"]))
    if meta.get("version") != CACHE_VERSION:
        raise BeatPlanError(f"census cache version {meta.get('version')} unsupported",
                            code="bad-cache-version")
    return CensusTensor(values=data["values"], month_indices=meta["month_indices"],
                        factor_names=meta["factor_names"],
                        uncovered_atoms=meta.get("uncovered_atoms", []))
