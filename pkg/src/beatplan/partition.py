"""Beat designs over the atom grid: balance objective, contiguity, compactness,
and single-atom boundary moves.

The objective is the sum of squared deviations of beat workloads from their
mean; reports divide by the number of beats and label that "variance".
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from shapely.geometry import mapping
from shapely.ops import unary_union

from .errors import BeatPlanError
from .geo import AtomGrid
from .workload import beat_workload


class BeatDesign:
    """Immutable atom-to-beat assignment with dense beat ids 0..K-1."""

    def __init__(self, assignment, num_beats: int | None = None):
        arr = np.array(assignment, dtype=int)
        if arr.ndim != 1 or arr.size == 0:
            raise BeatPlanError("assignment must be a non-empty 1-D vector", code="bad-design")
        k = int(arr.max()) + 1 if num_beats is None else num_beats
        if arr.min() < 0 or arr.max() >= k:
            raise BeatPlanError("assignment contains a beat id out of range",
                                code="bad-beat-id", context={"num_beats": k})
        sizes = np.bincount(arr, minlength=k)
        if (sizes == 0).any():
            empty = np.flatnonzero(sizes == 0).tolist()
            raise BeatPlanError(f"beats {empty} are empty", code="empty-beat",
                                context={"empty_beats": empty})
        arr.setflags(write=False)
        self.assignment = arr
        self.num_beats = k

    def __len__(self) -> int:
        return self.assignment.size

    def __eq__(self, other) -> bool:
        return (isinstance(other, BeatDesign) and self.num_beats == other.num_beats
                and np.array_equal(self.assignment, other.assignment))

    def members(self, beat: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == beat)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_beats)

    def with_move(self, atom: int, to_beat: int) -> "BeatDesign":
        arr = self.assignment.copy()
        arr[atom] = to_beat
        return BeatDesign(arr, self.num_beats)


@dataclass(frozen=True)
class CompactnessParams:
    """Feasibility caps per beat: diameter^2 and diameter^2-to-area ratio.

    A None cap disables that criterion. Defaults keep only the shape
    criterion, loosely.
    """

    c1: float | None = None
    c2: float | None = 64.0

    def __post_init__(self):
        if self.c1 is not None and self.c1 <= 0:
            raise BeatPlanError("c1 must be positive when enabled", code="bad-compactness")
        if self.c2 is not None and self.c2 <= 0:
            raise BeatPlanError("c2 must be positive when enabled", code="bad-compactness")

    @property
    def enabled(self) -> bool:
        return self.c1 is not None or self.c2 is not None


@dataclass(frozen=True)
class MoveProposal:
    atom: int
    from_beat: int
    to_beat: int


def objective_value(design: BeatDesign, w_month: np.ndarray) -> float:
    """Sum of squared deviations of beat workloads from their mean.

    A matrix with one column per month averages the objective across the
    columns (the multi-month option for optimizing over a whole horizon).
    """
    w_month = np.asarray(w_month, dtype=float)
    if w_month.ndim == 2:
        return float(np.mean([objective_value(design, w_month[:, j])
                              for j in range(w_month.shape[1])]))
    totals = beat_workload(w_month, design.assignment, design.num_beats)
    return float(((totals - totals.mean()) ** 2).sum())


def workload_variance(design: BeatDesign, w_month: np.ndarray) -> float:
    """The reported statistic: objective divided by the number of beats."""
    return objective_value(design, w_month) / design.num_beats


def _component_size(start: int, members_mask: np.ndarray, neighbors) -> int:
    """Atoms reachable from start while staying inside members_mask."""
    seen = np.zeros(members_mask.size, dtype=bool)
    seen[start] = True
    stack = [start]
    count = 1
    while stack:
        u = stack.pop()
        for v in neighbors[u]:
            if members_mask[v] and not seen[v]:
                seen[v] = True
                stack.append(v)
                count += 1
    return count


def is_contiguous(design: BeatDesign, grid: AtomGrid) -> tuple[bool, int | None]:
    """True iff every beat induces a connected subgraph; else the first bad beat."""
    if len(design) != len(grid):
        raise BeatPlanError("design and grid sizes differ", code="dimension-mismatch")
    for k in range(design.num_beats):
        members = design.members(k)
        mask = design.assignment == k
        if _component_size(int(members[0]), mask, grid.neighbors) != members.size:
            return False, k
    return True, None


def beat_diam_sq(points: np.ndarray) -> float:
    """Largest squared pairwise distance among the given centroid rows."""
    if points.shape[0] < 2:
        return 0.0
    d = points[:, None, :] - points[None, :, :]
    return float((d ** 2).sum(axis=2).max())


def compactness(design: BeatDesign, grid: AtomGrid,
                params: CompactnessParams) -> list[dict]:
    """Per-beat diameter^2, area, and feasibility under the enabled caps."""
    out = []
    for k in range(design.num_beats):
        members = design.members(k)
        diam_sq = beat_diam_sq(grid.centroids[members])
        area = float(grid.areas[members].sum())
        ok = True
        if params.c1 is not None and diam_sq > params.c1:
            ok = False
        if params.c2 is not None and diam_sq > params.c2 * area:
            ok = False
        out.append({"beat": k, "diam_sq": diam_sq, "area": area, "feasible": ok})
    return out


def component_design(grid: AtomGrid) -> BeatDesign:
    """One beat per connected component: the coarsest contiguous design."""
    n = len(grid)
    label = np.full(n, -1, dtype=int)
    k = 0
    for start in range(n):
        if label[start] != -1:
            continue
        stack = [start]
        label[start] = k
        while stack:
            u = stack.pop()
            for v in grid.neighbors[u]:
                if label[v] == -1:
                    label[v] = k
                    stack.append(v)
        k += 1
    return BeatDesign(label, k)


def move_candidates(design: BeatDesign, grid: AtomGrid) -> list[tuple[int, int]]:
    """Distinct (atom, target beat) pairs along the current partition boundary."""
    a = design.assignment
    found = set()
    for u, v in grid.adjacency:
        if a[u] != a[v]:
            found.add((u, int(a[v])))
            found.add((v, int(a[u])))
    return sorted(found)


def move_keeps_source_connected(design: BeatDesign, grid: AtomGrid, atom: int) -> bool:
    """Would the atom's beat stay connected after the atom leaves?"""
    k = int(design.assignment[atom])
    mask = design.assignment == k
    mask = mask.copy()
    mask[atom] = False
    remaining = np.flatnonzero(mask)
    if remaining.size == 0:
        return False
    return _component_size(int(remaining[0]), mask, grid.neighbors) == remaining.size


def boundary_moves(design: BeatDesign, grid: AtomGrid,
                   min_beat_size: int = 1) -> list[MoveProposal]:
    """All single-atom reassignments that keep every beat populated and connected.

    A move (atom: from -> to) qualifies when the atom touches beat `to`, the
    source beat keeps at least min_beat_size atoms, and the source beat stays
    connected without the atom. Returned in (atom, to) order.
    """
    sizes = design.sizes()
    out = []
    for atom, to in move_candidates(design, grid):
        src = int(design.assignment[atom])
        if sizes[src] - 1 < min_beat_size:
            continue
        if not move_keeps_source_connected(design, grid, atom):
            continue
        out.append(MoveProposal(atom=atom, from_beat=src, to_beat=to))
    return out


# ---------------------------------------------------------------------------
# serialization


def design_to_csv(design: BeatDesign, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["atom_id", "beat_id"])
        for i, k in enumerate(design.assignment):
            writer.writerow([i, int(k)])


def design_from_csv(path: str) -> BeatDesign:
    pairs = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            pairs.append((int(row["atom_id"]), int(row["beat_id"])))
    pairs.sort()
    return BeatDesign(np.array([k for _, k in pairs]))


def design_to_geojson(design: BeatDesign, grid: AtomGrid, path: str) -> None:
    features = [{
        "type": "Feature",
        "geometry": mapping(a.cell),
        "properties": {"atom_id": a.id, "beat_id": int(design.assignment[a.id])},
    } for a in grid.atoms]
    for k in range(design.num_beats):
        outline = unary_union([grid.atoms[int(i)].cell for i in design.members(k)])
        features.append({
            "type": "Feature",
            "geometry": mapping(outline),
            "properties": {"beat_id": k, "kind": "beat-outline"},
        })
    with open(path, "w") as f:
        json.dump({"type": "FeatureCollection",
                   "properties": {"units": "miles", "num_beats": design.num_beats},
                   "features": features}, f)
