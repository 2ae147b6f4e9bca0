"""Heuristic search over beat designs: greedy splitting and simulated annealing.

Greedy expansion repeatedly halves the busiest beat with 2-means on atom
centroids. Annealing walks single-atom boundary moves under Metropolis
acceptance with geometric cooling; every visited design stays contiguous,
populated, and (when enabled) compact.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BeatPlanError
from .geo import AtomGrid
from .partition import (
    BeatDesign,
    CompactnessParams,
    beat_diam_sq,
    is_contiguous,
    move_candidates,
    move_keeps_source_connected,
    objective_value,
    workload_variance,
)
from .workload import beat_workload

logger = logging.getLogger(__name__)

FARTHEST_PAIR_EXACT_LIMIT = 4000


@dataclass(frozen=True)
class AnnealConfig:
    t0: float
    iterations: int
    seed: int
    gamma: float = 0.999
    fixed_temperature: bool = False
    compactness: CompactnessParams = field(default_factory=CompactnessParams)
    min_beat_size: int = 1
    target_month: int | None = None
    record_designs: bool = False  # keep per-iteration assignments in the trace

    def __post_init__(self):
        if self.t0 <= 0:
            raise BeatPlanError("initial temperature must be positive", code="bad-anneal-config")
        if not (0 < self.gamma <= 1):
            raise BeatPlanError("gamma must be in (0, 1]", code="bad-anneal-config")
        if self.iterations < 0:
            raise BeatPlanError("iterations must be non-negative", code="bad-anneal-config")


@dataclass
class SearchTrace:
    """Per-iteration annealing log plus the best design seen."""

    iterations: list[int] = field(default_factory=list)
    z_current: list[float] = field(default_factory=list)
    z_best: list[float] = field(default_factory=list)
    accepted: list[bool] = field(default_factory=list)
    temperature: list[float] = field(default_factory=list)
    designs: list[np.ndarray] = field(default_factory=list)  # only when recorded
    best_design: BeatDesign | None = None
    stopped_early: bool = False

    def append(self, iteration: int, z_cur: float, z_best: float, acc: bool, temp: float) -> None:
        self.iterations.append(iteration)
        self.z_current.append(z_cur)
        self.z_best.append(z_best)
        self.accepted.append(acc)
        self.temperature.append(temp)


def accept_prob(z_new: float, z_old: float, temperature: float) -> float:
    """Metropolis acceptance: 1 for improvements, exp(-increase/T) otherwise."""
    if temperature <= 0:
        raise BeatPlanError("temperature must be positive", code="bad-temperature")
    if z_new < z_old:
        return 1.0
    return math.exp(-(z_new - z_old) / temperature)


# ---------------------------------------------------------------------------
# k-means splitting


def _farthest_pair(points: np.ndarray) -> tuple[int, int]:
    """Indices of the most separated pair; sampled above the exact-size limit."""
    n = points.shape[0]
    if n > FARTHEST_PAIR_EXACT_LIMIT:
        step = math.ceil(n / FARTHEST_PAIR_EXACT_LIMIT)
        sample = np.arange(0, n, step)
        i, j = _farthest_pair(points[sample])
        return int(sample[i]), int(sample[j])
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    flat = int(np.argmax(d2))
    return flat // n, flat % n


def _beat_components(members: np.ndarray, in_set: np.ndarray, neighbors) -> list[np.ndarray]:
    comps = []
    seen = np.zeros(in_set.size, dtype=bool)
    for start in members:
        start = int(start)
        if seen[start] or not in_set[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = [start]
        while stack:
            u = stack.pop()
            for v in neighbors[u]:
                if in_set[v] and not seen[v]:
                    seen[v] = True
                    stack.append(v)
                    comp.append(v)
        comps.append(np.array(sorted(comp)))
    return comps


def _repair_contiguity(members: np.ndarray, labels: np.ndarray, grid: AtomGrid) -> np.ndarray:
    """Reattach disconnected cluster fragments to their largest adjacent component.

    labels maps each member atom (global id) to 0/1. The largest component of
    each cluster anchors it; any other fragment joins the cluster of the
    biggest component it touches. Fragments with no neighbors inside the beat
    stay put (possible only when the input beat itself was disconnected).
    """
    labels = dict(zip(members.tolist(), labels.tolist()))
    member_set = set(members.tolist())
    n = len(grid)
    for _ in range(len(members)):
        in_cluster = {c: np.zeros(n, dtype=bool) for c in (0, 1)}
        for atom, c in labels.items():
            in_cluster[c][atom] = True
        comps: list[tuple[int, np.ndarray]] = []
        for c in (0, 1):
            cluster_members = np.array(sorted(a for a, lab in labels.items() if lab == c))
            if cluster_members.size:
                comps.extend((c, comp) for comp in
                             _beat_components(cluster_members, in_cluster[c], grid.neighbors))
        per_cluster = {0: [], 1: []}
        for c, comp in comps:
            per_cluster[c].append(comp)
        if all(len(v) <= 1 for v in per_cluster.values()):
            break
        # main component per cluster: the largest, ties to the one with the smallest atom
        mains = {c: max(group, key=lambda comp: (comp.size, -int(comp[0])))
                 for c, group in per_cluster.items() if group}
        fragments = [(c, comp) for c, comp in comps if comp is not mains.get(c)]
        fragments.sort(key=lambda item: (item[1].size, int(item[1][0])))
        moved = False
        for c, frag in fragments:
            # components of the same cluster never touch, so any adjacent
            # component belongs to the other cluster
            adjacent = []
            for cc, comp in comps:
                if comp is frag:
                    continue
                comp_set = set(comp.tolist())
                touches = any((int(v) in comp_set) for u in frag for v in grid.neighbors[int(u)]
                              if int(v) in member_set)
                if touches:
                    adjacent.append((cc, comp))
            if not adjacent:
                continue
            target_c = max(adjacent, key=lambda item: (item[1].size, -int(item[1][0])))[0]
            for a in frag:
                labels[int(a)] = target_c
            moved = True
            break
        if not moved:
            break
    return np.array([labels[int(a)] for a in members])


def kmeans_split(atom_ids: np.ndarray, grid: AtomGrid) -> tuple[np.ndarray, np.ndarray]:
    """Split one beat's atoms into two sets with Lloyd's 2-means on centroids.

    Initialization is the farthest-apart atom pair; ties in nearest-center go
    to the cluster seeded by the lower atom id. A repair pass restores
    contiguity if the geometric split disconnects a cluster.
    """
    ids = np.array(sorted(int(a) for a in atom_ids))
    if ids.size < 2:
        raise BeatPlanError("beat of size 1 is unsplittable", code="unsplittable-beat")
    pts = grid.centroids[ids]
    i0, j0 = _farthest_pair(pts)
    if i0 > j0:
        i0, j0 = j0, i0
    centers = np.stack([pts[i0], pts[j0]])
    assign = None
    for _ in range(100):
        d0 = ((pts - centers[0]) ** 2).sum(axis=1)
        d1 = ((pts - centers[1]) ** 2).sum(axis=1)
        new_assign = np.where(d0 < d1, 0, 1).astype(int)
        # exact distance ties occur only in symmetric layouts; alternating
        # them in id order keeps the split even instead of dumping the whole
        # midline into one cluster
        ties = np.flatnonzero(d0 == d1)
        new_assign[ties] = np.arange(ties.size) % 2
        if (new_assign == 0).all() or (new_assign == 1).all():
            # degenerate collapse: keep the seeds apart
            new_assign[i0] = 0
            new_assign[j0] = 1
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in (0, 1):
            centers[c] = pts[assign == c].mean(axis=0)
    assign = _repair_contiguity(ids, assign, grid)
    return ids[assign == 0], ids[assign == 1]


# ---------------------------------------------------------------------------
# greedy expansion


@dataclass
class GreedyResult:
    designs: list[BeatDesign]
    elbow: list[tuple[int, float]]  # (K, objective / K)
    diagnostic: str | None = None

    @property
    def final(self) -> BeatDesign:
        return self.designs[-1]


def greedy_expand(design: BeatDesign, grid: AtomGrid, w_month: np.ndarray,
                  k_target: int) -> GreedyResult:
    """Repeatedly 2-means-split the busiest beat until reaching k_target beats.

    The half containing the beat's lowest atom id keeps the old beat id; the
    other half becomes beat K. Emits the (K, variance) elbow curve over the
    whole sequence, starting at the input design. A matrix of monthly columns
    picks the busiest beat by mean workload and averages the elbow variance.
    """
    if k_target < design.num_beats:
        raise BeatPlanError("k_target below current beat count", code="bad-k-target",
                            context={"current": design.num_beats, "target": k_target})
    ok, bad = is_contiguous(design, grid)
    if not ok:
        raise BeatPlanError(f"initial design beat {bad} is not contiguous",
                            code="not-contiguous", context={"beat": bad})
    w_pick = np.asarray(w_month, dtype=float)
    if w_pick.ndim == 2:
        w_pick = w_pick.mean(axis=1)
    designs = [design]
    elbow = [(design.num_beats, workload_variance(design, w_month))]
    diagnostic = None
    current = design
    while current.num_beats < k_target:
        totals = beat_workload(w_pick, current.assignment, current.num_beats)
        worst = int(np.argmax(totals))
        members = current.members(worst)
        if members.size < 2:
            diagnostic = (f"beat {worst} has the largest workload but only one atom; "
                          f"stopped at K={current.num_beats}")
            logger.warning(diagnostic)
            break
        part_a, part_b = kmeans_split(members, grid)
        if part_b.size and (part_a.size == 0 or part_b.min() < part_a.min()):
            part_a, part_b = part_b, part_a
        arr = current.assignment.copy()
        arr[part_b] = current.num_beats
        current = BeatDesign(arr, current.num_beats + 1)
        designs.append(current)
        elbow.append((current.num_beats, workload_variance(current, w_month)))
    return GreedyResult(designs=designs, elbow=elbow, diagnostic=diagnostic)


# ---------------------------------------------------------------------------
# simulated annealing


class _AnnealState:
    """Mutable assignment with incremental beat totals, sizes and compactness.

    Workloads are carried as an atoms x months matrix (a single vector becomes
    one column); the objective averages over the columns.
    """

    def __init__(self, design: BeatDesign, grid: AtomGrid, w_month: np.ndarray,
                 params: CompactnessParams):
        self.grid = grid
        w = np.asarray(w_month, dtype=float)
        self.w = w[:, None] if w.ndim == 1 else w
        self.assignment = design.assignment.copy()
        self.k = design.num_beats
        self.totals = np.stack([beat_workload(self.w[:, j], self.assignment, self.k)
                                for j in range(self.w.shape[1])], axis=1)
        self.sizes = design.sizes().astype(int)
        self.params = params
        self.diam_sq = np.zeros(self.k)
        self.area = np.zeros(self.k)
        if params.enabled:
            for kk in range(self.k):
                members = np.flatnonzero(self.assignment == kk)
                self.diam_sq[kk] = beat_diam_sq(grid.centroids[members])
                self.area[kk] = grid.areas[members].sum()

    def objective(self) -> float:
        return float(((self.totals - self.totals.mean(axis=0)) ** 2).sum(axis=0).mean())

    def objective_after(self, atom: int, to: int) -> float:
        src = self.assignment[atom]
        t = self.totals.copy()
        t[src] -= self.w[atom]
        t[to] += self.w[atom]
        return float(((t - t.mean(axis=0)) ** 2).sum(axis=0).mean())

    def compact_after(self, atom: int, to: int) -> bool:
        if not self.params.enabled:
            return True
        src = int(self.assignment[atom])
        c = self.grid.centroids
        gain_members = np.flatnonzero(self.assignment == to)
        gain_diam = max(self.diam_sq[to],
                        float(((c[gain_members] - c[atom]) ** 2).sum(axis=1).max()))
        gain_area = self.area[to] + self.grid.areas[atom]
        src_members = np.flatnonzero(self.assignment == src)
        src_members = src_members[src_members != atom]
        src_diam = beat_diam_sq(c[src_members])
        src_area = self.area[src] - self.grid.areas[atom]
        for diam, area in ((gain_diam, gain_area), (src_diam, src_area)):
            if self.params.c1 is not None and diam > self.params.c1:
                return False
            if self.params.c2 is not None and diam > self.params.c2 * area:
                return False
        return True

    def apply(self, atom: int, to: int) -> None:
        src = int(self.assignment[atom])
        self.assignment[atom] = to
        self.totals[src] -= self.w[atom]
        self.totals[to] += self.w[atom]
        self.sizes[src] -= 1
        self.sizes[to] += 1
        if self.params.enabled:
            c = self.grid.centroids
            for kk in (src, to):
                members = np.flatnonzero(self.assignment == kk)
                self.diam_sq[kk] = beat_diam_sq(c[members])
                self.area[kk] = self.grid.areas[members].sum()

    def design(self) -> BeatDesign:
        return BeatDesign(self.assignment.copy(), self.k)


def anneal(initial: BeatDesign, grid: AtomGrid, w_month: np.ndarray,
           config: AnnealConfig) -> tuple[BeatDesign, SearchTrace]:
    """Metropolis walk over single-atom boundary moves.

    Each iteration draws one move uniformly from the feasible move set
    (contiguity, min beat size, compactness), evaluates the acceptance
    probability against a uniform draw, and cools geometrically. Fully
    deterministic for a given seed.
    """
    ok, bad = is_contiguous(initial, grid)
    if not ok:
        raise BeatPlanError(f"initial design beat {bad} is not contiguous",
                            code="not-contiguous", context={"beat": bad})
    state = _AnnealState(initial, grid, w_month, config.compactness)
    if config.compactness.enabled:
        bad_beats = [int(k) for k in range(state.k)
                     if (config.compactness.c1 is not None and state.diam_sq[k] > config.compactness.c1)
                     or (config.compactness.c2 is not None and state.diam_sq[k] > config.compactness.c2 * state.area[k])]
        if bad_beats:
            raise BeatPlanError(f"initial design violates compactness in beats {bad_beats}",
                                code="not-compact", context={"beats": bad_beats})
    rng = np.random.default_rng(config.seed)
    trace = SearchTrace()
    z_cur = state.objective()
    z_best = z_cur
    best = initial
    temp = config.t0
    design_view = BeatDesign(state.assignment.copy(), state.k)
    for it in range(config.iterations):
        candidates = move_candidates(design_view, grid)
        move = None
        z_new = None
        while candidates:
            pick = int(rng.integers(len(candidates)))
            atom, to = candidates[pick]
            candidates[pick] = candidates[-1]
            candidates.pop()
            if state.sizes[state.assignment[atom]] - 1 < config.min_beat_size:
                continue
            if not move_keeps_source_connected(design_view, grid, atom):
                continue
            if not state.compact_after(atom, to):
                continue
            move = (atom, to)
            z_new = state.objective_after(atom, to)
            break
        if move is None:
            trace.stopped_early = True
            break
        p = accept_prob(z_new, z_cur, temp)
        accepted = p >= rng.random()
        if accepted:
            state.apply(*move)
            design_view = BeatDesign(state.assignment.copy(), state.k)
            z_cur = z_new
            if z_cur < z_best:
                z_best = z_cur
                best = design_view
        trace.append(it, z_cur, z_best, accepted, temp)
        if config.record_designs:
            trace.designs.append(state.assignment.copy())
        if not config.fixed_temperature:
            temp *= config.gamma
    trace.best_design = best
    return best, trace


def anneal_multi(initial: BeatDesign, grid: AtomGrid, w_month: np.ndarray,
                 config: AnnealConfig, chains: int = 1) -> tuple[BeatDesign, list[SearchTrace]]:
    """Run independent chains seeded seed, seed+1, ...; return the overall best."""
    if chains < 1:
        raise BeatPlanError("chains must be at least 1", code="bad-anneal-config")
    import dataclasses

    best = None
    best_z = math.inf
    traces = []
    for c in range(chains):
        chain_cfg = dataclasses.replace(config, seed=config.seed + c)
        design, trace = anneal(initial, grid, w_month, chain_cfg)
        traces.append(trace)
        z = objective_value(design, w_month)
        if z < best_z:
            best, best_z = design, z
    return best, traces


def trace_to_csv(trace: SearchTrace, path: str) -> None:
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "z_current", "z_best", "accepted", "temperature"])
        for row in zip(trace.iterations, trace.z_current, trace.z_best,
                       trace.accepted, trace.temperature):
            writer.writerow([row[0], repr(row[1]), repr(row[2]), int(row[3]), repr(row[4])])
