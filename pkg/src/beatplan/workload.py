"""Call counting and workload estimation on the atom grid.

Workload for an atom-month is its call count times the mean processing time
(clear minus call time). Daily figures divide each month by its calendar
length; annual figures average the twelve monthly rates.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from shapely import STRtree
from shapely.geometry import Point

from . import months
from .errors import BeatPlanError
from .geo import AtomGrid, Projection
from .ingest import CallRecord


@dataclass(frozen=True)
class CountResult:
    counts: np.ndarray        # I x L0 integer call counts
    month_indices: list[int]  # contiguous absolute month range
    unmatched: int
    atom_of_call: np.ndarray  # per input call, atom id or -1
    month_of_call: np.ndarray


@dataclass(frozen=True)
class WorkloadPanel:
    counts: np.ndarray    # I x L0
    workload: np.ndarray  # I x L0 hours, counts * tau
    tau: float            # mean processing time, hours
    month_indices: list[int]
    unmatched: int = 0

    @property
    def num_atoms(self) -> int:
        return self.counts.shape[0]

    def month_column(self, month_index: int) -> np.ndarray:
        return self.workload[:, self.month_indices.index(month_index)]


def project_calls(calls: list[CallRecord], projection: Projection) -> list[CallRecord]:
    """Re-express call locations in the grid's mile frame."""
    if projection.kind == "identity" or not calls:
        return calls
    xs, ys = projection.forward([c.lon for c in calls], [c.lat for c in calls])
    return [CallRecord(c.call_id, float(x), float(y), c.call_time, c.clear_time, c.category)
            for c, x, y in zip(calls, xs, ys)]


def count_calls(grid: AtomGrid, calls: list[CallRecord],
                utc_offset_hours: float = months.DEFAULT_UTC_OFFSET_HOURS) -> CountResult:
    """Assign each call to the atom containing it and bucket by local month.

    Calls outside every atom are tallied as unmatched. A call exactly on a
    shared cell edge goes to the atom with the smaller id.
    """
    n = len(grid)
    if not calls:
        return CountResult(np.zeros((n, 0), dtype=int), [], 0,
                           np.empty(0, dtype=int), np.empty(0, dtype=int))
    month_idx = np.array([months.month_of(c.call_time, utc_offset_hours) for c in calls])
    lo, hi = int(month_idx.min()), int(month_idx.max())
    month_indices = list(range(lo, hi + 1))

    tree = STRtree([a.cell for a in grid.atoms])
    points = [Point(c.lon, c.lat) for c in calls]
    pairs = tree.query(points, predicate="covered_by")
    atom_of_call = np.full(len(calls), -1, dtype=int)
    if pairs.size:
        # several cells can cover an edge point; keep the smallest atom id
        order = np.lexsort((pairs[1], pairs[0]))
        call_ids, atom_ids = pairs[0][order], pairs[1][order]
        first = np.concatenate(([True], call_ids[1:] != call_ids[:-1]))
        atom_of_call[call_ids[first]] = atom_ids[first]

    counts = np.zeros((n, len(month_indices)), dtype=int)
    matched = atom_of_call >= 0
    np.add.at(counts, (atom_of_call[matched], month_idx[matched] - lo), 1)
    return CountResult(counts=counts, month_indices=month_indices,
                       unmatched=int((~matched).sum()),
                       atom_of_call=atom_of_call, month_of_call=month_idx)


def estimate_workload(counted: CountResult, calls: list[CallRecord],
                      per_category: bool = False) -> WorkloadPanel:
    """Convert counts to hours using the mean processing time.

    per_category replaces the single global mean with each call's
    category mean, summed per atom-month (sensitivity analysis only; the
    count-times-tau identity then no longer holds).
    """
    if not calls:
        raise BeatPlanError("no calls; tau undefined", code="empty-calls")
    durations = np.array([c.processing_hours for c in calls])
    tau = float(durations.mean())
    if per_category:
        cats = np.array([c.category for c in calls])
        workload = np.zeros(counted.counts.shape)
        lo = counted.month_indices[0]
        for cat in np.unique(cats):
            mask = cats == cat
            cat_tau = float(durations[mask].mean())
            sel = mask & (counted.atom_of_call >= 0)
            np.add.at(workload, (counted.atom_of_call[sel], counted.month_of_call[sel] - lo),
                      cat_tau)
    else:
        workload = counted.counts * tau
    return WorkloadPanel(counts=counted.counts, workload=workload, tau=tau,
                         month_indices=counted.month_indices, unmatched=counted.unmatched)


def beat_workload(w_month: np.ndarray, assignment: np.ndarray, num_beats: int) -> np.ndarray:
    """Sum a per-atom workload vector into per-beat totals."""
    w_month = np.asarray(w_month, dtype=float)
    assignment = np.asarray(assignment)
    if w_month.shape != assignment.shape:
        raise BeatPlanError("workload vector and assignment length differ",
                            code="dimension-mismatch",
                            context={"workload": w_month.shape[0], "atoms": assignment.shape[0]})
    if assignment.min() < 0 or assignment.max() >= num_beats:
        raise BeatPlanError("assignment contains a beat id out of range",
                            code="bad-beat-id", context={"num_beats": num_beats})
    return np.bincount(assignment, weights=w_month, minlength=num_beats)


def hours_per_day(workload: np.ndarray, month_indices: list[int], year: int) -> np.ndarray:
    """Per-atom average hours/day over the year's months present in the matrix."""
    cols = [k for k, m in enumerate(month_indices) if months.year_month(m)[0] == year]
    if not cols:
        raise BeatPlanError(f"no months of {year} in panel", code="year-not-covered",
                            context={"months": month_indices})
    daily = [workload[:, k] / months.days_in_month(month_indices[k]) for k in cols]
    return np.mean(daily, axis=0)


# ---------------------------------------------------------------------------
# serialization


def panel_to_csv(panel: WorkloadPanel, path: str, sidecar_path: str | None = None) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["atom_id", "month", "count", "workload_hours"])
        for i in range(panel.num_atoms):
            for k, m in enumerate(panel.month_indices):
                writer.writerow([i, m, int(panel.counts[i, k]), repr(float(panel.workload[i, k]))])
    if sidecar_path:
        with open(sidecar_path, "w") as f:
            json.dump({"tau_hours": panel.tau, "unmatched": panel.unmatched}, f)


def panel_from_csv(path: str, sidecar_path: str | None = None) -> WorkloadPanel:
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append((int(row["atom_id"]), int(row["month"]), int(row["count"]),
                         float(row["workload_hours"])))
    month_indices = sorted({r[1] for r in rows})
    n = max(r[0] for r in rows) + 1
    counts = np.zeros((n, len(month_indices)), dtype=int)
    workload = np.zeros((n, len(month_indices)))
    mpos = {m: k for k, m in enumerate(month_indices)}
    for i, m, c, w in rows:
        counts[i, mpos[m]] = c
        workload[i, mpos[m]] = w
    tau, unmatched = 0.0, 0
    if sidecar_path:
        with open(sidecar_path) as f:
            side = json.load(f)
        tau, unmatched = side["tau_hours"], side["unmatched"]
    elif counts.sum() > 0:
        tau = float(workload.sum() / counts.sum())
    return WorkloadPanel(counts=counts, workload=workload, tau=tau,
                         month_indices=month_indices, unmatched=unmatched)
