"""Evaluation outputs: per-beat workload tables, elbow curves, heat surfaces.

Tables report hours/day per beat for each (design, year) pair, with the
variance footer computed as the balance objective divided by the beat count.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from shapely.geometry import mapping

from .errors import BeatPlanError
from .geo import AtomGrid
from .partition import BeatDesign
from .workload import beat_workload, hours_per_day


@dataclass(frozen=True)
class BeatColumn:
    label: str
    year: int
    per_beat: np.ndarray  # hours/day per beat id
    variance: float
    total: float


@dataclass(frozen=True)
class BeatTable:
    columns: list[BeatColumn]

    @property
    def max_beats(self) -> int:
        return max(c.per_beat.size for c in self.columns)

    def column(self, label: str, year: int) -> BeatColumn:
        for c in self.columns:
            if c.label == label and c.year == year:
                return c
        raise KeyError((label, year))


def beat_table(designs: list[tuple[str, BeatDesign]], workload: np.ndarray,
               month_indices: list[int], years: list[int]) -> BeatTable:
    """Hours/day per beat and the variance footer for each design and year."""
    columns = []
    for label, design in designs:
        if len(design) != workload.shape[0]:
            raise BeatPlanError(f"design {label!r} does not match the workload matrix",
                                code="dimension-mismatch")
        for year in years:
            per_atom = hours_per_day(workload, month_indices, year)
            per_beat = beat_workload(per_atom, design.assignment, design.num_beats)
            variance = float(((per_beat - per_beat.mean()) ** 2).sum()) / design.num_beats
            columns.append(BeatColumn(label=label, year=year, per_beat=per_beat,
                                      variance=variance, total=float(per_beat.sum())))
    return BeatTable(columns=columns)


def beat_table_to_csv(table: BeatTable, path: str) -> None:
    headers = ["beat_number"] + [f"{c.label}_{c.year}" for c in table.columns]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(headers)
        for b in range(table.max_beats):
            row = [b + 1]
            for c in table.columns:
                row.append(f"{c.per_beat[b]:.2f}" if b < c.per_beat.size else "N/A")
            writer.writerow(row)
        writer.writerow(["variance"] + [f"{c.variance:.2f}" for c in table.columns])
        writer.writerow(["total"] + [f"{c.total:.2f}" for c in table.columns])


def elbow_curve(elbow: list[tuple[int, float]], path: str | None = None) -> list[dict]:
    """One (K, variance) row per greedy step; written as CSV when a path is given."""
    rows = [{"num_beats": k, "variance": v} for k, v in elbow]
    if path:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["num_beats", "variance"])
            for r in rows:
                writer.writerow([r["num_beats"], repr(float(r["variance"]))])
    return rows


def heat_surface(values: np.ndarray, grid: AtomGrid, path: str | None = None,
                 value_name: str = "value") -> dict:
    """GeoJSON with one feature per atom carrying its surface value verbatim."""
    values = np.asarray(values, dtype=float)
    if values.shape != (len(grid),):
        raise BeatPlanError("surface length must equal atom count", code="dimension-mismatch")
    doc = {
        "type": "FeatureCollection",
        "properties": {"units": "miles", "value_name": value_name},
        "features": [{
            "type": "Feature",
            "geometry": mapping(a.cell),
            "properties": {"atom_id": a.id, value_name: float(values[a.id])},
        } for a in grid.atoms],
    }
    if path:
        with open(path, "w") as f:
            json.dump(doc, f)
    return doc


def write_summary(path: str, table: BeatTable | None = None,
                  elbow: list[tuple[int, float]] | None = None,
                  notes: list[str] | None = None) -> None:
    """Single Markdown report tying the run's artifacts together."""
    lines = ["# Beat design summary", ""]
    if table is not None:
        header = "| beat | " + " | ".join(f"{c.label} {c.year}" for c in table.columns) + " |"
        sep = "|" + "---|" * (len(table.columns) + 1)
        lines += [header, sep]
        for b in range(table.max_beats):
            cells = [f"{c.per_beat[b]:.2f}" if b < c.per_beat.size else "N/A"
                     for c in table.columns]
            lines.append(f"| {b + 1} | " + " | ".join(cells) + " |")
        lines.append("| variance | " + " | ".join(f"{c.variance:.2f}" for c in table.columns) + " |")
        lines.append("| total | " + " | ".join(f"{c.total:.2f}" for c in table.columns) + " |")
        lines.append("")
    if elbow:
        lines += ["## Variance by number of beats", ""]
        lines += [f"- K={k}: {v:.2f}" for k, v in elbow]
        lines.append("")
    for note in notes or []:
        lines.append(f"> {note}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
