"""Shared fixtures and independent oracles for the test suite.

The oracles here deliberately avoid the package's own graph routines:
contiguity is checked by set-based flood fill over explicit coordinate
neighborhoods, and partition enumeration works on bitmasks.
"""

from __future__ import annotations

import numpy as np
import pytest
from shapely.geometry import box

from beatplan.geo import atomize


@pytest.fixture(scope="session")
def grid4x4():
    return atomize(box(0, 0, 4, 4), 1.0, "square-rook")


@pytest.fixture(scope="session")
def grid3x3():
    return atomize(box(0, 0, 3, 3), 1.0, "square-rook")


@pytest.fixture(scope="session")
def grid5x5():
    return atomize(box(0, 0, 5, 5), 1.0, "square-rook")


def rect_grid(rows: int, cols: int, side: float = 1.0):
    return atomize(box(0, 0, cols * side, rows * side), side, "square-rook")


# ---------------------------------------------------------------------------
# independent oracles


def floodfill_connected(cells: set[tuple[int, int]]) -> bool:
    """Set-based flood fill over (row, col) coordinates; empty sets count as
    disconnected."""
    if not cells:
        return False
    seen = set()
    frontier = [next(iter(sorted(cells)))]
    while frontier:
        r, c = frontier.pop()
        if (r, c) in seen:
            continue
        seen.add((r, c))
        for nb in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            if nb in cells and nb not in seen:
                frontier.append(nb)
    return seen == cells


def assignment_contiguous_oracle(assignment: np.ndarray, coords: list[tuple[int, int]],
                                 num_beats: int) -> bool:
    """Every beat's coordinate set passes the flood fill."""
    for k in range(num_beats):
        cells = {coords[i] for i in np.flatnonzero(assignment == k)}
        if not floodfill_connected(cells):
            return False
    return True


def mask_connected(mask: int, rows: int, cols: int) -> bool:
    """Bitmask flood fill on a rows x cols rook grid (bit i = cell i, row-major)."""
    if mask == 0:
        return False
    start = (mask & -mask).bit_length() - 1
    seen = 1 << start
    frontier = [start]
    while frontier:
        u = frontier.pop()
        r, c = divmod(u, cols)
        for rr, cc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            if 0 <= rr < rows and 0 <= cc < cols:
                v = rr * cols + cc
                bit = 1 << v
                if mask & bit and not seen & bit:
                    seen |= bit
                    frontier.append(v)
    return seen == mask


def max_flow_beat_feasible(members, sink, neighbors, q) -> bool:
    """Independent flow oracle: can every non-sink member push one unit to the
    sink through in-beat edges under the capacity bound q?

    Mirrors the exported single-sink flow system: source feeds each non-sink
    member 1 unit, in-beat edges carry up to q-1, and the sink drains at most
    q-1 into a collector. Uses scipy's max-flow, not the package's graph code.
    """
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import maximum_flow

    members = sorted(int(m) for m in members)
    if len(members) > q:
        return False
    pos = {a: i + 1 for i, a in enumerate(members)}
    collector = len(members) + 1
    rows, cols, caps = [], [], []
    for a in members:
        if a != sink:
            rows.append(0)
            cols.append(pos[a])
            caps.append(1)
    for a in members:
        for b in neighbors[a]:
            if int(b) in pos:
                rows.append(pos[a])
                cols.append(pos[int(b)])
                caps.append(q - 1)
    rows.append(pos[sink])
    cols.append(collector)
    caps.append(q - 1)
    graph = csr_matrix((caps, (rows, cols)), shape=(collector + 1, collector + 1))
    need = len(members) - 1
    if need == 0:
        return True
    return maximum_flow(graph, 0, collector).flow_value >= need


def contiguous_two_partitions(rows: int, cols: int) -> list[int]:
    """Bitmasks S (0 in S's complement's lowest cell... canonical: bit0 not set)
    such that both S and its complement are non-empty and connected."""
    n = rows * cols
    full = (1 << n) - 1
    out = []
    for mask in range(1, full):
        if mask & 1:
            continue  # canonical form: cell 0 stays in the complement
        if mask_connected(mask, rows, cols) and mask_connected(full ^ mask, rows, cols):
            out.append(mask)
    return out
