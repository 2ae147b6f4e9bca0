"""City atomization: uniform grids clipped to a boundary, plus the adjacency graph.

Coordinates are planar miles. Lon/lat input is projected with a local
azimuthal equal-area projection centered on the boundary centroid; inputs
already in miles pass through an identity projection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Polygon, MultiPolygon, box, mapping, shape
from shapely.ops import unary_union
from shapely.prepared import prep

from .errors import BeatPlanError

EARTH_RADIUS_MILES = 3958.7613

GRID_KINDS = ("square-rook", "square-queen", "hex")

# intersection below this fraction of the full cell area is dropped as a sliver
INCLUSION_FRACTION = 1e-4

# pointy-top hexagon: axial neighbor offsets
_HEX_OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1))


@dataclass(frozen=True)
class Projection:
    """Mapping from input coordinates to the planar mile frame.

    kind "laea": Lambert azimuthal equal-area centered at (center_lon,
    center_lat), output in miles. kind "identity": input is already planar
    miles and passes through unchanged.
    """

    kind: str = "identity"
    center_lon: float = 0.0
    center_lat: float = 0.0
    radius: float = EARTH_RADIUS_MILES

    def forward(self, lon, lat):
        if self.kind == "identity":
            return np.asarray(lon, dtype=float), np.asarray(lat, dtype=float)
        lon = np.radians(np.asarray(lon, dtype=float))
        lat = np.radians(np.asarray(lat, dtype=float))
        lon0 = math.radians(self.center_lon)
        lat0 = math.radians(self.center_lat)
        dlon = lon - lon0
        k = np.sqrt(2.0 / (1.0 + np.sin(lat0) * np.sin(lat) + np.cos(lat0) * np.cos(lat) * np.cos(dlon)))
        x = self.radius * k * np.cos(lat) * np.sin(dlon)
        y = self.radius * k * (np.cos(lat0) * np.sin(lat) - np.sin(lat0) * np.cos(lat) * np.cos(dlon))
        return x, y

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "center_lon": self.center_lon,
            "center_lat": self.center_lat,
            "radius_miles": self.radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Projection":
        return cls(
            kind=d.get("kind", "identity"),
            center_lon=d.get("center_lon", 0.0),
            center_lat=d.get("center_lat", 0.0),
            radius=d.get("radius_miles", EARTH_RADIUS_MILES),
        )


@dataclass(frozen=True)
class Atom:
    """One grid cell clipped to the city boundary."""

    id: int
    cell: Polygon | MultiPolygon
    centroid: tuple[float, float]
    area: float
    grid_coord: tuple[int, int]  # (row, col) for square, (q, r) for hex


class AtomGrid:
    """The atomized city: cells, geometry arrays, and the adjacency graph.

    Immutable after construction; derived arrays (centroids, areas,
    neighbor lists) are built once and shared read-only.
    """

    def __init__(self, atoms: list[Atom], side_length: float, grid_kind: str,
                 adjacency: list[tuple[int, int]], projection: Projection):
        self.atoms = atoms
        self.side_length = side_length
        self.grid_kind = grid_kind
        self.adjacency = sorted(tuple(sorted(e)) for e in adjacency)
        self.projection = projection
        self.centroids = np.array([a.centroid for a in atoms], dtype=float).reshape(len(atoms), 2)
        self.areas = np.array([a.area for a in atoms], dtype=float)
        self.neighbors: list[np.ndarray] = _neighbor_lists(len(atoms), self.adjacency)

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def edges(self) -> np.ndarray:
        return np.array(self.adjacency, dtype=int).reshape(len(self.adjacency), 2)

    def total_area(self) -> float:
        return float(self.areas.sum())


def _neighbor_lists(n: int, edges: list[tuple[int, int]]) -> list[np.ndarray]:
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    return [np.array(sorted(v), dtype=int) for v in nbrs]


def _as_boundary_geometry(boundary) -> MultiPolygon | Polygon:
    """Accepts a shapely geometry or an iterable of polygons; returns their union."""
    if isinstance(boundary, (Polygon, MultiPolygon)):
        geom = boundary
    else:
        geom = unary_union(list(boundary))
    if geom.is_empty or geom.area <= 0:
        raise BeatPlanError("boundary has zero area", code="degenerate-boundary")
    return geom


def _square_cells(geom, side: float):
    minx, miny, maxx, maxy = geom.bounds
    ncols = max(1, math.ceil((maxx - minx) / side - 1e-12))
    nrows = max(1, math.ceil((maxy - miny) / side - 1e-12))
    for row in range(nrows):
        for col in range(ncols):
            x0 = minx + col * side
            y0 = miny + row * side
            yield (row, col), box(x0, y0, x0 + side, y0 + side)


def _hex_polygon(cx: float, cy: float, s: float) -> Polygon:
    pts = [(cx + s * math.cos(math.radians(30 + 60 * k)),
            cy + s * math.sin(math.radians(30 + 60 * k))) for k in range(6)]
    return Polygon(pts)


def _hex_cells(geom, s: float):
    # pointy-top axial layout: center(q, r) = (sqrt3*s*(q + r/2), 1.5*s*r)
    minx, miny, maxx, maxy = geom.bounds
    w = math.sqrt(3.0) * s
    r_lo = math.floor((miny - s) / (1.5 * s))
    r_hi = math.ceil((maxy + s) / (1.5 * s))
    for r in range(r_lo, r_hi + 1):
        cy = 1.5 * s * r
        q_lo = math.floor((minx - w) / w - r / 2.0)
        q_hi = math.ceil((maxx + w) / w - r / 2.0)
        for q in range(q_lo, q_hi + 1):
            cx = w * (q + r / 2.0)
            yield (q, r), _hex_polygon(cx, cy, s)


def atomize(boundary, side_length: float, grid_kind: str = "square-rook",
            projection: Projection | None = None) -> AtomGrid:
    """Clip a uniform grid of cells to the boundary and build the adjacency graph.

    Cells keeping less than INCLUSION_FRACTION of their full area are dropped.
    Atom ids follow row-major scan order over surviving cells, so identical
    inputs always produce identical grids.
    """
    if side_length <= 0:
        raise BeatPlanError("side_length must be positive", code="bad-side-length")
    if grid_kind not in GRID_KINDS:
        raise BeatPlanError(f"unknown grid_kind {grid_kind!r}", code="bad-grid-kind",
                            context={"allowed": list(GRID_KINDS)})
    geom = _as_boundary_geometry(boundary)
    prepared = prep(geom)

    if grid_kind == "hex":
        cells = _hex_cells(geom, side_length)
        full_area = 1.5 * math.sqrt(3.0) * side_length ** 2
        scan_key = lambda coord: (coord[1], coord[0])  # (r, q)
    else:
        cells = _square_cells(geom, side_length)
        full_area = side_length ** 2
        scan_key = lambda coord: coord  # (row, col)

    kept: list[tuple[tuple[int, int], Polygon]] = []
    for coord, cell in cells:
        if not prepared.intersects(cell):
            continue
        clipped = cell.intersection(geom)
        if clipped.is_empty or clipped.area < INCLUSION_FRACTION * full_area:
            continue
        kept.append((coord, clipped))
    if not kept:
        raise BeatPlanError("no atoms produced", code="no-atoms")

    kept.sort(key=lambda item: scan_key(item[0]))
    atoms = []
    for i, (coord, clipped) in enumerate(kept):
        c = clipped.centroid
        atoms.append(Atom(id=i, cell=clipped, centroid=(c.x, c.y), area=clipped.area,
                          grid_coord=coord))
    adjacency = build_adjacency(atoms, grid_kind)
    return AtomGrid(atoms, side_length, grid_kind, adjacency,
                    projection or Projection())


def build_adjacency(atoms: list[Atom], grid_kind: str) -> list[tuple[int, int]]:
    """Edges between surviving cells that are neighbors in the uniform grid."""
    index = {a.grid_coord: a.id for a in atoms}
    if grid_kind == "square-rook":
        offsets = ((1, 0), (-1, 0), (0, 1), (0, -1))
    elif grid_kind == "square-queen":
        offsets = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))
    elif grid_kind == "hex":
        offsets = _HEX_OFFSETS
    else:
        raise BeatPlanError(f"unknown grid_kind {grid_kind!r}", code="bad-grid-kind")
    edges = set()
    for a in atoms:
        u, v = a.grid_coord
        for du, dv in offsets:
            j = index.get((u + du, v + dv))
            if j is not None and j != a.id:
                edges.add((min(a.id, j), max(a.id, j)))
    return sorted(edges)


def centroid_dist_sq(grid: AtomGrid, i: int, j: int) -> float:
    """Squared planar distance between two atom centroids, in square miles."""
    n = len(grid)
    if not (0 <= i < n and 0 <= j < n):
        raise BeatPlanError(f"atom id out of range: ({i}, {j})", code="bad-atom-id",
                            context={"num_atoms": n})
    d = grid.centroids[i] - grid.centroids[j]
    return float(d @ d)


# ---------------------------------------------------------------------------
# GeoJSON interchange


def _close_ring(coords) -> list:
    pts = [tuple(p[:2]) for p in coords]
    if pts and pts[0] != pts[-1]:
        pts.append(pts[0])
    return pts


def _polygon_from_geojson(rings) -> Polygon:
    rings = [_close_ring(r) for r in rings]
    return Polygon(rings[0], rings[1:])


def load_boundary(path: str, units: str = "auto") -> tuple[MultiPolygon | Polygon, Projection]:
    """Read a GeoJSON FeatureCollection of Polygon/MultiPolygon into mile coordinates.

    units: "lonlat" projects with a local equal-area projection, "miles"
    passes coordinates through, "auto" honors the collection's "units"
    property and falls back to lonlat.
    """
    with open(path) as f:
        doc = json.load(f)
    if units == "auto":
        units = (doc.get("properties") or {}).get("units", "lonlat")
    polys: list[Polygon] = []
    features = doc["features"] if doc.get("type") == "FeatureCollection" else [doc]
    for feat in features:
        g = feat.get("geometry", feat)
        if g["type"] == "Polygon":
            polys.append(_polygon_from_geojson(g["coordinates"]))
        elif g["type"] == "MultiPolygon":
            polys.extend(_polygon_from_geojson(rings) for rings in g["coordinates"])
        else:
            raise BeatPlanError(f"unsupported geometry type {g['type']}", code="bad-geometry")
    if not polys:
        raise BeatPlanError("boundary file has no polygons", code="degenerate-boundary")
    union = unary_union(polys)
    if units == "miles":
        return union, Projection()
    c = union.centroid
    proj = Projection(kind="laea", center_lon=c.x, center_lat=c.y)
    return unary_union([project_geometry(p, proj) for p in polys]), proj


def project_geometry(geom, projection: Projection):
    """Apply a projection to every coordinate of a shapely geometry."""
    if projection.kind == "identity":
        return geom
    return shapely.transform(
        geom, lambda pts: np.column_stack(projection.forward(pts[:, 0], pts[:, 1])))


def grid_to_geojson(grid: AtomGrid) -> dict:
    features = []
    for a in grid.atoms:
        row, col = a.grid_coord
        features.append({
            "type": "Feature",
            "geometry": mapping(a.cell),
            "properties": {"atom_id": a.id, "area_sq_mi": a.area, "row": row, "col": col},
        })
    return {
        "type": "FeatureCollection",
        "properties": {"units": "miles", "side_length": grid.side_length,
                       "grid_kind": grid.grid_kind, "projection": grid.projection.to_dict()},
        "features": features,
    }


def save_grid(grid: AtomGrid, path: str) -> None:
    doc = grid_to_geojson(grid)
    doc["properties"]["adjacency"] = [list(e) for e in grid.adjacency]
    with open(path, "w") as f:
        json.dump(doc, f)


def load_grid(path: str) -> AtomGrid:
    with open(path) as f:
        doc = json.load(f)
    props = doc["properties"]
    atoms = []
    for feat in doc["features"]:
        p = feat["properties"]
        cell = shape(feat["geometry"])
        c = cell.centroid
        atoms.append(Atom(id=p["atom_id"], cell=cell, centroid=(c.x, c.y),
                          area=p["area_sq_mi"], grid_coord=(p["row"], p["col"])))
    atoms.sort(key=lambda a: a.id)
    adjacency = [tuple(e) for e in props["adjacency"]]
    return AtomGrid(atoms, props["side_length"], props["grid_kind"], adjacency,
                    Projection.from_dict(props.get("projection", {})))
