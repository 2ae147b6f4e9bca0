"""Balanced, contiguous, compact patrol-beat design from calls and census data."""

from .errors import BeatPlanError
from .geo import Atom, AtomGrid, Projection, atomize, build_adjacency, centroid_dist_sq
from .ingest import (
    CallRecord,
    CensusBlockRecord,
    SyntheticSpec,
    generate_synthetic,
    load_calls,
    load_census,
)
from .interp import CensusTensor, OverlayWeights, interpolate, overlay
from .workload import WorkloadPanel, beat_workload, count_calls, estimate_workload
from .forecast import (
    RateSurface,
    SpatialLagModel,
    SpatialWeights,
    build_weights,
    fit,
    forecast_workload,
    predict,
)
from .partition import (
    BeatDesign,
    CompactnessParams,
    boundary_moves,
    compactness,
    is_contiguous,
    objective_value,
    workload_variance,
)
from .optimize import AnnealConfig, SearchTrace, accept_prob, anneal, greedy_expand, kmeans_split
from .mip import CountReport, MipModel, build_model, count_report, read_lp, write_lp
from .report import BeatTable, beat_table, elbow_curve, heat_surface

__version__ = "0.1.0"
