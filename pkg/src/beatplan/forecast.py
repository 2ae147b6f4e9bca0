"""Spatially lagged workload regression and forward rate forecasting.

The monthly count surface is modeled as
    y_l = rho * W y_l + beta0 * y_{l-1} + sum_t beta_t' X_{l-t} + intercept + eps
with W the row-normalized adjacency. rho is profiled on a grid: for each
candidate, (y_l - rho W y_l) is fit by pooled OLS and the residual sum of
squares decides. Forecasts iterate the fitted equation with a sparse linear
solve per month and clamp negative rates to zero.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
import scipy.stats

from .errors import BeatPlanError
from .geo import AtomGrid
from .interp import CensusTensor
from .workload import WorkloadPanel

DEFAULT_RHO_GRID = (np.arange(-99, 100) * 0.01)

# relative slack under which two grid points count as tied on RSS
_RSS_TIE_REL = 1e-12


@dataclass(frozen=True)
class SpatialWeights:
    """Row-normalized adjacency: W[i, j] = 1/deg(i) for neighbors, else 0."""

    matrix: scipy.sparse.csr_matrix

    @property
    def num_atoms(self) -> int:
        return self.matrix.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v


def build_weights(grid: AtomGrid) -> SpatialWeights:
    n = len(grid)
    rows, cols, vals = [], [], []
    for i, nbrs in enumerate(grid.neighbors):
        if len(nbrs) == 0:
            continue
        rows.extend([i] * len(nbrs))
        cols.extend(int(j) for j in nbrs)
        vals.extend([1.0 / len(nbrs)] * len(nbrs))
    mat = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return SpatialWeights(matrix=mat)


@dataclass
class SpatialLagModel:
    rho: float
    beta0: float
    beta: np.ndarray          # p x M
    intercept: float
    p: int
    factor_names: list[str]
    rho_grid: list[float]
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if abs(self.rho) >= 1:
            raise BeatPlanError("|rho| must be below 1", code="bad-rho")
        if self.p < 1:
            raise BeatPlanError("lag order must be at least 1", code="bad-lag-order")


@dataclass(frozen=True)
class RateSurface:
    rates: np.ndarray  # I x H, non-negative
    month_indices: list[int]

    def month_column(self, month_index: int) -> np.ndarray:
        return self.rates[:, self.month_indices.index(month_index)]


def _census_slab(tensor: CensusTensor, month: int) -> np.ndarray:
    if month not in tensor.month_indices:
        raise BeatPlanError(f"census tensor does not cover month {month}",
                            code="census-month-missing",
                            context={"month": month, "covered": [tensor.month_indices[0],
                                                                 tensor.month_indices[-1]]})
    return tensor.at_month(month)


def _check_nulls(slabs: list[np.ndarray], tensor: CensusTensor) -> None:
    bad_atoms: set[int] = set()
    bad_factors: set[str] = set()
    for slab in slabs:
        nan_i, nan_j = np.nonzero(np.isnan(slab))
        bad_atoms.update(int(i) for i in nan_i)
        bad_factors.update(tensor.factor_names[int(j)] for j in nan_j)
    if bad_atoms:
        raise BeatPlanError(
            f"census factors {sorted(bad_factors)} are null for {len(bad_atoms)} atoms",
            code="null-census-values",
            context={"atoms": sorted(bad_atoms)[:50], "factors": sorted(bad_factors)})


def _design_matrix(panel: WorkloadPanel, tensor: CensusTensor, p: int):
    """Pooled regressors [1, y_{l-1}, X_{l-1..l-p}] and the per-month y, Wy blocks."""
    y = panel.counts.astype(float)
    n, l0 = y.shape
    if l0 < p + 2:
        raise BeatPlanError(f"need at least {p + 2} months of history, have {l0}",
                            code="too-few-months")
    used = list(range(p, l0))
    m = len(tensor.factor_names)
    slabs = {}
    for k in used:
        for t in range(1, p + 1):
            month = panel.month_indices[k - t]
            slabs[month] = _census_slab(tensor, month)
    _check_nulls(list(slabs.values()), tensor)
    rows = []
    targets = []
    for k in used:
        block = [np.ones(n), y[:, k - 1]]
        for t in range(1, p + 1):
            x = slabs[panel.month_indices[k - t]]
            block.extend(x[:, j] for j in range(m))
        rows.append(np.column_stack(block))
        targets.append(y[:, k])
    return np.vstack(rows), targets, used


def fit(panel: WorkloadPanel, tensor: CensusTensor, weights: SpatialWeights,
        p: int = 1, rho_grid=None) -> SpatialLagModel:
    """Profile rho over a grid, solving pooled OLS at each candidate.

    Ties in residual sum of squares (within floating slack) resolve to the
    smallest |rho|, preferring the non-negative one, so degenerate constant
    surfaces fit as plain autoregressions.
    """
    grid_rho = np.asarray(DEFAULT_RHO_GRID if rho_grid is None else rho_grid, dtype=float)
    if grid_rho.size == 0 or np.abs(grid_rho).max() >= 1:
        raise BeatPlanError("rho grid must be non-empty within (-1, 1)", code="bad-rho-grid")
    a, targets, used = _design_matrix(panel, tensor, p)
    m = len(tensor.factor_names)

    y_pool = np.concatenate(targets)
    wy_pool = np.concatenate([weights.apply(t) for t in targets])

    # exactly-zero columns carry no signal: fixed at coefficient 0
    zero_cols = np.flatnonzero((a == 0).all(axis=0))
    keep = np.flatnonzero(~np.isin(np.arange(a.shape[1]), zero_cols))
    a_used = a[:, keep]

    # collinearity among census factor columns is a data problem worth naming
    _, _, piv = scipy.linalg.qr(a_used, mode="economic", pivoting=True)
    rank = np.linalg.matrix_rank(a_used)
    if rank < a_used.shape[1]:
        dropped = [int(keep[j]) for j in piv[rank:]]
        factor_cols = [j for j in dropped if j >= 2]
        if factor_cols:
            names = sorted({tensor.factor_names[(j - 2) % m] for j in factor_cols})
            raise BeatPlanError(f"collinear census factors: {', '.join(names)}",
                                code="rank-deficient", context={"factors": names})

    # one least-squares factorization serves every rho: the design matrix is
    # fixed and only the target shifts by rho * Wy
    targets = y_pool[:, None] - np.outer(wy_pool, grid_rho)
    sols, _, _, _ = np.linalg.lstsq(a_used, targets, rcond=None)
    resid_all = targets - a_used @ sols
    rss = (resid_all ** 2).sum(axis=0)

    scale = float(y_pool @ y_pool + wy_pool @ wy_pool) + 1e-300
    tol = _RSS_TIE_REL * scale
    tied = np.flatnonzero(rss <= rss.min() + tol)
    pick = int(min(tied, key=lambda g: (abs(grid_rho[g]), grid_rho[g] < 0)))
    rho_hat = float(grid_rho[pick])

    coefs = np.zeros(a.shape[1])
    coefs[keep] = sols[:, pick]
    intercept = float(coefs[0])
    beta0 = float(coefs[1])
    beta = coefs[2:].reshape(p, m)

    target = y_pool - rho_hat * wy_pool
    resid = target - a @ coefs
    n_obs = target.size
    dof = max(n_obs - rank, 1)
    sigma2 = rss[pick] / dof
    cov = sigma2 * np.linalg.pinv(a_used.T @ a_used)
    se = np.full(a.shape[1], np.nan)
    se[keep] = np.sqrt(np.maximum(np.diag(cov), 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = coefs / se
    pvals = 2 * scipy.stats.t.sf(np.abs(tstat), dof)

    tss = float(((target - target.mean()) ** 2).sum())
    r2 = 1.0 - rss[pick] / tss if tss > 0 else 1.0

    morans = []
    w = weights.matrix
    s0 = float(w.sum())
    n_atoms = panel.num_atoms
    for blk in range(len(used)):
        e = resid[blk * n_atoms:(blk + 1) * n_atoms]
        denom = float(e @ e)
        if denom > 0 and s0 > 0:
            morans.append(float(n_atoms / s0 * (e @ (w @ e)) / denom))
    names = ["intercept", "lag_count"] + [f"{nm}[t-{t}]" for t in range(1, p + 1)
                                          for nm in tensor.factor_names]
    diagnostics = {
        "rss": float(rss[pick]),
        "rss_at_rho0": float(rss[np.argmin(np.abs(grid_rho))]),
        "r_squared": float(r2),
        "p_values": {nm: (None if np.isnan(v) else float(v)) for nm, v in zip(names, pvals)},
        "moran_i_residuals": float(np.mean(morans)) if morans else None,
        "observations": int(n_obs),
    }
    return SpatialLagModel(rho=rho_hat, beta0=beta0, beta=beta, intercept=intercept,
                           p=p, factor_names=list(tensor.factor_names),
                           rho_grid=[float(r) for r in grid_rho], diagnostics=diagnostics)


def _annual_values(tensor: CensusTensor) -> tuple[list[int], np.ndarray]:
    """Per-year factor slabs (values repeat within a year by construction)."""
    years = sorted({m // 12 for m in tensor.month_indices})
    slabs = []
    for y in years:
        month = next(m for m in tensor.month_indices if m // 12 == y)
        slabs.append(tensor.at_month(month))
    return years, np.stack(slabs)  # Y x I x M


def census_for_month(tensor: CensusTensor, month: int, mode: str = "linear") -> np.ndarray:
    """Factor slab for any month, extrapolating annual values when uncovered.

    mode "linear" fits a least-squares line through each factor's annual
    values (constant when only one year exists); "hold" repeats the last
    observed year.
    """
    if month in tensor.month_indices:
        return tensor.at_month(month)
    years, slabs = _annual_values(tensor)
    target_year = month // 12
    if mode == "hold" or len(years) == 1:
        return slabs[-1] if target_year >= years[-1] else slabs[0]
    if mode != "linear":
        raise BeatPlanError(f"unknown census extrapolation mode {mode!r}", code="bad-census-mode")
    t = np.array(years, dtype=float)
    t_mean = t.mean()
    denom = float(((t - t_mean) ** 2).sum())
    slope = np.tensordot(t - t_mean, slabs - slabs.mean(axis=0), axes=(0, 0)) / denom
    mean = slabs.mean(axis=0)
    return mean + slope * (target_year - t_mean)


def predict(model: SpatialLagModel, panel: WorkloadPanel, tensor: CensusTensor,
            weights: SpatialWeights, horizon: int, census_mode: str = "linear",
            clamp: bool = True) -> RateSurface:
    """Iterate the fitted equation forward, solving (I - rho W) each month."""
    if horizon < 1:
        raise BeatPlanError("horizon must be at least 1", code="bad-horizon")
    n = panel.num_atoms
    if weights.num_atoms != n:
        raise BeatPlanError("weights and panel disagree on atom count", code="dimension-mismatch")
    system = scipy.sparse.eye(n, format="csc") - model.rho * weights.matrix.tocsc()
    try:
        solver = scipy.sparse.linalg.splu(system)
    except RuntimeError as exc:
        raise BeatPlanError(f"(I - rho W) is singular: {exc}", code="singular-system") from exc

    history = {panel.month_indices[k]: panel.counts[:, k].astype(float)
               for k in range(len(panel.month_indices))}
    last = panel.month_indices[-1]
    out = np.empty((n, horizon))
    out_months = [last + h for h in range(1, horizon + 1)]
    for h, month in enumerate(out_months):
        rhs = np.full(n, model.intercept)
        rhs += model.beta0 * history[month - 1]
        for t in range(1, model.p + 1):
            x = census_for_month(tensor, month - t, census_mode)
            if np.isnan(x).any():
                _check_nulls([x], tensor)
            rhs += x @ model.beta[t - 1]
        lam = solver.solve(rhs)
        if not np.isfinite(lam).all():
            raise BeatPlanError("(I - rho W) solve produced non-finite rates",
                                code="singular-system")
        if clamp:
            lam = np.maximum(lam, 0.0)
        history[month] = lam
        out[:, h] = lam
    return RateSurface(rates=out, month_indices=out_months)


def forecast_workload(rates: RateSurface, tau: float) -> np.ndarray:
    """Scale forecast rates to hours: w_hat = lambda_hat * tau."""
    if tau < 0:
        raise BeatPlanError("tau must be non-negative", code="bad-tau")
    return rates.rates * tau


# ---------------------------------------------------------------------------
# serialization


def model_to_json(model: SpatialLagModel, path: str) -> None:
    doc = {
        "rho": model.rho,
        "beta0": model.beta0,
        "beta": model.beta.tolist(),
        "intercept": model.intercept,
        "p": model.p,
        "factor_names": model.factor_names,
        "rho_grid": model.rho_grid,
        "diagnostics": model.diagnostics,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)


def model_from_json(path: str) -> SpatialLagModel:
    with open(path) as f:
        doc = json.load(f)
    return SpatialLagModel(rho=doc["rho"], beta0=doc["beta0"],
                           beta=np.array(doc["beta"], dtype=float),
                           intercept=doc["intercept"], p=doc["p"],
                           factor_names=doc["factor_names"], rho_grid=doc["rho_grid"],
                           diagnostics=doc.get("diagnostics", {}))


def rates_to_csv(surface: RateSurface, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["atom_id", "month", "lambda"])
        for i in range(surface.rates.shape[0]):
            for k, m in enumerate(surface.month_indices):
                writer.writerow([i, m, repr(float(surface.rates[i, k]))])


def rates_from_csv(path: str) -> RateSurface:
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append((int(row["atom_id"]), int(row["month"]), float(row["lambda"])))
    month_indices = sorted({r[1] for r in rows})
    n = max(r[0] for r in rows) + 1
    rates = np.zeros((n, len(month_indices)))
    mpos = {m: k for k, m in enumerate(month_indices)}
    for i, m, v in rows:
        rates[i, mpos[m]] = v
    return RateSurface(rates=rates, month_indices=month_indices)
