"""Variable screening: plain marginal screening, its factor-profiled variant,
and the robust factor-profiled pipeline.

All three produce a :class:`SolutionPath`: the predictors ordered by
decreasing absolute marginal slope, together with the row sets and profiled
variables used to fit them.  The robust pipeline additionally classifies every
observation (vertical outlier, good/bad leverage of either kind) and screens
only on the rows that survive.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .exceptions import DegenerateDataError
from .factor_model import FactorFit, ObsFlag, fit_factor_model
from .regression import mm_estimator, simple_mm_batch
from .robust_stats import chi2_quantile, qn_scale_columns

_SCREEN_BLOCK = 128


class Method(Enum):
    SIS = "sis"
    FPSIS = "fpsis"
    RFPSIS = "rfpsis"


class RowLabel(IntEnum):
    REGULAR = 0
    VERTICAL = 1          # outlying response only
    PC_GOOD_LEVERAGE = 2  # score outlier whose response follows the model
    PC_BAD_LEVERAGE = 3   # score outlier with deviating response
    OC_OUTLIER = 4        # outlying orthogonally to the factor subspace

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass
class OutlierReport:
    labels: np.ndarray   # RowLabel codes, one per observation
    od: np.ndarray
    sd: np.ndarray
    t: np.ndarray        # standardized residuals from the initial response fit

    def count(self, label: RowLabel) -> int:
        return int(np.sum(self.labels == label))


@dataclass
class SolutionPath:
    order: np.ndarray        # permutation of 0..p-1, decreasing |slope|
    slopes: np.ndarray       # (p,) marginal slopes
    method: Method
    i1: np.ndarray           # regular rows
    i2: np.ndarray           # rows used for screening
    profiled_y: np.ndarray
    profiled_X: np.ndarray
    report: OutlierReport | None = None
    factor: FactorFit | None = None
    gamma: np.ndarray | None = None
    mu_y: float | None = None


def _order_by_magnitude(slopes: np.ndarray) -> np.ndarray:
    # stable sort: ties in |slope| broken by ascending column index
    return np.argsort(-np.abs(slopes), kind="stable")


def sis_path(X, y) -> SolutionPath:
    """Marginal least-squares screen.  Expects standardized columns and a
    centered response; slopes then equal marginal correlations."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    ss = np.einsum("ij,ij->j", X, X)
    if np.any(ss == 0.0):
        raise DegenerateDataError("sis_path: zero-variance column")
    slopes = (X.T @ y) / ss
    n = X.shape[0]
    rows = np.arange(n)
    return SolutionPath(order=_order_by_magnitude(slopes), slopes=slopes,
                        method=Method.SIS, i1=rows, i2=rows,
                        profiled_y=y, profiled_X=X)


def _classical_dimension(s: np.ndarray, n: int, p: int, d_max: int) -> int:
    """Unweighted information criterion over candidate dimensions, from the
    singular values of the (centered) data matrix."""
    total = float(np.sum(s**2))
    tail = total - np.cumsum(s**2)
    best_d, best_val = 1, np.inf
    for d in range(1, d_max + 1):
        resid = tail[d - 1] if d - 1 < tail.size else 0.0
        pen = d * ((n + p) / (n * p)) * np.log(n * p / (n + p))
        val = resid / (n * p) + total / (n * p) * pen
        if val < best_val:
            best_d, best_val = d, val
    return best_d


def fpsis_path(X, y, d="auto", d_max: int = 10) -> SolutionPath:
    """Classical factor-profiled screen: project predictors and response onto
    the orthogonal complement of the leading left singular subspace, then
    screen by marginal least squares.  ``d=0`` disables profiling."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    if d == "auto":
        rank = int(np.sum(s > s[0] * max(n, p) * np.finfo(float).eps)) if s.size else 0
        d = _classical_dimension(s, n, p, min(d_max, max(rank, 1), min(n, p) - 2))
    d = int(d)
    if d > 0:
        Z = U[:, :d]
        Xp = X - Z @ (Z.T @ X)
        yp = y - Z @ (Z.T @ y)
    else:
        Xp, yp = X, y
    ss = np.einsum("ij,ij->j", Xp, Xp)
    dead = ss <= np.max(ss, initial=0.0) * 1e-14
    if np.any(dead):
        warnings.warn(f"fpsis_path: {int(dead.sum())} profiled columns have no "
                      "variance left; their slopes are set to 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        slopes = np.where(dead, 0.0, (Xp.T @ yp) / np.where(dead, 1.0, ss))
    rows = np.arange(n)
    return SolutionPath(order=_order_by_magnitude(slopes), slopes=slopes,
                        method=Method.FPSIS, i1=rows, i2=rows,
                        profiled_y=yp, profiled_X=Xp)


def profile_response(y, fit: FactorFit, seed: int = 0,
                     n_starts: int | None = None):
    """Profile the response against the factor scores.

    An initial robust regression over the regular rows classifies every score
    outlier as good or bad leverage by its standardized residual; good
    leverage points are re-admitted and the regression is refit over the
    enlarged row set.  Returns (gamma, mu_y, profiled_y, i2, report).
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    d = fit.d
    i1 = fit.regular_rows()
    if i1.size < 2 * (d + 1):
        raise DegenerateDataError("profile_response: too few regular rows")

    Z = fit.Z
    fit0 = mm_estimator(Z[i1], y[i1], seed=seed, n_starts=n_starts)
    resid0 = y - fit0.intercept - Z @ fit0.slopes
    if fit0.scale > 0:
        t = resid0 / fit0.scale
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(resid0 == 0.0, 0.0, np.inf * np.sign(resid0))

    chi1 = chi2_quantile(0.975, 1)
    pc_mask = fit.flags == ObsFlag.PC_OUTLIER
    admitted = pc_mask & (t**2 <= chi1)
    i2 = np.union1d(i1, np.flatnonzero(admitted))

    if i2.size == i1.size:
        fit1 = fit0
    else:
        fit1 = mm_estimator(Z[i2], y[i2], seed=seed, n_starts=n_starts)
    profiled_y = y - fit1.intercept - Z @ fit1.slopes

    labels = np.zeros(n, dtype=np.int8)
    vertical = (fit.flags == ObsFlag.REGULAR) & (t**2 > chi1)
    labels[vertical] = RowLabel.VERTICAL
    labels[pc_mask & admitted] = RowLabel.PC_GOOD_LEVERAGE
    labels[pc_mask & ~admitted] = RowLabel.PC_BAD_LEVERAGE
    labels[fit.flags == ObsFlag.OC_OUTLIER] = RowLabel.OC_OUTLIER
    report = OutlierReport(labels=labels, od=fit.od, sd=fit.sd, t=t)
    return fit1.slopes, fit1.intercept, profiled_y, i2, report


def _marginal_mm_screen(Xp, yp, rows, seed, n_starts=50, threads=1):
    """Simple-regression MM slope for every column of ``Xp`` over ``rows``.

    Columns are processed in blocks; each column uses its own random stream,
    so the result does not depend on blocking or thread count.
    """
    Xs = Xp[rows]
    ys = yp[rows]
    p = Xp.shape[1]
    blocks = [(lo, min(lo + _SCREEN_BLOCK, p)) for lo in range(0, p, _SCREEN_BLOCK)]

    def run(block):
        lo, hi = block
        return simple_mm_batch(Xs[:, lo:hi], ys, seed=seed, col_offset=lo,
                               n_starts=n_starts)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, blocks))
    else:
        results = [run(b) for b in blocks]

    slopes = np.concatenate([r[0] for r in results])
    degenerate = np.concatenate([r[4] for r in results])
    if np.any(degenerate):
        warnings.warn(f"marginal screen: {int(degenerate.sum())} columns had "
                      "no usable variation; their slopes are set to 0")
    return slopes, degenerate


def rfpsis_path(X, y, d="auto", h: int | None = None, h_frac: float | None = None,
                seed: int = 0, n_starts: int = 100, d_max: int = 10,
                screen_starts: int = 50, threads: int = 1) -> SolutionPath:
    """Robust factor-profiled screen.

    Standardizes every predictor by its median and Qn scale, fits the factor
    model robustly, profiles predictors and response directly from the fitted
    model (never by projecting contaminated rows), and screens with simple
    MM regressions over the rows that survive outlier filtering.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("rfpsis_path: non-finite input")
    n, p = X.shape

    med = np.median(X, axis=0)
    qn = qn_scale_columns(X)
    flat = qn == 0.0
    if np.any(flat):
        warnings.warn(f"rfpsis_path: {int(flat.sum())} columns have zero Qn "
                      "scale; they are centered but not rescaled")
    Xs = (X - med) / np.where(flat, 1.0, qn)

    fit = fit_factor_model(Xs, d=d, h=h, h_frac=h_frac, n_starts=n_starts,
                           seed=seed, d_max=d_max)
    profiled_X = Xs - fit.mu - fit.Z @ fit.B.T
    gamma, mu_y, profiled_y, i2, report = profile_response(y, fit, seed=seed)

    slopes, _ = _marginal_mm_screen(profiled_X, profiled_y, i2, seed=seed,
                                    n_starts=screen_starts, threads=threads)
    return SolutionPath(order=_order_by_magnitude(slopes), slopes=slopes,
                        method=Method.RFPSIS, i1=fit.regular_rows(), i2=i2,
                        profiled_y=profiled_y, profiled_X=profiled_X,
                        report=report, factor=fit, gamma=gamma, mu_y=mu_y)
