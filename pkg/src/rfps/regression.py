"""Regression estimators: OLS, S, M-step with warm start, and the composed MM.

The scalar API fits one model at a time.  ``simple_mm_batch`` is the
closed-form simple-regression fast path used by the marginal screens: it runs
the whole S + M pipeline for a block of predictor columns at once, with one
random stream per column so results do not depend on execution order.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateDataError, RankDeficientError
from .robust_stats import (TUNING_MM, TUNING_S, DELTA_S, bisquare_rho,
                           bisquare_weight, mscale, mscale_batch)
from .rng import spawn_rng, column_seed_key

_S_KEEP_BEST = 5
_NS_S = 3  # stream namespace for elemental starts
_S_REFINE_STEPS = 2
_S_MAX_ITER = 100
_M_MAX_ITER = 500
_COEF_TOL = 1e-8


@dataclass
class RegressionFit:
    intercept: float
    slopes: np.ndarray
    scale: float
    weights: np.ndarray
    iterations: int
    converged: bool
    objective_trace: list = field(default_factory=list)

    @property
    def coefs(self) -> np.ndarray:
        """Design-order coefficients (intercept first when present)."""
        if np.isnan(self.intercept):
            return np.asarray(self.slopes)
        return np.concatenate([[self.intercept], np.asarray(self.slopes)])

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        base = 0.0 if np.isnan(self.intercept) else self.intercept
        return base + X @ np.asarray(self.slopes)

    def residuals(self, X, y) -> np.ndarray:
        return np.asarray(y, dtype=float) - self.predict(X)


def _design(X, intercept: bool):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("design matrix must be 1- or 2-dimensional")
    if intercept:
        return np.column_stack([np.ones(X.shape[0]), X]), X
    return X, X


def _split(coefs, intercept: bool):
    if intercept:
        return float(coefs[0]), np.asarray(coefs[1:])
    return float("nan"), np.asarray(coefs)


def _solve_wls(A, y, w=None):
    """Weighted least squares; raises on a rank-deficient weighted design."""
    if w is None:
        Aw, yw = A, y
    else:
        sw = np.sqrt(w)
        Aw, yw = A * sw[:, None], y * sw
    coefs, _, rank, _ = np.linalg.lstsq(Aw, yw, rcond=None)
    if rank < A.shape[1]:
        raise RankDeficientError("weighted design matrix is rank deficient")
    return coefs


def ols(X, y, intercept: bool = True) -> RegressionFit:
    """Least squares; scale is the residual standard deviation."""
    A, _ = _design(X, intercept)
    y = np.asarray(y, dtype=float)
    n, q = A.shape
    if n <= q - (1 if intercept else 0):
        raise ValueError("ols: need more observations than predictors")
    try:
        coefs = _solve_wls(A, y)
    except RankDeficientError:
        raise RankDeficientError("ols: design matrix is rank deficient")
    r = y - A @ coefs
    dof = max(n - q, 1)
    scale = float(np.sqrt(r @ r / dof))
    itc, slopes = _split(coefs, intercept)
    return RegressionFit(itc, slopes, scale, np.ones(n), 0, True)


def _elemental_fit(A, y, idx):
    sub = A[idx]
    coefs, _, rank, _ = np.linalg.lstsq(sub, y[idx], rcond=None)
    return coefs if rank == A.shape[1] else None


def _irwls_scale_step(A, y, coefs):
    r = y - A @ coefs
    s = mscale(r, TUNING_S, DELTA_S)
    if s == 0.0:
        return coefs, 0.0
    w = bisquare_weight(r / s, TUNING_S)
    return _solve_wls(A, y, w), s


def s_estimator(X, y, n_starts: int | None = None, seed: int = 0,
                intercept: bool = True) -> RegressionFit:
    """Bisquare S-estimator (c = 1.547, delta = 0.5), random elemental starts
    refined by reweighting steps, best few continued to convergence.

    For simple regression (one slope) the default drops to 50 starts, which
    keeps large marginal screens fast.
    """
    A, Xs = _design(X, intercept)
    y = np.asarray(y, dtype=float)
    n, q = A.shape
    k = Xs.shape[1]
    if n < 2 * (k + 1):
        raise ValueError("s_estimator: need n >= 2(k+1)")
    if n_starts is None:
        n_starts = 500 if k > 1 else 50

    candidates = []
    for start in range(n_starts):
        rng = spawn_rng(seed, _NS_S, start)
        coefs = None
        for _ in range(50):
            idx = rng.choice(n, size=q, replace=False)
            coefs = _elemental_fit(A, y, idx)
            if coefs is not None:
                break
        if coefs is None:
            continue
        s = np.inf
        try:
            for _ in range(_S_REFINE_STEPS):
                coefs, s = _irwls_scale_step(A, y, coefs)
                if s == 0.0:
                    break
        except RankDeficientError:
            continue
        candidates.append((s, start, coefs))
    if not candidates:
        raise DegenerateDataError("s_estimator: no valid elemental start")

    candidates.sort(key=lambda t: (t[0], t[1]))
    best = None
    for s, start, coefs in candidates[:_S_KEEP_BEST]:
        iters = 0
        converged = s == 0.0
        try:
            while not converged and iters < _S_MAX_ITER:
                new, s = _irwls_scale_step(A, y, coefs)
                iters += 1
                if s == 0.0 or np.max(np.abs(new - coefs)) <= _COEF_TOL * max(
                        1.0, float(np.max(np.abs(coefs)))):
                    converged = True
                coefs = new
        except RankDeficientError:
            continue
        if best is None or s < best[0]:
            best = (s, coefs, iters, converged)
    if best is None:
        raise DegenerateDataError("s_estimator: all refinements degenerate")

    s, coefs, iters, converged = best
    r = y - A @ coefs
    weights = (r == 0).astype(float) if s == 0.0 else bisquare_weight(r / s, TUNING_S)
    itc, slopes = _split(coefs, intercept)
    return RegressionFit(itc, slopes, float(s), weights, iters, converged)


def m_step(X, y, init_coefs, init_scale: float, c: float = TUNING_MM,
           intercept: bool = True, max_iter: int = _M_MAX_ITER) -> RegressionFit:
    """IRWLS M-step at fixed scale, warm-started at ``init_coefs``
    (design-order: intercept first when ``intercept``)."""
    if init_scale <= 0:
        raise ValueError("m_step: init_scale must be positive")
    A, _ = _design(X, intercept)
    y = np.asarray(y, dtype=float)
    coefs = np.asarray(init_coefs, dtype=float)
    if coefs.shape != (A.shape[1],):
        raise ValueError("m_step: init_coefs length does not match the design")

    trace = []
    converged = False
    iters = 0
    while iters < max_iter:
        r = y - A @ coefs
        trace.append(float(np.mean(bisquare_rho(r / init_scale, c))))
        w = bisquare_weight(r / init_scale, c)
        if np.count_nonzero(w) < A.shape[1]:
            raise RankDeficientError("m_step: weighted design lost rank")
        new = _solve_wls(A, y, w)
        iters += 1
        if np.max(np.abs(new - coefs)) <= _COEF_TOL * max(1.0, float(np.max(np.abs(coefs)))):
            coefs = new
            converged = True
            break
        coefs = new
    r = y - A @ coefs
    trace.append(float(np.mean(bisquare_rho(r / init_scale, c))))
    itc, slopes = _split(coefs, intercept)
    return RegressionFit(itc, slopes, float(init_scale),
                         bisquare_weight(r / init_scale, c), iters, converged,
                         objective_trace=trace)


def mm_estimator(X, y, efficiency_c: float = TUNING_MM,
                 n_starts: int | None = None, seed: int = 0,
                 intercept: bool = True) -> RegressionFit:
    """MM-estimator: high-breakdown S stage, then a 95%-efficient M-step at
    the fixed S-scale."""
    s_fit = s_estimator(X, y, n_starts=n_starts, seed=seed, intercept=intercept)
    if s_fit.scale == 0.0:
        return s_fit
    init = s_fit.coefs if intercept else s_fit.slopes
    fit = m_step(X, y, init, s_fit.scale, c=efficiency_c, intercept=intercept)
    return fit


def standardized_residuals(fit: RegressionFit, X, y) -> np.ndarray:
    """Residuals divided by the fit's scale."""
    if fit.scale <= 0:
        raise DegenerateDataError("standardized_residuals: zero scale")
    return fit.residuals(X, y) / fit.scale


# ---------------------------------------------------------------------------
# Vectorized simple-regression MM for marginal screens
# ---------------------------------------------------------------------------

def _pair_draws(n, p, n_starts, seed, col_offset):
    pairs = np.empty((p, n_starts, 2), dtype=np.int64)
    for j in range(p):
        rng = spawn_rng(seed, *column_seed_key(col_offset + j))
        a = rng.integers(0, n, size=n_starts)
        b = rng.integers(0, n - 1, size=n_starts)
        b = np.where(b >= a, b + 1, b)  # distinct second index, uniform
        pairs[j, :, 0] = a
        pairs[j, :, 1] = b
    return pairs


def _batch_wls_update(xv, y, r, scale):
    """One closed-form weighted LS update given residuals and fixed scales."""
    with np.errstate(divide="ignore", invalid="ignore"):
        u = r / scale[:, None]
    w = bisquare_weight(u, TUNING_S)
    sw = w.sum(axis=1)
    swx = (w * xv).sum(axis=1)
    swy = (w * y[None, :]).sum(axis=1)
    swxx = (w * xv * xv).sum(axis=1)
    swxy = (w * xv * y[None, :]).sum(axis=1)
    denom = sw * swxx - swx * swx
    ok = np.abs(denom) > 1e-30
    b_new = (sw * swxy - swx * swy) / np.where(ok, denom, 1.0)
    a_new = (swy - b_new * swx) / np.where(sw > 0, sw, 1.0)
    return a_new, b_new, ok


def simple_mm_batch(xcols: np.ndarray, y: np.ndarray, seed: int,
                    col_offset: int = 0, n_starts: int = 50,
                    efficiency_c: float = TUNING_MM):
    """MM simple regressions of y on every column of ``xcols`` at once.

    Returns (slopes, intercepts, scales, converged, degenerate) arrays of
    length p.  Columns where no elemental pair has distinct x values are
    reported degenerate with slope 0 so they sink to the tail of a screen.
    """
    X = np.asarray(xcols, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    Xt = np.ascontiguousarray(X.T)  # (p, n)

    pairs = _pair_draws(n, p, n_starts, seed, col_offset)
    xa = np.take_along_axis(Xt, pairs[:, :, 0], axis=1)
    xb = np.take_along_axis(Xt, pairs[:, :, 1], axis=1)
    ya, yb = y[pairs[:, :, 0]], y[pairs[:, :, 1]]
    dx = xa - xb
    valid = dx != 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        b0 = np.where(valid, (ya - yb) / np.where(valid, dx, 1.0), 0.0)
    a0 = np.where(valid, ya - b0 * xa, np.median(y))

    # flatten candidates; keep column ids alongside
    cols = np.repeat(np.arange(p), n_starts)
    a = a0.ravel()
    b = b0.ravel()
    alive = valid.ravel().copy()
    scale = np.full(a.shape, np.inf)

    def _resid(idx):
        return y[None, :] - a[idx, None] - b[idx, None] * Xt[cols[idx]]

    # two refinement steps on every valid candidate
    for step in range(_S_REFINE_STEPS):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        r = _resid(idx)
        s = mscale_batch(r, TUNING_S, DELTA_S,
                         s0=None if step == 0 else scale[idx])
        scale[idx] = s
        live = s > 0  # exact fits are final
        upd = idx[live]
        if upd.size:
            a_new, b_new, ok = _batch_wls_update(Xt[cols[upd]], y, a[upd], b[upd], s[live])
            a[upd], b[upd] = a_new, b_new
            alive[upd] = ok
        alive[idx[~live]] = False

    # rank candidates per column by (scale, start index); keep the best few
    s_mat = scale.reshape(p, n_starts)
    rank = np.argsort(s_mat, axis=1, kind="stable")[:, :_S_KEEP_BEST]
    flat = (np.arange(p)[:, None] * n_starts + rank).ravel()
    cols_k = np.repeat(np.arange(p), _S_KEEP_BEST)
    a_k, b_k, s_k = a[flat], b[flat], scale[flat]

    # concentrate the kept candidates to convergence
    active = np.isfinite(s_k) & (s_k > 0)
    for _ in range(_S_MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        r = y[None, :] - a_k[idx, None] - b_k[idx, None] * Xt[cols_k[idx]]
        s = mscale_batch(r, TUNING_S, DELTA_S, s0=s_k[idx])
        s_k[idx] = s
        live = s > 0
        upd = idx[live]
        if upd.size:
            a_new, b_new, ok = _batch_wls_update(Xt[cols_k[upd]], y, a_k[upd], b_k[upd], s[live])
            moved = np.maximum(np.abs(a_new - a_k[upd]), np.abs(b_new - b_k[upd]))
            ref = np.maximum(1.0, np.maximum(np.abs(a_k[upd]), np.abs(b_k[upd])))
            a_k[upd], b_k[upd] = a_new, b_new
            active[upd] = ok & (moved > _COEF_TOL * ref)
        active[idx[~live]] = False

    # best candidate per column by final scale
    s_grid = s_k.reshape(p, _S_KEEP_BEST)
    best = np.argmin(np.where(np.isfinite(s_grid), s_grid, np.inf), axis=1)
    sel = np.arange(p) * _S_KEEP_BEST + best
    a_fin, b_fin, s_fin = a_k[sel], b_k[sel], s_k[sel]
    degenerate = ~np.isfinite(s_fin)
    a_fin = np.where(degenerate, np.median(y), a_fin)
    b_fin = np.where(degenerate, 0.0, b_fin)
    s_fin = np.where(degenerate, np.nan, s_fin)

    # efficient M-step at the fixed S-scale
    m_active = np.flatnonzero(~degenerate & (s_fin > 0))
    converged = np.ones(p, dtype=bool)
    a_m, b_m = a_fin.copy(), b_fin.copy()
    act = m_active.copy()
    for _ in range(_M_MAX_ITER):
        if act.size == 0:
            break
        r = y[None, :] - a_m[act, None] - b_m[act, None] * Xt[act]
        u = r / s_fin[act, None]
        w = bisquare_weight(u, efficiency_c)
        sw = w.sum(axis=1)
        swx = (w * Xt[act]).sum(axis=1)
        swy = (w * y[None, :]).sum(axis=1)
        swxx = (w * Xt[act] * Xt[act]).sum(axis=1)
        swxy = (w * Xt[act] * y[None, :]).sum(axis=1)
        denom = sw * swxx - swx * swx
        ok = np.abs(denom) > 1e-30
        b_new = np.where(ok, (sw * swxy - swx * swy) / np.where(ok, denom, 1.0), b_m[act])
        a_new = np.where(ok, (swy - b_new * swx) / np.where(sw > 0, sw, 1.0), a_m[act])
        moved = np.maximum(np.abs(a_new - a_m[act]), np.abs(b_new - b_m[act]))
        ref = np.maximum(1.0, np.maximum(np.abs(a_m[act]), np.abs(b_m[act])))
        a_m[act], b_m[act] = a_new, b_new
        done = ~ok | (moved <= _COEF_TOL * ref)
        converged[act[~ok]] = False
        act = act[~done]
    converged[act] = False  # hit the cap

    return b_m, a_m, s_fin, converged, degenerate
