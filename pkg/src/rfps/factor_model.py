"""Robust estimation of the latent factor subspace.

Pipeline: an SVD pre-projection to the affine span of the observations, a
least-trimmed-squares alternating fit of a rank-d affine subspace, a
Yeo-Johnson based reweighting that removes orthogonal-complement (OC)
outliers, a within-subspace reweighting of the scores via the reweighted MCD
that flags score (PC) outliers, and an information criterion over candidate
dimensions.

Distances follow the usual PCA diagnostics: the orthogonal distance od_i is
the Euclidean distance of observation i to the fitted subspace; the score
distance sd_i is the norm of its standardized score.
"""

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .exceptions import DegenerateDataError, RankDeficientError
from .mcd import fit_mcd, reweight_consistency_factor
from .robust_stats import chi2_quantile, normal_quantile, qn_scale
from .rng import spawn_rng

_NS_LTS = 1          # stream namespace for LTS starts
_NS_MCD_SEED = 0x3C  # key for the score-reweighting MCD stream
_LTS_KEEP_BEST = 10
_LTS_WARM_STEPS = 2
_LTS_MAX_CSTEPS = 100

LAMBDA_GRID = np.round(np.arange(0.0, 1.0 + 1e-9, 0.02), 2)
OC_CUTOFF = normal_quantile(0.975)


class ObsFlag(IntEnum):
    REGULAR = 0
    PC_OUTLIER = 1   # outlying within the subspace (score outlier)
    OC_OUTLIER = 2   # outlying orthogonally to the subspace


@dataclass
class LtsState:
    subset: np.ndarray        # indices of the h retained rows, sorted
    objective: float          # sum of the h smallest squared residual norms
    objective_trace: list = field(default_factory=list)


@dataclass
class SubspaceFit:
    """Interim subspace fit used between the pipeline stages.

    ``B`` has orthonormal columns until the score reweighting rescales it;
    scores are the orthogonal projections z_i = B^T (x_i - mu).
    """
    mu: np.ndarray
    B: np.ndarray
    Z: np.ndarray
    od: np.ndarray
    lambda_opt: float
    od_transformed: np.ndarray
    oc: np.ndarray            # boolean mask


@dataclass
class FactorFit:
    mu: np.ndarray            # (p,)
    B: np.ndarray             # (p, d)
    Z: np.ndarray             # (n, d)
    d: int
    h: int
    od: np.ndarray
    sd: np.ndarray
    od_transformed: np.ndarray
    flags: np.ndarray         # ObsFlag codes
    lambda_opt: float
    lts_state: LtsState | None = None
    pc_value: float | None = None

    @property
    def n_oc(self) -> int:
        return int(np.sum(self.flags == ObsFlag.OC_OUTLIER))

    @property
    def n_pc(self) -> int:
        return int(np.sum(self.flags == ObsFlag.PC_OUTLIER))

    def regular_rows(self) -> np.ndarray:
        return np.flatnonzero(self.flags == ObsFlag.REGULAR)

    def residual_matrix(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) - self.mu - self.Z @ self.B.T


def svd_preproject(X):
    """Represent X in the affine subspace spanned by the observations.

    Returns (Xstar, P, xbar) with X = Xstar @ P.T + xbar, P having
    orthonormal columns and r = rank(X - xbar).
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < 2:
        raise ValueError("svd_preproject: need at least 2 rows")
    xbar = X.mean(axis=0)
    C = X - xbar
    U, s, Vt = np.linalg.svd(C, full_matrices=False)
    tol = max(n, p) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    r = int(np.sum(s > tol))
    Xstar = U[:, :r] * s[:r]
    P = Vt[:r].T
    return Xstar, P, xbar


def _subspace_from_rows(Xs, rows, d):
    mu = Xs[rows].mean(axis=0)
    _, sv, Vt = np.linalg.svd(Xs[rows] - mu, full_matrices=False)
    return mu, Vt[:d].T, sv


def _residuals(Xs, mu, B):
    C = Xs - mu
    Z = C @ B
    R = C - Z @ B.T
    return np.einsum("ij,ij->i", R, R), Z


def fit_lts_subspace(Xstar, d: int, h: int, n_starts: int = 100, seed: int = 0):
    """Rank-d affine subspace minimizing the sum of the h smallest squared
    row-residual norms.

    Alternating concentration: fit the subset by its centered SVD, re-select
    the h rows with smallest residuals, repeat to a subset fixed point.  Many
    random (d+1)-row starts get two warm-up steps; the best few run to
    convergence.  Deterministic given ``seed`` (draws are indexed by start).
    """
    Xs = np.asarray(Xstar, dtype=float)
    n, r = Xs.shape
    h_min = (n - d + 2) // 2
    if not (h_min <= h < n):
        raise ValueError(f"fit_lts_subspace: h must lie in [{h_min}, {n - 1}]")
    if not (1 <= d <= min(h - 1, r)):
        raise ValueError("fit_lts_subspace: d must satisfy 1 <= d <= min(h-1, r)")

    def c_steps(mu, B, max_steps, trace=None, subset=None):
        for _ in range(max_steps):
            res2, _ = _residuals(Xs, mu, B)
            new = np.sort(np.argsort(res2, kind="stable")[:h])
            obj = float(np.sum(res2[new]))
            if trace is not None:
                trace.append(obj)
            if subset is not None and np.array_equal(new, subset):
                return mu, B, subset, obj, True
            subset = new
            mu, B, _ = _subspace_from_rows(Xs, subset, d)
        res2, _ = _residuals(Xs, mu, B)
        final = np.sort(np.argsort(res2, kind="stable")[:h])
        return mu, B, subset, float(np.sum(res2[final])), False

    candidates = []
    any_valid_start = False
    for start in range(n_starts):
        rng = spawn_rng(seed, _NS_LTS, start)
        mu = B = None
        for _ in range(50):
            rows = rng.choice(n, size=d + 1, replace=False)
            mu_try, B_try, sv = _subspace_from_rows(Xs, rows, d)
            if sv.size >= d and sv[d - 1] > 1e-12 * max(1.0, sv[0]):
                mu, B = mu_try, B_try
                break
        if mu is None:
            continue
        any_valid_start = True
        mu, B, subset, obj, _ = c_steps(mu, B, _LTS_WARM_STEPS)
        candidates.append((obj, start, mu, B, subset))
    if not candidates:
        if not any_valid_start:
            raise RankDeficientError("fit_lts_subspace: every start subset was rank deficient")
        raise DegenerateDataError("fit_lts_subspace: no usable start")

    candidates.sort(key=lambda t: (t[0], t[1]))
    best = None
    for obj, start, mu, B, subset in candidates[:_LTS_KEEP_BEST]:
        trace = [obj]
        mu, B, subset, obj, _ = c_steps(mu, B, _LTS_MAX_CSTEPS, trace=trace, subset=subset)
        if best is None or obj < best[0]:
            best = (obj, mu, B, subset, trace)

    obj, mu, B, subset, trace = best
    _, Z = _residuals(Xs, mu, B)
    state = LtsState(subset=subset, objective=obj, objective_trace=trace)
    return Z, B, mu, state


def transform_yeo_johnson(lam: float, d):
    """Four-branch power transform; continuous in d at 0, identity at lam=1."""
    d = np.asarray(d, dtype=float)
    scalar = d.ndim == 0
    d = np.atleast_1d(d)
    out = np.empty_like(d)
    pos = d >= 0
    if lam != 0:
        out[pos] = ((d[pos] + 1.0) ** lam - 1.0) / lam
    else:
        out[pos] = np.log1p(d[pos])
    if lam != 2:
        out[~pos] = -(((1.0 - d[~pos]) ** (2.0 - lam)) - 1.0) / (2.0 - lam)
    else:
        out[~pos] = -np.log1p(-d[~pos])
    return float(out[0]) if scalar else out


def yj_trimmed_loglik(d_std, lam: float, h: int) -> float:
    """Trimmed normal log-likelihood of the transformed values: the sum of the
    h smallest per-observation contributions, Jacobian term included.  Center
    and scale are the median/Qn of the transformed sample.

    Summing the smallest contributions scores a candidate power by how well
    even its worst-fitting h observations behave, which keeps the identity
    transform optimal on already-normal data at any trimming level.
    """
    d_std = np.asarray(d_std, dtype=float)
    t = transform_yeo_johnson(lam, d_std)
    mu = float(np.median(t))
    sig = qn_scale(t)
    if sig <= 0:
        return -np.inf
    ll = (-0.5 * np.log(2 * np.pi) - np.log(sig)
          - (t - mu) ** 2 / (2.0 * sig**2)
          + (lam - 1.0) * np.sign(d_std) * np.log(np.abs(d_std) + 1.0))
    return float(np.sum(np.sort(ll)[:h]))


def select_lambda(od, h: int):
    """Pick the transform power on the 0..1 grid (step 0.02) maximizing the
    trimmed likelihood of the standardized distances; return it with the
    transformed values."""
    od = np.asarray(od, dtype=float)
    n = od.size
    if n < 4:
        raise ValueError("select_lambda: need at least 4 observations")
    if not np.all(np.isfinite(od)):
        raise ValueError("select_lambda: non-finite distances")
    med = float(np.median(od))
    qn = qn_scale(od)
    if qn <= 0:
        raise DegenerateDataError("select_lambda: zero spread in distances")
    d_std = (od - med) / qn
    best_lam, best_ll = None, -np.inf
    for lam in LAMBDA_GRID:
        ll = yj_trimmed_loglik(d_std, float(lam), h)
        if ll > best_ll:
            best_lam, best_ll = float(lam), ll
    return best_lam, transform_yeo_johnson(best_lam, d_std)


def _oc_flags(od, lam: float):
    """Standardize distances, transform with the given power, flag values
    beyond the 0.975 normal quantile.  Exactly-fitting data (no spread, all
    distances ~0) yields no flags."""
    od = np.asarray(od, dtype=float)
    med = float(np.median(od))
    qn = qn_scale(od)
    if qn <= 0:
        if np.max(od) <= 1e-8 * max(1.0, med):
            z = np.zeros_like(od)
            return np.zeros(od.size, dtype=bool), z
        raise DegenerateDataError("zero spread in orthogonal distances")
    t = transform_yeo_johnson(lam, (od - med) / qn)
    return t > OC_CUTOFF, t


def reweight_subspace(X, fit: SubspaceFit, h: int) -> SubspaceFit:
    """Refit the subspace by least squares on the rows not flagged OC, then
    refresh distances and re-flag once with the same transform power."""
    X = np.asarray(X, dtype=float)
    d = fit.B.shape[1]
    kept = np.flatnonzero(~fit.oc)
    if kept.size < d + 1:
        raise DegenerateDataError("reweight_subspace: fewer than d+1 rows survive")
    mu, B, _ = _subspace_from_rows(X, kept, d)
    res2, Z = _residuals(X, mu, B)
    od = np.sqrt(np.maximum(res2, 0.0))
    oc, transformed = _oc_flags(od, fit.lambda_opt)
    return SubspaceFit(mu=mu, B=B, Z=Z, od=od, lambda_opt=fit.lambda_opt,
                       od_transformed=transformed, oc=oc)


def reweight_scores(fit: SubspaceFit, mcd_seed: int = 0, mcd_starts: int = 500):
    """Re-estimate score location/scatter (reweighted MCD, then a hard-
    rejection weighted mean/covariance excluding OC rows), absorb the shift
    into mu, whiten the scores, and flag score outliers.

    Returns (updated fit, sd, pc_mask).  Fitted values mu + B z_i are
    unchanged by construction.
    """
    Z = fit.Z
    n, d = Z.shape
    mcd = fit_mcd(Z, n_starts=mcd_starts, seed=mcd_seed)
    c_sd = np.sqrt(chi2_quantile(0.975, d))
    w = (mcd.robust_distances <= c_sd) & ~fit.oc
    kept = np.flatnonzero(w)
    if kept.size <= d:
        raise DegenerateDataError("reweight_scores: singular score scatter")
    mu_z = Z[kept].mean(axis=0)
    Czk = Z[kept] - mu_z
    S = (Czk.T @ Czk / (kept.size - 1)) * reweight_consistency_factor(d)
    vals, vecs = np.linalg.eigh(S)
    vals = np.clip(vals, 1e-12, None)
    S_half = (vecs * np.sqrt(vals)) @ vecs.T
    S_inv_half = (vecs / np.sqrt(vals)) @ vecs.T

    mu_new = fit.mu + fit.B @ mu_z
    Z_new = (Z - mu_z) @ S_inv_half
    B_new = fit.B @ S_half
    sd = np.linalg.norm(Z_new, axis=1)
    pc = (sd > c_sd) & ~fit.oc
    updated = SubspaceFit(mu=mu_new, B=B_new, Z=Z_new, od=fit.od,
                          lambda_opt=fit.lambda_opt,
                          od_transformed=fit.od_transformed, oc=fit.oc)
    return updated, sd, pc


def pc_criterion(X, fit: SubspaceFit, flags, p_total: int, d: int) -> float:
    """Information criterion for the number of factors, evaluated over the
    non-outlying observations only."""
    X = np.asarray(X, dtype=float)
    w = flags == ObsFlag.REGULAR
    ntil = int(np.sum(w))
    if ntil == 0:
        raise DegenerateDataError("pc_criterion: no regular observations")
    p = p_total
    resid = float(np.sum(fit.od[w] ** 2)) / (ntil * p)
    cent = X - fit.mu
    total = float(np.sum(np.einsum("ij,ij->i", cent, cent)[w])) / (ntil * p)
    pen = d * ((ntil + p) / (ntil * p)) * np.log(ntil * p / (ntil + p))
    return resid + total * pen


def _default_h(n: int, d: int) -> int:
    return (n - d + 2) // 2


def _resolve_h(n, d, h, h_frac):
    if h is not None:
        return int(h)
    if h_frac is not None:
        return int(min(max(int(np.floor(h_frac * n)), _default_h(n, d)), n - 1))
    return _default_h(n, d)


def _fit_fixed_d(Xstar, d, h, n_starts, seed):
    n = Xstar.shape[0]
    Z, B, mu, state = fit_lts_subspace(Xstar, d, h, n_starts=n_starts, seed=seed)
    res2, Z = _residuals(Xstar, mu, B)
    od = np.sqrt(np.maximum(res2, 0.0))
    try:
        lam, transformed = select_lambda(od, h)
        oc = transformed > OC_CUTOFF
    except DegenerateDataError:
        if np.max(od) <= 1e-8 * max(1.0, float(np.median(od))):
            lam, transformed = 1.0, np.zeros_like(od)
            oc = np.zeros(n, dtype=bool)
        else:
            raise
    interim = SubspaceFit(mu=mu, B=B, Z=Z, od=od, lambda_opt=lam,
                          od_transformed=transformed, oc=oc)
    interim = reweight_subspace(Xstar, interim, h)
    interim, sd, pc = reweight_scores(interim, mcd_seed=seed)
    flags = np.zeros(n, dtype=np.int8)
    flags[pc] = ObsFlag.PC_OUTLIER
    flags[interim.oc] = ObsFlag.OC_OUTLIER
    return interim, sd, flags, state


def fit_factor_model(X, d="auto", h: int | None = None, h_frac: float | None = None,
                     n_starts: int = 100, seed: int = 0, d_max: int = 10) -> FactorFit:
    """Full robust factor fit of a columnwise-standardized matrix.

    ``d="auto"`` selects the dimension by the information criterion; a fixed
    integer skips the search.  ``h`` defaults to floor((n-d+2)/2), maximal
    robustness; ``h_frac`` expresses it as a fraction of n instead.
    """
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("fit_factor_model: non-finite entries")
    n, p = X.shape
    Xstar, P, xbar = svd_preproject(X)
    if Xstar.shape[1] == 0:
        raise DegenerateDataError("fit_factor_model: data has no variation")

    if d == "auto":
        d_hat, fit = select_dimension(X, d_max=d_max, h=h, h_frac=h_frac,
                                      n_starts=n_starts, seed=seed,
                                      _pre=(Xstar, P, xbar))
        return fit

    d = int(d)
    h_d = _resolve_h(n, d, h, h_frac)
    interim, sd, flags, state = _fit_fixed_d(Xstar, d, h_d, n_starts, seed)
    pc_val = pc_criterion(Xstar, interim, flags, p, d)
    return FactorFit(mu=P @ interim.mu + xbar, B=P @ interim.B, Z=interim.Z,
                     d=d, h=h_d, od=interim.od, sd=sd,
                     od_transformed=interim.od_transformed, flags=flags,
                     lambda_opt=interim.lambda_opt, lts_state=state,
                     pc_value=pc_val)


def select_dimension(X, d_max: int = 10, h: int | None = None,
                     h_frac: float | None = None, n_starts: int = 100,
                     seed: int = 0, _pre=None):
    """Run the full robust fit for d = 1..d_max and keep the criterion argmin.

    Returns (d_hat, fit).  Per-d failures are skipped; if every candidate
    fails the last error is re-raised as a degenerate-data condition.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if _pre is None:
        Xstar, P, xbar = svd_preproject(X)
    else:
        Xstar, P, xbar = _pre
    r = Xstar.shape[1]
    best = None
    errors = []
    for d in range(1, int(d_max) + 1):
        h_d = _resolve_h(n, d, h, h_frac)
        if not (1 <= d <= min(h_d - 1, r)):
            errors.append((d, ValueError("dimension exceeds usable rank")))
            continue
        try:
            interim, sd, flags, state = _fit_fixed_d(Xstar, d, h_d, n_starts, seed)
            val = pc_criterion(Xstar, interim, flags, p, d)
        except (DegenerateDataError, RankDeficientError, ValueError) as err:
            errors.append((d, err))
            continue
        if best is None or val < best[0]:
            best = (val, d, h_d, interim, sd, flags, state)
    if best is None:
        detail = "; ".join(f"d={d}: {e}" for d, e in errors)
        raise DegenerateDataError(f"select_dimension: no valid dimension ({detail})")
    val, d, h_d, interim, sd, flags, state = best
    fit = FactorFit(mu=P @ interim.mu + xbar, B=P @ interim.B, Z=interim.Z,
                    d=d, h=h_d, od=interim.od, sd=sd,
                    od_transformed=interim.od_transformed, flags=flags,
                    lambda_opt=interim.lambda_opt, lts_state=state, pc_value=val)
    return d, fit
