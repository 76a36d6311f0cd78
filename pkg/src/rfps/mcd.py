"""Reweighted Minimum Covariance Determinant in low dimension.

FAST-MCD style: many random elemental starts, two concentration steps each,
the best few continued to convergence.  The raw h-subset estimate gets the
chi-square median-ratio consistency factor; one reweighting pass with the
0.975 chi-square cutoff then yields the final location/scatter and robust
distances.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateDataError
from .robust_stats import chi2_quantile
from .rng import spawn_rng
from scipy import stats as _stats

_KEEP_BEST = 10
_NS_MCD = 2  # stream namespace, keeps MCD draws apart from other modules
_MAX_CSTEPS = 100


@dataclass
class McdFit:
    """Reweighted MCD estimate of location/scatter in score space.

    ``location``/``scatter`` are the reweighted estimates; the raw h-subset
    stage is kept alongside for diagnostics and oracle checks.
    """
    location: np.ndarray          # (d,)
    scatter: np.ndarray           # (d, d), symmetric PSD
    raw_location: np.ndarray
    raw_scatter: np.ndarray       # consistency-corrected raw estimate
    raw_subset: np.ndarray        # (h_mcd,) indices, sorted
    robust_distances: np.ndarray  # (n,) Mahalanobis under the reweighted fit
    weights: np.ndarray           # (n,) 0/1 reweighting mask
    det_trace: list = field(default_factory=list)  # winner's C-step determinants


def _subset_stats(Z, idx):
    rows = Z[idx]
    loc = rows.mean(axis=0)
    centered = rows - loc
    cov = centered.T @ centered / (len(idx) - 1)
    return loc, np.atleast_2d(cov)


def _mahalanobis_sq(Z, loc, cov):
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None
    w = np.linalg.solve(L, (Z - loc).T)
    return np.sum(w * w, axis=0)


def _c_steps(Z, h, loc, cov, max_steps, collect=None):
    """Concentrate until the h-subset stops changing; determinant never
    increases along the way."""
    n = Z.shape[0]
    subset = None
    for _ in range(max_steps):
        d2 = _mahalanobis_sq(Z, loc, cov)
        if d2 is None:
            return None
        new = np.sort(np.argsort(d2, kind="stable")[:h])
        if subset is not None and np.array_equal(new, subset):
            break
        subset = new
        loc, cov = _subset_stats(Z, subset)
        if collect is not None:
            collect.append(float(np.linalg.det(cov)))
    return loc, cov, subset


def reweight_consistency_factor(d: int, prob: float = 0.975) -> float:
    """Truncation factor making the hard-rejection weighted covariance
    Fisher-consistent at the normal model."""
    q = chi2_quantile(prob, d)
    return prob / float(_stats.chi2.cdf(q, d + 2))


def fit_mcd(scores: np.ndarray, h_mcd: int | None = None, n_starts: int = 500,
            seed: int = 0) -> McdFit:
    """Fit the reweighted MCD to an n x d score matrix.

    h_mcd defaults to floor((n + d + 1) / 2), the maximal-breakdown choice.
    Deterministic given ``seed``: the subset draw for start ``i`` depends only
    on (seed, i).
    """
    Z = np.atleast_2d(np.asarray(scores, dtype=float))
    if Z.ndim != 2:
        raise ValueError("fit_mcd: scores must be a 2-d array")
    n, d = Z.shape
    if not (n > d >= 1):
        raise ValueError("fit_mcd: need n > d >= 1")
    h_min = (n + d + 1) // 2
    if h_mcd is None:
        h_mcd = h_min
    if not (h_min <= h_mcd <= n):
        raise ValueError(f"fit_mcd: h_mcd must lie in [{h_min}, {n}]")

    if h_mcd == n:
        loc, cov = _subset_stats(Z, np.arange(n))
        if np.linalg.det(cov) <= 0:
            raise DegenerateDataError("fit_mcd: degenerate scatter")
        raw_subset = np.arange(n)
        raw_loc, raw_cov, trace = loc, cov, []
    else:
        candidates = []
        for start in range(n_starts):
            rng = spawn_rng(seed, _NS_MCD, start)
            idx = rng.choice(n, size=d + 1, replace=False)
            loc, cov = _subset_stats(Z, idx)
            # extend degenerate elemental subsets until the scatter gains rank
            while np.linalg.det(cov) <= 0 and len(idx) < n:
                extra = rng.choice(n, size=1)
                idx = np.unique(np.concatenate([idx, extra]))
                loc, cov = _subset_stats(Z, idx)
            res = _c_steps(Z, h_mcd, loc, cov, max_steps=2)
            if res is None:
                continue
            loc, cov, subset = res
            det = float(np.linalg.det(cov))
            candidates.append((det, start, loc, cov, subset))
        if not candidates:
            raise DegenerateDataError("fit_mcd: degenerate scatter in all starts")
        candidates.sort(key=lambda t: (t[0], t[1]))
        best = None
        for det, start, loc, cov, subset in candidates[:_KEEP_BEST]:
            trace = [float(np.linalg.det(cov))]
            res = _c_steps(Z, h_mcd, loc, cov, max_steps=_MAX_CSTEPS, collect=trace)
            if res is None:
                continue
            loc, cov, subset = res
            det = float(np.linalg.det(cov))
            if best is None or det < best[0]:
                best = (det, loc, cov, subset, trace)
        if best is None or best[0] <= 0:
            raise DegenerateDataError("fit_mcd: degenerate scatter")
        _, raw_loc, raw_cov, raw_subset, trace = best

        # median-ratio consistency factor for the trimmed covariance
        d2 = _mahalanobis_sq(Z, raw_loc, raw_cov)
        factor = float(np.median(d2)) / chi2_quantile(0.5, d)
        if factor > 0:
            raw_cov = raw_cov * factor

    cutoff_sq = chi2_quantile(0.975, d)
    d2 = _mahalanobis_sq(Z, raw_loc, raw_cov)
    if d2 is None:
        raise DegenerateDataError("fit_mcd: degenerate scatter")
    w = d2 <= cutoff_sq
    if int(w.sum()) <= d:
        raise DegenerateDataError("fit_mcd: too few points pass the reweighting cutoff")
    loc_rw, cov_rw = _subset_stats(Z, np.flatnonzero(w))
    cov_rw = cov_rw * reweight_consistency_factor(d)
    rd2 = _mahalanobis_sq(Z, loc_rw, cov_rw)
    if rd2 is None:
        raise DegenerateDataError("fit_mcd: singular reweighted scatter")

    return McdFit(location=loc_rw, scatter=cov_rw, raw_location=raw_loc,
                  raw_scatter=raw_cov, raw_subset=np.asarray(raw_subset),
                  robust_distances=np.sqrt(np.maximum(rd2, 0.0)),
                  weights=w.astype(float), det_trace=trace)
