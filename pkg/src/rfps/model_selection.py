"""Final model choice along a solution path.

Nested models from the path prefix are refit by a warm-started M-step (the
marginal slopes as starting point, the S-scale of the warm-start residuals as
fixed scale).  Six criteria are evaluated on weighted residual sums of
squares: three penalties (plain, extended, and the heavier log n * log p), in
the path order and in the order of the refit coefficient magnitudes.
"""

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import RankDeficientError
from .regression import RegressionFit, m_step
from .robust_stats import TUNING_MM, mscale
from .screening import SolutionPath

WRSS_FLOOR = 1e-300


class Criterion(Enum):
    BIC = "bic"
    EBIC = "ebic"
    FPBIC = "fpbic"
    R_BIC = "r-bic"
    R_EBIC = "r-ebic"
    R_FPBIC = "r-fpbic"

    @property
    def reordered(self) -> bool:
        return self.value.startswith("r-")


def penalty_per_term(criterion: Criterion, n: int, p: int) -> float:
    base = criterion.value.removeprefix("r-")
    if base == "bic":
        return np.log(n) / n
    if base == "ebic":
        return (np.log(n) + np.log(p)) / n
    return np.log(n) * np.log(p) / n  # fpbic


@dataclass
class CriterionValue:
    criterion: Criterion
    model: np.ndarray      # selected predictor indices, ascending
    value: float
    wrss: float
    coefs: np.ndarray      # aligned with ``model``


def default_k_max(n: int, p: int) -> int:
    return int(min(n // 2, 100, p))


def refit_path(path: SolutionPath, k_max: int, c: float = TUNING_MM) -> list:
    """M-step refits of the profiled response on the first k path predictors,
    for k = 1..k_max, over the screened rows.

    No intercept: the profiled variables are centered by construction.  A
    rank-deficient design at some k truncates the sequence with a warning.
    """
    rows = path.i2
    if k_max > min(rows.size // 2, path.slopes.size):
        raise ValueError("refit_path: k_max exceeds min(|i2|/2, p)")
    Xp = path.profiled_X[rows]
    yp = path.profiled_y[rows]
    fits = []
    for k in range(1, k_max + 1):
        cols = path.order[:k]
        A = Xp[:, cols]
        init = path.slopes[cols]
        r0 = yp - A @ init
        s0 = mscale(r0)
        if s0 == 0.0:
            fits.append(RegressionFit(float("nan"), init.copy(), 0.0,
                                      (r0 == 0).astype(float), 0, True))
            continue
        try:
            fits.append(m_step(A, yp, init, s0, c=c, intercept=False))
        except RankDeficientError:
            warnings.warn(f"refit_path: design rank deficient at k={k}; "
                          "sequence truncated")
            break
    return fits


def wrss(fit: RegressionFit, X_model, y, rows) -> float:
    """Weighted residual sum of squares over ``rows``; rows outside the
    screened set carry weight zero and are simply excluded."""
    X_model = np.asarray(X_model, dtype=float)
    if X_model.ndim == 1:
        X_model = X_model[:, None]
    r = np.asarray(y, dtype=float)[rows] - X_model[rows] @ np.asarray(fit.slopes)
    return float(np.sum(fit.weights * r * r))


def _wrss_tables(path: SolutionPath, fits: list):
    """Shared WRSS tables: the per-k values and, per k, the nested sub-model
    values with coefficients reordered by decreasing magnitude."""
    rows = path.i2
    yp = path.profiled_y[rows]
    Xp = path.profiled_X[rows]
    empty_wrss = float(np.sum(yp * yp))

    wrss_k = [empty_wrss]
    nested = []  # per k: (perm, wrss for l=1..k)
    for k, fit in enumerate(fits, start=1):
        cols = path.order[:k]
        A = Xp[:, cols]
        coefs = np.asarray(fit.slopes)
        perm = np.argsort(-np.abs(coefs), kind="stable")
        contrib = A[:, perm] * coefs[perm]
        resid = yp[:, None] - np.cumsum(contrib, axis=1)
        w = fit.weights[:, None]
        vals = np.sum(w * resid * resid, axis=0)
        nested.append((perm, vals))
        wrss_k.append(float(vals[-1]))
    return wrss_k, nested


def select_model(path: SolutionPath, fits: list, criterion: Criterion,
                 n: int, p: int) -> CriterionValue:
    """Minimize log(WRSS) + |model| * penalty over the candidate family.

    Plain criteria range over the path prefixes k = 0..k_max.  Reordered
    criteria additionally range over the nested sub-models of each refit, with
    the refit coefficients and weights held fixed.  Ties break toward the
    smaller, lexicographically first model.
    """
    if not fits:
        raise ValueError("select_model: empty fit sequence")
    criterion = Criterion(criterion)
    pen = penalty_per_term(criterion, n, p)
    wrss_k, nested = _wrss_tables(path, fits)

    floored = False

    def value_of(w, size):
        nonlocal floored
        if w < WRSS_FLOOR:
            floored = True
            w = WRSS_FLOOR
        return float(np.log(w) + size * pen)

    # candidates: (value, size, model tuple, wrss, coefs)
    best = None

    def consider(w, model, coefs):
        nonlocal best
        idx = np.argsort(model)
        model = np.asarray(model)[idx]
        coefs = np.asarray(coefs)[idx]
        cand = (value_of(w, model.size), model.size, tuple(model), w, coefs)
        if best is None or cand[:3] < best[:3]:
            best = cand

    consider(wrss_k[0], np.empty(0, dtype=int), np.empty(0))
    if not criterion.reordered:
        for k, fit in enumerate(fits, start=1):
            consider(wrss_k[k], path.order[:k], fit.slopes)
    else:
        for k, fit in enumerate(fits, start=1):
            cols = path.order[:k]
            perm, vals = nested[k - 1]
            coefs = np.asarray(fit.slopes)
            for l in range(1, k + 1):
                consider(vals[l - 1], cols[perm[:l]], coefs[perm[:l]])

    if floored:
        warnings.warn("select_model: zero WRSS floored (perfect fit)")
    value, size, model, w, coefs = best
    return CriterionValue(criterion=criterion, model=np.asarray(model, dtype=int),
                          value=value, wrss=w, coefs=coefs)


def criteria_table(path: SolutionPath, fits: list, n: int, p: int):
    """Per-k table: k, WRSS_(k) and the six criterion values (the reordered
    ones minimized over the nested sub-models of that k)."""
    wrss_k, nested = _wrss_tables(path, fits)
    rows = []
    for k in range(0, len(fits) + 1):
        row = {"k": k, "wrss": max(wrss_k[k], WRSS_FLOOR)}
        for crit in Criterion:
            pen = penalty_per_term(crit, n, p)
            if not crit.reordered or k == 0:
                row[crit.value] = float(np.log(max(wrss_k[k], WRSS_FLOOR)) + k * pen)
            else:
                _, vals = nested[k - 1]
                row[crit.value] = min(
                    float(np.log(max(vals[l - 1], WRSS_FLOOR)) + l * pen)
                    for l in range(1, k + 1))
        rows.append(row)
    return rows
