"""Benchmark data generators and the screening experiment harness.

Predictors follow a latent-factor design; the error is correlated with the
factors.  Contamination replaces rows by score (PC) or orthogonal-complement
(OC) leverage points, each with model-following (good) or far-tail (bad)
responses, plus optional extra vertical outliers.  Screening quality is the
minimal model size needed to cover m of the truly active predictors.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum

import numpy as np

from .rng import spawn_rng
from .screening import Method, SolutionPath, fpsis_path, rfpsis_path, sis_path
from . import model_selection as ms

_NS_SIM = 4

# stream purposes (one per drawn quantity, so adding draws never shifts others)
_P_Z, _P_B, _P_XT, _P_SIGN, _P_MAG, _P_EPS = 0, 1, 2, 3, 4, 5
_P_LEV_ROWS, _P_LEV_SCORES, _P_LEV_Y, _P_VERT_ROWS, _P_VERT_Y, _P_OC_X = 6, 7, 8, 9, 10, 11


class LeverageKind(Enum):
    NONE = "none"
    PC_GOOD = "pc_good"
    PC_BAD = "pc_bad"
    OC_GOOD = "oc_good"
    OC_BAD = "oc_bad"


class TrueLabel(IntEnum):
    REGULAR = 0
    VERTICAL = 1
    PC_GOOD = 2
    PC_BAD = 3
    OC_GOOD = 4
    OC_BAD = 5


@dataclass(frozen=True)
class SimulationSpec:
    n: int
    p: int
    d: int
    c: float = 5.0                 # signal-to-noise ratio
    eps_leverage: float = 0.0
    eps_vertical: float = 0.0
    leverage_kind: LeverageKind = LeverageKind.NONE
    seed: int = 0
    m_true: int = 8

    def validate(self):
        if self.n <= 2 * self.d or self.d < 1:
            raise ValueError("spec: need n > 2d and d >= 1")
        if self.p < self.m_true:
            raise ValueError("spec: p must be at least m_true")
        if self.c <= 0:
            raise ValueError("spec: signal-to-noise ratio must be positive")
        if min(self.eps_leverage, self.eps_vertical) < 0 or \
                self.eps_leverage + self.eps_vertical >= 0.5:
            raise ValueError("spec: contamination fractions must be nonnegative "
                             "and sum to less than 0.5")
        if self.eps_leverage > 0 and self.leverage_kind == LeverageKind.NONE:
            raise ValueError("spec: leverage fraction set but no leverage kind")


@dataclass
class SimulatedDataset:
    X: np.ndarray
    y: np.ndarray
    theta0: np.ndarray
    true_model: np.ndarray      # indices of the active predictors
    labels: np.ndarray          # TrueLabel codes
    epsilon: np.ndarray         # generating error; nan where y was replaced


def _far_tail_means(y_clean_rows, y_min, y_max):
    mid = (y_min + y_max) / 2.0
    return np.where(y_clean_rows <= mid, y_max, y_min)


def generate(spec: SimulationSpec) -> SimulatedDataset:
    """Draw one dataset according to the spec.

    Streams are split by purpose, so e.g. the vertical-outlier draws do not
    depend on whether leverage rows exist.
    """
    spec.validate()
    n, p, d, m = spec.n, spec.p, spec.d, spec.m_true

    def rng(purpose):
        return spawn_rng(spec.seed, _NS_SIM, purpose)

    Z = rng(_P_Z).standard_normal((n, d))
    B = rng(_P_B).standard_normal((p, d))
    Xt = rng(_P_XT).standard_normal((n, p))
    X = Z @ B.T + Xt

    theta0 = np.zeros(p)
    signs = np.where(rng(_P_SIGN).random(m) < 0.4, -1.0, 1.0)
    mags = np.abs(rng(_P_MAG).standard_normal(m))
    theta0[:m] = signs * (4.0 * np.log(n) / np.sqrt(n) + mags)
    true_model = np.arange(m)

    signal = X @ theta0
    sigma_eps = np.sqrt(float(np.var(signal, ddof=1)) / spec.c)
    alpha0 = 0.8 * sigma_eps * np.sqrt(2.0) * np.ones(d)
    eps_tilde = 0.6 * sigma_eps * rng(_P_EPS).standard_normal(n)
    epsilon = Z @ alpha0 + eps_tilde
    y = signal + epsilon

    labels = np.zeros(n, dtype=np.int8)
    n_lev = int(round(spec.eps_leverage * n))
    n_vert = int(round(spec.eps_vertical * n))
    lev_rows = np.sort(rng(_P_LEV_ROWS).choice(n, size=n_lev, replace=False)) \
        if n_lev else np.empty(0, dtype=int)
    rest = np.setdiff1d(np.arange(n), lev_rows)
    vert_rows = np.sort(rest[rng(_P_VERT_ROWS).choice(rest.size, size=n_vert,
                                                      replace=False)]) \
        if n_vert else np.empty(0, dtype=int)

    regular = np.setdiff1d(np.arange(n), np.union1d(lev_rows, vert_rows))
    y_clean = y.copy()
    y_min, y_max = float(y_clean[regular].min()), float(y_clean[regular].max())

    kind = spec.leverage_kind
    if n_lev:
        if kind in (LeverageKind.PC_GOOD, LeverageKind.PC_BAD):
            Z_pc = rng(_P_LEV_SCORES).standard_normal((n_lev, d)) + 5.0
            X[lev_rows] = Z_pc @ B.T + Xt[lev_rows]
            if kind == LeverageKind.PC_GOOD:
                epsilon[lev_rows] = Z_pc @ alpha0 + eps_tilde[lev_rows]
                y[lev_rows] = X[lev_rows] @ theta0 + epsilon[lev_rows]
                labels[lev_rows] = TrueLabel.PC_GOOD
            else:
                mu_y = _far_tail_means(y_clean[lev_rows], y_min, y_max)
                y[lev_rows] = mu_y + rng(_P_LEV_Y).standard_normal(n_lev)
                epsilon[lev_rows] = np.nan
                labels[lev_rows] = TrueLabel.PC_BAD
        else:  # OC leverage: rows drawn off the factor subspace entirely
            mu_oc = np.zeros(p)
            mu_oc[:int(np.floor(0.2 * p))] = 10.0
            X[lev_rows] = rng(_P_OC_X).standard_normal((n_lev, p)) + mu_oc
            if kind == LeverageKind.OC_GOOD:
                # no factor scores behind these rows: idiosyncratic error only
                epsilon[lev_rows] = eps_tilde[lev_rows]
                y[lev_rows] = X[lev_rows] @ theta0 + epsilon[lev_rows]
                labels[lev_rows] = TrueLabel.OC_GOOD
            else:
                mu_y = _far_tail_means(y_clean[lev_rows], y_min, y_max)
                y[lev_rows] = mu_y + rng(_P_LEV_Y).standard_normal(n_lev)
                epsilon[lev_rows] = np.nan
                labels[lev_rows] = TrueLabel.OC_BAD

    if n_vert:
        mu_y = _far_tail_means(y_clean[vert_rows], y_min, y_max)
        y[vert_rows] = mu_y + rng(_P_VERT_Y).standard_normal(n_vert)
        epsilon[vert_rows] = np.nan
        labels[vert_rows] = TrueLabel.VERTICAL

    return SimulatedDataset(X=X, y=y, theta0=theta0, true_model=true_model,
                            labels=labels, epsilon=epsilon)


def minimal_model_size(path: SolutionPath | np.ndarray, true_model) -> np.ndarray:
    """MMS(m): the smallest path prefix containing m of the true predictors,
    for m = 1..|true_model|."""
    order = path.order if isinstance(path, SolutionPath) else np.asarray(path)
    true_model = np.asarray(true_model)
    hits = np.isin(order, true_model)
    covered = np.cumsum(hits)
    if covered[-1] < true_model.size:
        raise ValueError("minimal_model_size: path does not cover the true model")
    return np.searchsorted(covered, np.arange(1, true_model.size + 1)) + 1


def _replicate_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence(entropy=int(seed),
                                      spawn_key=(_NS_SIM, rep)).generate_state(1)[0])


def _classical_standardize(X, y):
    mu = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    sd = np.where(sd == 0.0, 1.0, sd)
    return (X - mu) / sd, y - y.mean()


@dataclass
class SimulationReport:
    spec: SimulationSpec
    methods: list
    n_replicates: int
    mms: dict                    # method -> (R, m_true) array, nan on failure
    tp: dict = field(default_factory=dict)   # (method, criterion) -> (R,) array
    fp: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def quantile_rows(self):
        """One row per (method, m): median and 95% order statistic of MMS."""
        rows = []
        for method in self.methods:
            arr = self.mms[method.value]
            for m in range(arr.shape[1]):
                vals = arr[:, m]
                vals = vals[~np.isnan(vals)]
                rows.append({"method": method.value, "m": m + 1,
                             "median": float(np.median(vals)),
                             "q95": float(order_statistic_quantile(vals, 0.95))})
        return rows


def order_statistic_quantile(values, q: float) -> float:
    """Lower order statistic at level q (no interpolation)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return float("nan")
    k = min(int(np.ceil(q * v.size)), v.size)
    return float(v[max(k - 1, 0)])


def _run_replicate(spec, rep, methods, criteria, k_max, screen_opts):
    rep_spec = replace(spec, seed=_replicate_seed(spec.seed, rep))
    data = generate(rep_spec)
    out = {"mms": {}, "tp": {}, "fp": {}}
    Xc, yc = _classical_standardize(data.X, data.y)
    for method in methods:
        if method == Method.SIS:
            path = sis_path(Xc, yc)
        elif method == Method.FPSIS:
            path = fpsis_path(Xc, yc, d=spec.d)
        else:
            path = rfpsis_path(data.X, data.y, d=spec.d,
                               seed=rep_spec.seed, **screen_opts)
        out["mms"][method.value] = minimal_model_size(path, data.true_model)
        if criteria:
            kmax = k_max or ms.default_k_max(spec.n, spec.p)
            fits = ms.refit_path(path, kmax)
            for crit in criteria:
                sel = ms.select_model(path, fits, crit, spec.n, spec.p)
                key = (method.value, ms.Criterion(crit).value)
                hits = np.isin(sel.model, data.true_model)
                out["tp"][key] = int(hits.sum())
                out["fp"][key] = int((~hits).sum())
    return out


def run_experiment(spec: SimulationSpec, methods, n_replicates: int,
                   criteria=None, k_max: int | None = None, threads: int = 1,
                   **screen_opts) -> SimulationReport:
    """Generate ``n_replicates`` datasets and run each requested method.

    Replicates are independent (seeds derived per replicate) and may run in
    parallel; a replicate failure is recorded and skipped, never fatal.
    """
    spec.validate()
    if n_replicates < 1:
        raise ValueError("run_experiment: need at least one replicate")
    methods = [Method(m) for m in methods]
    criteria = [ms.Criterion(c) for c in criteria] if criteria else []

    def job(rep):
        try:
            return rep, _run_replicate(spec, rep, methods, criteria, k_max,
                                       screen_opts), None
        except Exception as err:  # recorded, not fatal
            return rep, None, f"replicate {rep}: {err}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(job, range(n_replicates)))
    else:
        results = [job(rep) for rep in range(n_replicates)]

    mms = {m.value: np.full((n_replicates, spec.m_true), np.nan) for m in methods}
    tp = {}
    fp = {}
    failures = []
    for rep, out, err in results:
        if err is not None:
            failures.append(err)
            continue
        for m in methods:
            mms[m.value][rep] = out["mms"][m.value]
        for key, v in out["tp"].items():
            tp.setdefault(key, np.full(n_replicates, np.nan))[rep] = v
        for key, v in out["fp"].items():
            fp.setdefault(key, np.full(n_replicates, np.nan))[rep] = v

    return SimulationReport(spec=spec, methods=methods,
                            n_replicates=n_replicates, mms=mms, tp=tp, fp=fp,
                            failures=failures)
