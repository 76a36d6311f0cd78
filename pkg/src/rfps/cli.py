"""Batch command-line front door.

Subcommands: ``screen`` (solution path + outlier diagnostics), ``select``
(final model via the BIC family), ``simulate`` (benchmark harness), and
``diagnose`` (factor-model diagnostics only).  Settings resolve in the order
flags > config file > RFPS_SEED environment variable > defaults.  Data goes
to files; progress goes to standard error.  Exit codes: 0 ok, 2 input or
precondition error, 3 pipeline error.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio
from . import model_selection as ms
from .exceptions import ConvergenceError, DegenerateDataError, RankDeficientError
from .factor_model import ObsFlag, fit_factor_model
from .screening import Method, RowLabel, fpsis_path, rfpsis_path, sis_path
from .simulation import LeverageKind, SimulationSpec, run_experiment
from .robust_stats import qn_scale_columns

_PIPELINE_ERRORS = (DegenerateDataError, RankDeficientError, ConvergenceError,
                    np.linalg.LinAlgError)


def _log(msg):
    print(msg, file=sys.stderr)


class _Exit(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def _build_parser():
    parser = argparse.ArgumentParser(prog="rfps",
                                     description="Robust factor-profiled variable screening")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="key=value config file; flags override it")
        sp.add_argument("--input", help="input CSV (header row required)")
        sp.add_argument("--response", help="name of the response column")
        sp.add_argument("--method", choices=[m.value for m in Method])
        sp.add_argument("--d", help="number of factors: 'auto' or an integer")
        sp.add_argument("--h-frac", type=float, dest="h_frac",
                        help="trimming fraction of n (default: maximal robustness)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--k-max", type=int, dest="k_max")
        sp.add_argument("--criteria", help="comma list from: " +
                        ",".join(c.value for c in ms.Criterion))
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int)

    for name in ("screen", "select", "simulate", "diagnose"):
        add_common(sub.add_parser(name))
    return parser


def _resolve(args, config, key, default=None, cast=None):
    val = getattr(args, key, None)
    if val is None:
        val = config.get(key.replace("_", "-"), config.get(key))
    if val is None:
        return default
    if cast is not None and isinstance(val, str):
        try:
            return cast(val)
        except ValueError:
            raise _Exit(2, f"bad value for '{key}': {val!r}")
    return val


def _load_settings(args):
    config = {}
    if args.config:
        try:
            config = dataio.read_config(args.config)
        except (OSError, ValueError) as err:
            raise _Exit(2, str(err))
    seed = _resolve(args, config, "seed", cast=int)
    if seed is None:
        env = os.environ.get("RFPS_SEED")
        if env is not None:
            try:
                seed = int(env)
            except ValueError:
                raise _Exit(2, f"RFPS_SEED is not an integer: {env!r}")
        else:
            seed = 0
    threads = _resolve(args, config, "threads", cast=int)
    if threads is None:
        threads = os.cpu_count() or 1
    return config, seed, max(1, threads)


def _load_dataset(args, config):
    path = _resolve(args, config, "input")
    if not path:
        raise _Exit(2, "no input file given (--input)")
    response = _resolve(args, config, "response")
    if not response:
        raise _Exit(2, "no response column given (--response)")
    try:
        header, data = dataio.read_matrix_csv(path)
    except OSError as err:
        raise _Exit(2, f"cannot read {path}: {err}")
    except ValueError as err:
        raise _Exit(2, str(err))
    if response not in header:
        raise _Exit(2, f"response column '{response}' not found in {path}")
    ycol = header.index(response)
    y = data[:, ycol]
    X = np.delete(data, ycol, axis=1)
    names = [h for i, h in enumerate(header) if i != ycol]
    return X, y, names


def _out_dir(args, config):
    out = Path(_resolve(args, config, "out", default="."))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise _Exit(2, f"cannot create output directory {out}: {err}")
    return out


def _parse_d(val):
    if val is None or val == "auto":
        return "auto"
    try:
        return int(val)
    except ValueError:
        raise _Exit(2, f"--d must be 'auto' or an integer, got {val!r}")


def _run_path(args, config, X, y, seed, threads):
    method = Method(_resolve(args, config, "method", default="rfpsis"))
    d = _parse_d(_resolve(args, config, "d"))
    h_frac = _resolve(args, config, "h_frac", cast=float)
    stage = "screening"
    try:
        if method == Method.SIS:
            mu, sd = X.mean(axis=0), X.std(axis=0, ddof=1)
            if np.any(sd == 0.0):
                raise _Exit(2, "zero-variance predictor column")
            return sis_path((X - mu) / sd, y - y.mean()), method
        if method == Method.FPSIS:
            mu, sd = X.mean(axis=0), X.std(axis=0, ddof=1)
            if np.any(sd == 0.0):
                raise _Exit(2, "zero-variance predictor column")
            return fpsis_path((X - mu) / sd, y - y.mean(), d=d), method
        stage = "factor fit / screening"
        return rfpsis_path(X, y, d=d, h_frac=h_frac, seed=seed,
                           threads=threads), method
    except _PIPELINE_ERRORS as err:
        raise _Exit(3, f"stage '{stage}' failed: {err}")
    except ValueError as err:
        raise _Exit(2, str(err))


def _write_screen_outputs(out, path, method, names, seed):
    p = len(names)
    dataio.write_rows_csv(out / "path.csv", ["rank", "predictor", "slope"],
                          [[r + 1, names[j], float(path.slopes[j])]
                           for r, j in enumerate(path.order)])
    n = path.profiled_y.shape[0]
    if path.report is not None:
        rep = path.report
        rows = [[i + 1, RowLabel(rep.labels[i]).label, float(rep.od[i]),
                 float(rep.sd[i]), float(rep.t[i])] for i in range(n)]
    else:
        rows = [[i + 1, RowLabel.REGULAR.label, float("nan"), float("nan"),
                 float("nan")] for i in range(n)]
    dataio.write_rows_csv(out / "outliers.csv", ["index", "label", "od", "sd", "t"],
                          rows)
    fit = path.factor
    info = {"method": method.value, "seed": seed, "p": p, "n": n}
    if fit is not None:
        info.update({
            "d": int(fit.d), "lambda_opt": fit.lambda_opt, "h": int(fit.h),
            "n_oc": fit.n_oc, "n_pc": fit.n_pc,
            "mu_summary": {"min": float(fit.mu.min()),
                           "median": float(np.median(fit.mu)),
                           "max": float(fit.mu.max())},
        })
    else:
        info.update({"d": 0, "lambda_opt": None, "h": None})
    dataio.write_json(out / "factor.json", info)


def cmd_screen(args) -> int:
    config, seed, threads = _load_settings(args)
    X, y, names = _load_dataset(args, config)
    out = _out_dir(args, config)
    path, method = _run_path(args, config, X, y, seed, threads)
    _write_screen_outputs(out, path, method, names, seed)
    _log(f"screen: wrote {out / 'path.csv'}")
    return 0


def cmd_select(args) -> int:
    config, seed, threads = _load_settings(args)
    X, y, names = _load_dataset(args, config)
    out = _out_dir(args, config)
    path, method = _run_path(args, config, X, y, seed, threads)

    n, p = X.shape
    k_max = _resolve(args, config, "k_max", cast=int)
    if k_max is None:
        k_max = max(1, min(ms.default_k_max(n, p), len(path.i2) // 2))
    crit_arg = _resolve(args, config, "criteria")
    try:
        criteria = ([ms.Criterion(c.strip()) for c in crit_arg.split(",")]
                    if crit_arg else list(ms.Criterion))
    except ValueError:
        raise _Exit(2, f"unknown criterion in {crit_arg!r}")

    stage = "path refits"
    try:
        fits = ms.refit_path(path, k_max)
        stage = "criterion evaluation"
        selections = [ms.select_model(path, fits, crit, n, p) for crit in criteria]
        table = ms.criteria_table(path, fits, n, p)
    except _PIPELINE_ERRORS as err:
        raise _Exit(3, f"stage '{stage}' failed: {err}")
    except ValueError as err:
        raise _Exit(2, str(err))

    rows = [[sel.criterion.value,
             ";".join(names[j] for j in sel.model),
             ";".join(repr(float(c)) for c in sel.coefs),
             int(sel.model.size), float(sel.wrss), float(sel.value)]
            for sel in selections]
    dataio.write_rows_csv(out / "selection.csv",
                          ["criterion", "model", "coefficients", "size", "wrss",
                           "value"], rows)
    cols = ["k", "wrss"] + [c.value for c in ms.Criterion]
    dataio.write_rows_csv(out / "criteria_table.csv", cols,
                          [[row[c] for c in cols] for row in table])
    _write_screen_outputs(out, path, method, names, seed)
    _log(f"select: wrote {out / 'selection.csv'}")
    return 0


_SPEC_KEYS = {"n": int, "p": int, "d": int, "c": float, "eps_leverage": float,
              "eps_vertical": float, "m_true": int}


def cmd_simulate(args) -> int:
    config, seed, threads = _load_settings(args)
    out = _out_dir(args, config)
    if not config:
        raise _Exit(2, "simulate needs a --config file with the generator spec")

    kwargs = {}
    for key, cast in _SPEC_KEYS.items():
        if key in config:
            try:
                kwargs[key] = cast(config[key])
            except ValueError:
                raise _Exit(2, f"bad value for '{key}': {config[key]!r}")
    try:
        kind = LeverageKind(config.get("leverage_kind", "none"))
    except ValueError:
        raise _Exit(2, f"unknown leverage_kind: {config.get('leverage_kind')!r}")
    missing = [k for k in ("n", "p", "d") if k not in kwargs]
    if missing:
        raise _Exit(2, f"spec is missing required keys: {', '.join(missing)}")
    try:
        spec = SimulationSpec(seed=seed, leverage_kind=kind, **kwargs)
        spec.validate()
    except (TypeError, ValueError) as err:
        raise _Exit(2, f"invalid simulation spec: {err}")

    n_reps = _resolve(args, config, "n_replicates", default=1, cast=int)
    methods = [m.strip() for m in
               str(config.get("methods", "rfpsis")).split(",") if m.strip()]
    crit_arg = _resolve(args, config, "criteria")
    criteria = [c.strip() for c in crit_arg.split(",")] if crit_arg else None
    k_max = _resolve(args, config, "k_max", cast=int)
    try:
        methods = [Method(m) for m in methods]
    except ValueError:
        raise _Exit(2, f"unknown method in {config.get('methods')!r}")

    stage = "simulation"
    try:
        report = run_experiment(spec, methods, n_replicates=n_reps,
                                criteria=criteria, k_max=k_max, threads=threads)
    except _PIPELINE_ERRORS as err:
        raise _Exit(3, f"stage '{stage}' failed: {err}")
    except ValueError as err:
        raise _Exit(2, str(err))

    dataio.write_rows_csv(out / "report.csv", ["method", "m", "median", "q95"],
                          [[r["method"], r["m"], r["median"], r["q95"]]
                           for r in report.quantile_rows()])
    rep_rows = []
    for method in report.methods:
        arr = report.mms[method.value]
        for rep in range(n_reps):
            row = [rep, method.value] + [float(v) for v in arr[rep]]
            rep_rows.append(row)
    dataio.write_rows_csv(out / "replicates.csv",
                          ["replicate", "method"] +
                          [f"mms_{m + 1}" for m in range(spec.m_true)], rep_rows)
    if report.tp:
        rows = [[meth, crit, float(np.nanmean(report.tp[(meth, crit)])),
                 float(np.nanmean(report.fp[(meth, crit)]))]
                for (meth, crit) in sorted(report.tp)]
        dataio.write_rows_csv(out / "selection_metrics.csv",
                              ["method", "criterion", "tp_mean", "fp_mean"], rows)
    spec_obj = {"n": spec.n, "p": spec.p, "d": spec.d, "c": spec.c,
                "eps_leverage": spec.eps_leverage,
                "eps_vertical": spec.eps_vertical,
                "leverage_kind": spec.leverage_kind.value, "seed": spec.seed,
                "m_true": spec.m_true, "n_replicates": n_reps,
                "methods": [m.value for m in methods]}
    dataio.write_json(out / "spec.json", spec_obj)
    if report.failures:
        _log("simulate: " + "; ".join(report.failures))
    _log(f"simulate: wrote {out / 'report.csv'}")
    return 0


def cmd_diagnose(args) -> int:
    config, seed, threads = _load_settings(args)
    X, y, names = _load_dataset(args, config)
    out = _out_dir(args, config)
    d = _parse_d(_resolve(args, config, "d"))
    h_frac = _resolve(args, config, "h_frac", cast=float)
    med = np.median(X, axis=0)
    qn = qn_scale_columns(X)
    Xs = (X - med) / np.where(qn == 0.0, 1.0, qn)
    stage = "factor fit"
    try:
        fit = fit_factor_model(Xs, d=d, h_frac=h_frac, seed=seed)
    except _PIPELINE_ERRORS as err:
        raise _Exit(3, f"stage '{stage}' failed: {err}")
    except ValueError as err:
        raise _Exit(2, str(err))
    flag_names = {ObsFlag.REGULAR: "regular", ObsFlag.PC_OUTLIER: "pc_outlier",
                  ObsFlag.OC_OUTLIER: "oc_outlier"}
    rows = [[i + 1, float(fit.od[i]), float(fit.sd[i]),
             float(fit.od_transformed[i]), flag_names[ObsFlag(fit.flags[i])]]
            for i in range(X.shape[0])]
    dataio.write_rows_csv(out / "diagnostics.csv",
                          ["index", "od", "sd", "transformed_od", "flag"], rows)
    dataio.write_json(out / "factor.json",
                      {"d": int(fit.d), "lambda_opt": fit.lambda_opt,
                       "h": int(fit.h), "n_oc": fit.n_oc, "n_pc": fit.n_pc,
                       "seed": seed})
    _log(f"diagnose: wrote {out / 'diagnostics.csv'}")
    return 0


_COMMANDS = {"screen": cmd_screen, "select": cmd_select,
             "simulate": cmd_simulate, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _Exit as err:
        _log(f"rfps {args.command}: {err}")
        return err.code


if __name__ == "__main__":
    sys.exit(main())
