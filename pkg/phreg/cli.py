"""Command-line front end: fit, predict, gof, simulate, study.

Exit codes: 0 success, 1 numerical failure, 2 usage or data error, 3 fit did not converge
(the model file is still written).
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from phreg import inference, regression, simstudy
from phreg.errors import (
    DataError,
    DomainError,
    ModelFormatError,
    PhRegError,
    SettingsError,
    SingularInformationError,
    StructureError,
    UnsupportedTransformError,
)
from phreg.phase import Family, StructureKind
from phreg.settings import configure_logging, load_settings

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3

USAGE_ERRORS = (DataError, DomainError, ModelFormatError, SettingsError, StructureError, UnsupportedTransformError)


# --- files --------------------------------------------------------------------------------


def read_csv(path):
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if df.empty:
        raise DataError(f"{path} has no rows")
    return df


def write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, allow_nan=True)
        f.write("\n")


def write_csv(path, df):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)


def save_model(path, model, response=None, fit=None):
    """ModelDocument: the fitted law, transform, coefficients and fit metadata."""
    doc = {"schema_version": SCHEMA_VERSION, **model.to_dict(), "response": response, "fit": fit or {}}
    write_json(path, doc)


def load_model(path):
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ModelFormatError(f"model file not found: {path}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path} is not a model document: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        found = doc.get("schema_version") if isinstance(doc, dict) else None
        raise ModelFormatError(f"{path}: schema version {found!r} is not supported (expected {SCHEMA_VERSION})")
    try:
        model = regression.RegressionModel.from_dict(doc)
    except KeyError as exc:
        raise ModelFormatError(f"{path}: missing field {exc}") from None
    except PhRegError as exc:
        raise ModelFormatError(f"{path}: invalid model: {exc}") from None
    return model, doc


def _split(text):
    return [s.strip() for s in (text or "").split(",") if s.strip()]


def _levels(text):
    try:
        levels = [float(s) for s in _split(text)]
    except ValueError:
        raise DomainError(f"quantile levels must be numbers, got {text!r}") from None
    bad = [q for q in levels if not 0.0 < q < 1.0]
    if bad:
        raise DomainError(f"quantile levels must lie in (0, 1), got {bad}")
    return levels


def _covariates(df, names, path):
    for col in names:
        if col not in df.columns:
            raise DataError(f"covariate column {col!r} not found in {path}", column=col)
    if not names:
        return np.zeros((len(df), 0))
    cols = regression.numeric_columns(df, names)
    return regression.Dataset(np.ones(len(df)), np.column_stack([cols[c] for c in names]), tuple(names)).X


# --- commands -----------------------------------------------------------------------------


def cmd_fit(args, settings):
    df = read_csv(args.data)
    data = regression.Dataset.from_frame(df, args.response, _split(args.covariates))
    print(f"[info] Loaded {data.n} rows from {args.data} (response={args.response}, covariates={list(data.columns)})")

    test = None
    if args.holdout:
        test, data = inference.holdout_split(data, args.holdout)
        print(f"[info] Holding out the first {test.n} rows")

    tol = args.tol if args.tol is not None else settings.em_tol
    config = regression.FitConfig.from_settings(
        settings,
        structure=StructureKind(args.structure),
        phases=args.phases,
        family=Family(args.family),
        seed=args.seed,
        tol=tol,
        max_iter=args.max_iter if args.max_iter is not None else settings.max_iter,
        link=args.link,
        threads=args.threads or settings.threads,
    )
    model, report = regression.fit(data, config)

    doc = report.to_dict()
    if model.d:
        doc["beta"] = dict(zip(model.covariates, model.beta.tolist()))
    if model.transform.n_params:
        doc["theta"] = dict(zip(model.transform.param_names, model.transform.theta))
    try:
        rep = inference.wald_report(model, data, args.information, config.kernel_tol, converged=report.converged)
        doc["inference"] = rep.to_dict()
        print(rep.to_frame().to_string(index=False))
    except SingularInformationError as exc:
        logger.warning("%s", exc)
        doc["inference"] = {"error": str(exc), "recommended_source": exc.recommended_source}
    if test is not None:
        doc["holdout_mse"] = inference.holdout_mse(model, test)

    meta = {k: doc[k] for k in ("n_obs", "loglik", "df", "aic", "bic", "iterations", "converged", "seed")}
    save_model(args.out, model, args.response, meta)
    report_path = args.report or str(Path(args.out).with_suffix(".report.json"))
    write_json(report_path, doc)
    print(f"[OK] loglik={report.loglik:.4f} df={report.df} AIC={report.aic:.2f} BIC={report.bic:.2f}")
    print(f"[done] Wrote {args.out} and {report_path}")
    if not report.converged:
        print(f"[ERROR] Fit did not converge in {report.iterations} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_predict(args, settings):
    model, _ = load_model(args.model)
    levels = _levels(args.quantiles)
    df = read_csv(args.data)
    X = _covariates(df, model.covariates, args.data)

    out = df.copy()
    means = regression.conditional_means(model, X)
    out["mean"] = means
    out["infinite_mean"] = ~np.isfinite(means)
    if levels:
        rows, inverse = (np.zeros((1, 0)), np.zeros(len(df), dtype=int)) if model.d == 0 else np.unique(X, axis=0, return_inverse=True)
        for q in levels:
            values = np.array([regression.predict_quantile(model, x, q) for x in rows])
            out[f"q{q:g}"] = values[inverse.ravel()]
    n_inf = int(out["infinite_mean"].sum())
    if n_inf:
        print(f"[info] {n_inf} row(s) have an infinite conditional mean (tail index >= 1)")
    write_csv(args.out, out)
    print(f"[done] Wrote {len(out)} predictions to {args.out}")
    return EXIT_OK


def cmd_gof(args, settings):
    model, doc = load_model(args.model)
    response = args.response or doc.get("response")
    if not response:
        raise DataError("no response column given and none stored in the model file")
    data = regression.Dataset.from_frame(read_csv(args.data), response, model.covariates)
    u = inference.pit_residuals(model, data)
    table = inference.pp_table(u)
    ks = inference.ks_statistic(u)
    crit = inference.ks_critical_value(data.n)
    write_csv(args.out, table)
    summary = {"n_obs": data.n, "ks": ks, "ks_critical_5pct": crit, "reject_5pct": bool(ks > crit)}
    if args.report:
        write_json(args.report, summary)
    print(f"[OK] KS={ks:.5f} (5% critical value {crit:.5f}) on {data.n} rows")
    print(f"[done] Wrote PP table to {args.out}")
    return EXIT_OK


def cmd_simulate(args, settings):
    rng = np.random.default_rng(args.seed)
    if args.synthetic:
        config = simstudy.SynthConfig.from_json(args.synth_config, n=args.n, rho=args.rho, seed=args.seed)
        data, labels = simstudy.generate(config)
        out = simstudy.to_frame(data, labels)
    else:
        if not args.model:
            raise DataError("simulate needs a model file or --synthetic")
        model, doc = load_model(args.model)
        if model.d:
            if not args.covariates_csv:
                raise DataError(f"model has covariates {list(model.covariates)}; pass --covariates-csv")
            cov = read_csv(args.covariates_csv)
            X = _covariates(cov, model.covariates, args.covariates_csv)
        else:
            X = np.zeros((args.n or 1000, 0))
        y = regression.simulate(model, X, seed=rng)
        out = pd.DataFrame(X, columns=list(model.covariates))
        out.insert(0, doc.get("response") or "y", y)
    write_csv(args.out, out)
    print(f"[done] Wrote {len(out)} rows to {args.out} (seed={args.seed})")
    return EXIT_OK


def cmd_study(args, settings):
    seeds = [int(s) for s in _split(args.seeds)] or [1]
    config = simstudy.SynthConfig.from_json(args.synth_config, n=args.n)
    fit_config = regression.FitConfig.from_settings(
        settings,
        max_iter=args.max_iter if args.max_iter is not None else settings.max_iter,
        threads=args.threads or settings.threads,
    )
    table = simstudy.run_seeds(config, seeds, fit_config=fit_config)
    write_csv(args.out, table)
    json_path = Path(args.out).with_suffix(".json")
    write_json(json_path, {"seeds": seeds, "n_obs": config.n, "rows": json.loads(table.to_json(orient="records"))})
    cols = [c for c in ("seed", "model", "status", "loglik", "df", "aic", "bic") if c in table.columns]
    print(table[cols].to_string(index=False))
    print(f"[done] Wrote {args.out} and {json_path}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="phreg", description="Phase-type regression for heavy-tailed positive data")
    ap.add_argument("--threads", type=int, default=None, help="Worker threads for E-step chunks (default from settings)")
    ap.add_argument("--verbose", "-v", action="store_true", help="Log EM iterations")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="Fit a phase-type regression to a CSV")
    p.add_argument("data")
    p.add_argument("--response", required=True)
    p.add_argument("--covariates", default="", help="Comma-separated covariate columns (omit for a marginal fit)")
    p.add_argument("--structure", choices=[k.value for k in StructureKind], default="coxian")
    p.add_argument("--phases", type=int, default=3)
    p.add_argument("--family", choices=[f.value for f in Family], default="pareto")
    p.add_argument("--link", choices=sorted(regression.LINKS), default="exp")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--information", choices=list(inference.SOURCES), default=inference.OUTER_PRODUCT)
    p.add_argument("--holdout", type=float, default=None, help="Hold out this fraction of leading rows for MSE")
    p.add_argument("--out", "-o", default="model.json")
    p.add_argument("--report", default=None, help="Fit report path (default <out>.report.json)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="Conditional means and quantiles per row")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--quantiles", default="", help="Comma-separated levels in (0, 1)")
    p.add_argument("--out", "-o", default="predictions.csv")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gof", help="PIT residuals, PP table and KS statistic")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--response", default=None)
    p.add_argument("--out", "-o", default="pp_table.csv")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_gof)

    p = sub.add_parser("simulate", help="Sample from a fitted model or the synthetic design")
    p.add_argument("model", nargs="?")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--synth-config", default=None)
    p.add_argument("--covariates-csv", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", "-o", default="simulated.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("study", help="GLM vs phase-type regression on synthetic data")
    p.add_argument("--seeds", default="1")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--synth-config", default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--out", "-o", default="reports/study.csv")
    p.set_defaults(func=cmd_study)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        settings = load_settings()
    except SettingsError as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        return EXIT_USAGE
    configure_logging("DEBUG" if args.verbose else settings.log_level)
    if args.threads is not None and args.threads < 1:
        print("[ERROR] --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, settings)
    except USAGE_ERRORS as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PhRegError as exc:
        print(f"[ERROR] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
