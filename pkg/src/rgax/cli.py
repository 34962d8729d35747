"""Command-line interface.

Exit codes: 0 success (per-actor failures are recorded in the report),
2 usage error, 3 data error, 4 numerical failure. Every run writes a
``manifest.json`` (or ``<output>.manifest.json``) with the command, flags,
seed, input digests and output paths.
"""

import argparse
import datetime as dt
import hashlib
import json
import os
import sys
from pathlib import Path

import pandas as pd

from . import __version__
from .errors import DataError, NumericError, RgaxError

THREADS_ENV = "RGAX_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

METRIC_DISCIPLINE = {"gax": "shot", "gsax": "shot", "qsi": "basketball-shot",
                     "cpae": "pass", "iax": "injury-spell"}


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, args, inputs, outputs):
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "argv")}
    manifest = {
        "command": " ".join(["rgax", args.command] + ([args.sim] if getattr(args, "sim", None)
                                                      else [])),
        "argv": getattr(args, "argv", None),
        "flags": flags,
        "seed": flags.get("seed"),
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "library_version": __version__,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")


def _default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _grid(args):
    from .regressors import TuningGrid

    kw = {}
    for name, key in (("learning_rates", "learning_rates"), ("gbt_depths", "gbt_depths"),
                      ("forest_depths", "forest_depths")):
        v = getattr(args, name, None)
        if v:
            kw[key] = v
    for name in ("n_trees", "max_rounds", "patience", "folds"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return TuningGrid(**kw)


def _add_grid_flags(p):
    p.add_argument("--learning-rates", type=_floats, help="comma list (boosting)")
    p.add_argument("--gbt-depths", type=_ints, help="comma list (boosting)")
    p.add_argument("--forest-depths", type=_ints, help="comma list (forest)")
    p.add_argument("--n-trees", type=int, help="forest size")
    p.add_argument("--max-rounds", type=int, help="boosting round cap")
    p.add_argument("--patience", type=int, help="early-stopping patience")


# --- commands -----------------------------------------------------------------

def cmd_train_outcome(args):
    from .events import FeatureSpec, parse_event_table
    from .metrics import fit_outcome_model
    from .regressors import save_model

    table = parse_event_table(args.events, discipline=args.discipline)
    if args.features:
        keep = [c for c in table.spec.features if c.name in set(args.features.split(","))]
        missing = set(args.features.split(",")) - {c.name for c in keep}
        if missing:
            raise DataError(f"unknown features {sorted(missing)}")
        from .events import EventTable

        spec = FeatureSpec(tuple(keep), table.spec.outcome, table.spec.actor, table.spec.event)
        table = EventTable.from_frame(table.frame(), spec, table.discipline)
    model = fit_outcome_model(table, args.family, _grid(args), seed=args.seed)
    out = Path(args.out)
    save_model(model, out)
    print(f"{model.family} model on {table.n_rows} rows: {model.params}")
    for row in model.diagnostics.get("cv", []):
        print("  lr={learning_rate} depth={max_depth} rounds={rounds} "
              "cv_loss={cv_loss:.6f}".format(**row))
    for row in model.diagnostics.get("oob_grid", []):
        print("  mtry={mtry} depth={max_depth} oob_loss={oob_loss:.6f}".format(**row))
    write_manifest(str(out) + ".manifest.json", args, [args.events], [out])
    return EXIT_OK


def _load_evaluation_table(args):
    from .events import parse_event_table

    discipline = args.discipline or METRIC_DISCIPLINE[args.metric]
    table = parse_event_table(args.events, discipline=discipline)
    if args.metric == "gsax" and table.discipline == "shot":
        table = table.on_target_only()
    return table


def cmd_evaluate(args):
    from .events import filter_cohort
    from .gcm import IntervalSpec
    from .metrics import MetricConfig, evaluate_all, fit_outcome_model
    from .plots import render_plots
    from .regressors import load_model

    if args.metric == "iax":
        if args.outcome_model is not None:
            raise _Usage("injury metrics fit their hazard model; drop --outcome-model")
    elif (args.outcome_model is None) == (args.train is None):
        raise _Usage("give exactly one of --outcome-model and --train")
    table = _load_evaluation_table(args)
    grid = _grid(args)
    config = MetricConfig(
        metric=args.metric, qsi_mode=args.qsi_mode, propensity=args.propensity, grid=grid,
        outcome_source="train-fresh" if args.train else "load-file",
        outcome_family=args.train if args.train in ("gbt", "forest", "logistic") else None,
        cross_fitting=args.cross_fitting, folds=args.folds,
        interval=IntervalSpec(args.level, args.sided, args.rho0), adjust=args.adjust,
        seed=args.seed)
    inputs = [args.events]
    if args.metric == "iax":
        from .survival import fit_cox_breslow, fit_nelson_aalen

        if args.train == "nelson-aalen":
            outcome = fit_nelson_aalen(table)
        elif args.train in (None, "cox-breslow"):
            outcome = fit_cox_breslow(table)
        else:
            raise _Usage("injury metrics train a hazard with --train cox-breslow|nelson-aalen")
    elif args.outcome_model:
        outcome = load_model(args.outcome_model)
        inputs.append(args.outcome_model)
    else:
        if args.train not in ("gbt", "forest", "logistic"):
            raise _Usage("--train must be gbt, forest or logistic")
        outcome = fit_outcome_model(table, args.train, grid, seed=args.seed)
    cohort = filter_cohort(table, args.min_units, args.min_positive)
    if not cohort:
        raise DataError(f"no actor has at least {args.min_units} units and "
                        f"{args.min_positive} positive outcomes")
    report = evaluate_all(table, cohort, outcome, config, threads=args.threads)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {"report.json": report.to_json(), "report.csv": report.to_csv(),
             "plot_data.csv": report.plot_data_csv()}
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
    svgs = render_plots(out / "plot_data.csv", out, args.metric)
    outputs = [out / n for n in files] + list(svgs.values())
    write_manifest(out / "manifest.json", args, inputs, outputs)
    print(f"{len(report)} actors evaluated, {len(report.failures)} failed; "
          f"R = {report.pearson_r:.3f}; report in {out}")
    return EXIT_OK


def cmd_team_strength(args):
    from .teams import MatchTable, fit_team_strengths, parse_match_table

    matches = parse_match_table(args.matches)
    asof = dt.date.fromisoformat(args.asof) if args.asof else None
    if asof is not None:
        keep = [i for i, d in enumerate(matches.dates) if d <= asof]
        if not keep:
            raise DataError(f"--asof {asof} is before every match")
        fr = matches.to_frame().iloc[keep]
        matches = MatchTable.from_records(list(fr["date"]), list(fr["home_team"]),
                                          list(fr["away_team"]), fr["home_goals"],
                                          fr["away_goals"])
    st = fit_team_strengths(matches, asof, args.period, independent=args.independent)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "strengths.csv").write_text(st.to_csv(), encoding="utf-8")
    (out / "strengths.json").write_text(st.to_json(), encoding="utf-8")
    write_manifest(out / "manifest.json", args, [args.matches],
                   [out / "strengths.csv", out / "strengths.json"])
    print(f"{len(st.att)} teams, homeAdvantage {st.homeAdvantage:.4f}, "
          f"lambda_C {st.lambda_c:.4g}")
    return EXIT_OK


def cmd_simulate(args):
    from . import simlab
    from .events import write_event_table
    from .teams import write_match_table

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.sim == "pllm":
        cfg = simlab.PllmSimConfig(n=args.n, d_z=args.d_z, beta=args.beta, g=args.g,
                                   f=args.f, seed=args.seed)
        write_event_table(simlab.simulate_pllm(cfg), out)
    elif args.sim == "league":
        st = simlab.random_strengths(args.teams, seed=args.seed, lambda_c=args.lambda_c)
        m = simlab.simulate_league(st, args.matches, seed=args.seed + 1)
        write_match_table(m, out)
    elif args.sim == "cox":
        tab = simlab.simulate_cox(args.n, args.coef, args.censoring, args.seed,
                                  actor_effect=args.actor_effect)
        write_event_table(tab, out)
    else:
        cfg = simlab.PllmSimConfig(n=args.n, beta=args.beta, seed=args.seed)
        cell = simlab.CalibrationCell(f"beta={args.beta};h={args.h};f={args.f}", cfg,
                                      args.h, args.f, _grid(args))
        res = simlab.run_calibration([cell], args.reps, args.alpha, args.seed,
                                     threads=args.threads)
        out.write_text(simlab.calibration_csv(res), encoding="utf-8")
        r = res[0]
        print(f"rejection rate {r.rejection_rate:.4f} (band {r.band[0]:.4f}-{r.band[1]:.4f}), "
              f"one-sided power {r.power_greater:.4f}")
    write_manifest(str(out) + ".manifest.json", args, [], [out])
    return EXIT_OK


def cmd_adjust(args):
    from .multiplicity import DEPENDENCE_CAVEAT, adjust, canonical_method

    frame = pd.read_csv(args.pvalues)
    col = args.column or ("p_value" if "p_value" in frame.columns else frame.columns[-1])
    if col not in frame.columns:
        raise DataError(f"no column {col!r} in {args.pvalues}")
    method = canonical_method(args.method)
    frame["p_adjusted"] = adjust(frame[col].to_numpy(float), method)
    text = frame.to_csv(index=False, lineterminator="\n", float_format=None)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        write_manifest(str(args.out) + ".manifest.json", args, [args.pvalues], [args.out])
    else:
        sys.stdout.write(text)
    if method == "benjamini-hochberg":
        print(f"note: {DEPENDENCE_CAVEAT}", file=sys.stderr)
    return EXIT_OK


def cmd_plot(args):
    from .plots import render_plots

    paths = render_plots(args.plot_data, args.out, args.label)
    write_manifest(Path(args.out) / "plot.manifest.json", args, [args.plot_data],
                   list(paths.values()))
    return EXIT_OK


# --- parser -----------------------------------------------------------------

class _Usage(Exception):
    pass


def build_parser():
    from .events import DISCIPLINES
    from .gcm import SIDES

    p = argparse.ArgumentParser(prog="rgax", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train-outcome", help="train and save an outcome model")
    t.add_argument("--events", required=True)
    t.add_argument("--discipline", default="shot", choices=DISCIPLINES)
    t.add_argument("--family", default="gbt", choices=("gbt", "logistic", "forest"))
    t.add_argument("--features", help="comma list restricting the feature columns")
    t.add_argument("--folds", type=int, default=5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    _add_grid_flags(t)
    t.set_defaults(func=cmd_train_outcome)

    e = sub.add_parser("evaluate", help="classical and residualized metrics per actor")
    e.add_argument("--events", required=True)
    e.add_argument("--metric", default="gax", choices=tuple(METRIC_DISCIPLINE))
    e.add_argument("--discipline", choices=DISCIPLINES)
    e.add_argument("--outcome-model")
    e.add_argument("--train", choices=("gbt", "forest", "logistic", "cox-breslow",
                                       "nelson-aalen"))
    e.add_argument("--propensity", default="forest",
                   choices=("forest", "gbt", "logistic", "constant", "zero"))
    e.add_argument("--cross-fitting", default="auto", choices=("auto", "none", "oob", "kfold"))
    e.add_argument("--folds", type=int, default=5)
    e.add_argument("--qsi-mode", default="indicator", choices=("indicator", "score-value"))
    e.add_argument("--min-units", type=int, default=20)
    e.add_argument("--min-positive", type=int, default=1)
    e.add_argument("--adjust", default="holm", choices=("holm", "bh", "by", "none"))
    e.add_argument("--level", type=float, default=0.95)
    e.add_argument("--sided", default="two-sided", choices=SIDES)
    e.add_argument("--rho0", type=float, default=0.0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--threads", type=int, default=_default_threads())
    e.add_argument("--out", required=True)
    _add_grid_flags(e)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("team-strength", help="fit bivariate Poisson team ratings")
    s.add_argument("--matches", required=True)
    s.add_argument("--period", type=float, default=500.0)
    s.add_argument("--asof", help="reference date (YYYY-MM-DD); default latest match")
    s.add_argument("--independent", action="store_true", help="fix lambda_C = 0")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_team_strength)

    m = sub.add_parser("simulate", help="synthetic data and calibration studies")
    msub = m.add_subparsers(dest="sim", required=True)
    sp = msub.add_parser("pllm")
    sp.add_argument("--n", type=int, default=2000)
    sp.add_argument("--d-z", type=int, default=3)
    sp.add_argument("--beta", type=float, default=0.0)
    sp.add_argument("--g", default="sin-product", choices=("sin-product", "zero", "linear"))
    sp.add_argument("--f", default="logistic", choices=("logistic", "half"))
    sl = msub.add_parser("league")
    sl.add_argument("--teams", type=int, default=6)
    sl.add_argument("--matches", type=int, default=600)
    sl.add_argument("--lambda-c", type=float, default=0.1)
    sc = msub.add_parser("cox")
    sc.add_argument("--n", type=int, default=500)
    sc.add_argument("--coef", type=_floats, default=(0.5, -0.3))
    sc.add_argument("--censoring", type=float, default=0.2)
    sc.add_argument("--actor-effect", type=float, default=0.0)
    ca = msub.add_parser("calibrate")
    ca.add_argument("--n", type=int, default=2000)
    ca.add_argument("--beta", type=float, default=0.0)
    ca.add_argument("--reps", type=int, default=500)
    ca.add_argument("--alpha", type=float, default=0.05)
    ca.add_argument("--h", default="oracle", choices=("oracle", "forest", "gbt", "logistic",
                                                      "constant"))
    ca.add_argument("--f", default="oracle", choices=("oracle", "forest", "gbt", "logistic",
                                                      "constant"))
    ca.add_argument("--threads", type=int, default=_default_threads())
    _add_grid_flags(ca)
    for q in (sp, sl, sc, ca):
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--out", required=True)
    m.set_defaults(func=cmd_simulate)

    a = sub.add_parser("adjust", help="adjust a column of p-values")
    a.add_argument("--pvalues", required=True)
    a.add_argument("--method", default="holm", choices=("holm", "bh", "by", "none",
                                                        "benjamini-hochberg",
                                                        "benjamini-yekutieli"))
    a.add_argument("--column")
    a.add_argument("--out")
    a.set_defaults(func=cmd_adjust)

    pl = sub.add_parser("plot", help="re-render SVG plots from a plot-data CSV")
    pl.add_argument("--plot-data", required=True)
    pl.add_argument("--label", default="gax")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"rgax: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"rgax: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as exc:
        print(f"rgax: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RgaxError as exc:
        print(f"rgax: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
