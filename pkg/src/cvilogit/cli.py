"""Command line interface.

Subcommands::

    cvilogit simulate    --config dgp.json --out DIR
    cvilogit fit         --data train.csv --config fit.json --out artifact.json [--trace trace.csv]
    cvilogit predict     --artifact artifact.json --data test.csv --out pred.csv
    cvilogit evaluate    (--artifact artifact.json | --predictions pred.csv) --data test.csv --out DIR
    cvilogit elasticity  --artifact artifact.json --data train.csv --item 2 --price lprice --out el.csv

Failures exit with a nonzero status and print one line to stderr of the form
``error <CODE>: <message>``.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import io
from .errors import DatasetError, DomainError, NumericalError, StructuralError
from .evaluate import (elasticity_profile, heterogeneity, marginal_share_probs,
                       predicted_labels, predictive_probs, predictive_report,
                       sigma_posterior_mean)
from .simulate import PRESETS, DgpSpec, simulate_dataset
from .vi import cvi_fit, davi_fit

EXIT_CODES = {
    "USAGE": 2,
    "IO": 3,
    "CONFIG": 4,
    "DATASET": 5,
    "STRUCTURE": 6,
    "DOMAIN": 7,
    "NUMERICAL": 8,
}


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _code_for(err):
    if isinstance(err, CliError):
        return err.code
    if isinstance(err, DatasetError):
        return "DATASET"
    if isinstance(err, StructuralError):
        return "STRUCTURE"
    if isinstance(err, DomainError):
        return "DOMAIN"
    if isinstance(err, NumericalError):
        return "NUMERICAL"
    if isinstance(err, (OSError, pd.errors.ParserError, pd.errors.EmptyDataError)):
        return "IO"
    if isinstance(err, (json.JSONDecodeError, KeyError, TypeError)):
        return "CONFIG"
    return None


# ----------------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------------

def _dgp_from_config(doc):
    """A DgpSpec from either a full document or ``{"preset": name, ...}``."""
    doc = dict(doc)
    if "preset" in doc:
        name = doc.pop("preset")
        if name not in PRESETS:
            raise CliError("CONFIG", f"unknown preset {name!r}")
        return PRESETS[name](**doc)
    return DgpSpec.from_dict(doc)


def cmd_simulate(args):
    dgp = _dgp_from_config(io.read_json(args.config))
    if args.seed is not None:
        dgp.seed = args.seed
    panel = simulate_dataset(dgp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_dataset(panel.train, out / "train.csv")
    if panel.test.n_occasions:
        io.save_dataset(panel.test, out / "test.csv")
    truth = {"dgp": dgp.to_dict(), "alpha": panel.alpha.tolist()}
    with open(out / "truth.json", "w") as fh:
        json.dump(truth, fh, indent=1)
        fh.write("\n")
    # fit config matching the simulated model
    fit_cfg = io.FitConfig(model=dgp.spec.to_dict(), seed=dgp.seed)
    with open(out / "fit.json", "w") as fh:
        json.dump(fit_cfg.to_dict(), fh, indent=1)
        fh.write("\n")


# ----------------------------------------------------------------------------
# fit
# ----------------------------------------------------------------------------

def _load_for_spec(path, spec, difference=False):
    return io.load_dataset(path, n_items=spec.n_items, difference=difference)


def cmd_fit(args):
    cfg = io.load_fit_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.method is not None:
        cfg.method = args.method
    spec = cfg.spec
    data = _load_for_spec(args.data, spec, cfg.difference)
    runner = cvi_fit if cfg.method == "cvi" else davi_fit
    fit = runner(data, spec, prior=cfg.prior, schedule=cfg.schedule, seed=cfg.seed)
    trace = args.trace or str(Path(args.out).with_suffix("")) + "_trace.csv"
    io.save_artifact(fit, args.out, trace_path=trace)


# ----------------------------------------------------------------------------
# predict / evaluate
# ----------------------------------------------------------------------------

def _prob_columns(R):
    return [f"p_{r + 1}" for r in range(R)]


def _prediction_table(data, probs):
    df = pd.DataFrame({"group": data.group_ids[data.group], "occasion": data.occasion_ids})
    for name, col in zip(_prob_columns(probs.shape[1]), probs.T):
        df[name] = col
    df["chosen"] = data.choice + 1
    df["predicted"] = predicted_labels(probs) + 1
    return df


def cmd_predict(args):
    fit = io.load_artifact(args.artifact)
    data = _load_for_spec(args.data, fit.spec, args.difference)
    probs = predictive_probs(fit, data, args.n_sim, np.random.default_rng(args.seed),
                             allow_new_groups=args.allow_new_groups)
    io.write_table(_prediction_table(data, probs), args.out)


def _read_predictions(path):
    df = pd.read_csv(path, float_precision="round_trip")
    cols = [c for c in df.columns if c.startswith("p_")]
    if not cols or "chosen" not in df.columns:
        raise CliError("IO", f"{path}: not a prediction table")
    return df[cols].to_numpy(float), df["chosen"].to_numpy(int) - 1


def cmd_evaluate(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fit = io.load_artifact(args.artifact) if args.artifact else None
    data = None
    if fit is not None:
        if not args.data:
            raise CliError("USAGE", "--data is required with --artifact")
        data = _load_for_spec(args.data, fit.spec, args.difference)
    if args.predictions:
        probs, outcomes = _read_predictions(args.predictions)
    elif fit is not None:
        probs = predictive_probs(fit, data, args.n_sim, np.random.default_rng(args.seed),
                                 allow_new_groups=args.allow_new_groups)
        outcomes = data.choice
    else:
        raise CliError("USAGE", "one of --artifact or --predictions is required")
    rows = [("model", predictive_report(probs, outcomes))]
    if args.baseline:
        if fit is None:
            raise CliError("USAGE", "--baseline needs --artifact and --data")
        train = _load_for_spec(args.baseline, fit.spec, args.difference)
        base = marginal_share_probs(train, data)
        rows.append(("marginal_share", predictive_report(base, outcomes)))
    scores = pd.DataFrame({"method": [r[0] for r in rows],
                           "log_score": [r[1].log_score for r in rows],
                           "f1": [r[1].f1 for r in rows]})
    io.write_table(scores, out / "scores.csv")
    if fit is not None:
        sigma = sigma_posterior_mean(fit, args.n_sim, np.random.default_rng(args.seed))
        rep = heterogeneity(sigma, data, fit.spec)
        io.write_table(rep.to_frame(data.random_names), out / "heterogeneity.csv")


# ----------------------------------------------------------------------------
# elasticity
# ----------------------------------------------------------------------------

def cmd_elasticity(args):
    fit = io.load_artifact(args.artifact)
    data = _load_for_spec(args.data, fit.spec, args.difference)
    table = elasticity_profile(fit, data, args.item - 1, args.price, n_grid=args.grid,
                               n_sim=args.n_sim, rng=np.random.default_rng(args.seed),
                               discrete=tuple(args.discrete))
    io.write_table(table, args.out)


# ----------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("USAGE", message)


def build_parser():
    p = _Parser(prog="cvilogit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write simulated train/test CSV files")
    s.add_argument("--config", required=True, help="DGP JSON document or {\"preset\": ...}")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a model and write the artifact and trace")
    f.add_argument("--data", required=True)
    f.add_argument("--config", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--trace")
    f.add_argument("--method", choices=["cvi", "davi"])
    f.add_argument("--seed", type=int)
    f.set_defaults(func=cmd_fit)

    def pred_opts(q):
        q.add_argument("--n-sim", type=int, default=None)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--allow-new-groups", action="store_true")
        q.add_argument("--difference", action="store_true",
                       help="subtract the reference item's covariates")

    r = sub.add_parser("predict", help="per-occasion predictive probabilities")
    r.add_argument("--artifact", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)
    pred_opts(r)
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="predictive scores and heterogeneity report")
    e.add_argument("--artifact")
    e.add_argument("--predictions")
    e.add_argument("--data")
    e.add_argument("--baseline", help="training CSV for the marginal-share benchmark")
    e.add_argument("--out", required=True)
    pred_opts(e)
    e.set_defaults(func=cmd_evaluate)

    el = sub.add_parser("elasticity", help="own-price elasticity profile")
    el.add_argument("--artifact", required=True)
    el.add_argument("--data", required=True)
    el.add_argument("--item", type=int, required=True, help="1-based item number")
    el.add_argument("--price", required=True, help="name of the log-price covariate")
    el.add_argument("--grid", type=int, default=20)
    el.add_argument("--discrete", nargs="*", default=[])
    el.add_argument("--out", required=True)
    el.add_argument("--n-sim", type=int, default=None)
    el.add_argument("--seed", type=int, default=0)
    el.add_argument("--difference", action="store_true")
    el.set_defaults(func=cmd_elasticity)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except Exception as err:  # noqa: BLE001
        code = _code_for(err)
        if code is None:
            raise
        msg = " ".join(str(err).split())
        print(f"error {code}: {msg}", file=sys.stderr)
        return EXIT_CODES[code]
    return 0


if __name__ == "__main__":
    sys.exit(main())
