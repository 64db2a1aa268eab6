"""Command-line entry point.

Exit codes:
    0  success (for ``fit``: the best restart converged)
    1  error (bad flags, unreadable input, invalid data)
    2  ``fit`` finished at --max-iter without converging
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .em import fit
from .errors import DynRecipError
from .evaluation import (auc, cross_validate, forecast_scores, long_csv, reciprocity_study,
                         summary_json)
from .generator import GeneratorConfig, generate
from .model import Hyperparams, ModelParams, Variant
from .temporal_graph import dump_edgelist, preprocess, read_edgelist

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2
THREADS_ENV = "DYNRECIP_THREADS"

_log = logging.getLogger("dynrecip")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 means "not converged" here
    def error(self, message):
        raise UsageError(message)


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _threads_default() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--config", help="JSON document whose keys override flags")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads, 0 = auto (default: ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_flags(p: argparse.ArgumentParser, multi_k: bool = False):
    if multi_k:
        p.add_argument("--K", type=_positive_int, nargs="+", default=[3])
    else:
        p.add_argument("--K", type=_positive_int, default=3)
    p.add_argument("--variant", choices=[v.value for v in Variant], default="w-dyn")
    p.add_argument("--rec-lag", type=int, choices=(0, 1), default=1)
    p.add_argument("--eta-zero", action="store_true", help="fix eta = 0 (no-reciprocity ablation)")
    p.add_argument("--a", type=float, default=1.5, help="Gamma prior shape")
    p.add_argument("--b", type=float, default=10.0, help="Gamma prior rate")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-iter", type=_positive_int, default=500)
    p.add_argument("--restarts", type=_positive_int, default=5)
    p.add_argument("--no-preprocess", action="store_true",
                   help="skip self-loop removal, degree filter and giant component")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dynrecip", description="Dynamic community and reciprocity model")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit parameters to an edge list")
    p.add_argument("--input", required=True)
    _model_flags(p)
    _common(p)

    p = sub.add_parser("generate", help="sample a synthetic network")
    p.add_argument("--nodes", type=_positive_int, default=500)
    p.add_argument("--K", type=_positive_int, default=3)
    p.add_argument("--avg-degree", type=float, default=5.0)
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--T", type=int, default=6)
    p.add_argument("--ratio", type=float, default=10.0, help="c_in / c_out")
    p.add_argument("--schedule", nargs="+", default=None,
                   help="assortative|disassortative per step 0..T")
    p.add_argument("--weighted", action="store_true", help="keep Poisson counts in A(0)")
    _common(p)

    p = sub.add_parser("predict", help="forecast AUC of snapshot t")
    p.add_argument("--input", required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--params", help="fitted params.json; fit on A(0..t-1) if omitted")
    _model_flags(p)
    _common(p)

    p = sub.add_parser("cv", help="held-out cross-validation (several --K selects K)")
    p.add_argument("--input", required=True)
    p.add_argument("--folds", type=int, default=5)
    _model_flags(p, multi_k=True)
    _common(p)

    p = sub.add_parser("reciprocity", help="compare reciprocity with resampled networks")
    p.add_argument("--input", required=True)
    p.add_argument("--samples", type=_positive_int, default=5)
    p.add_argument("--params", help="fitted params.json; fit inline if omitted")
    _model_flags(p)
    _common(p)
    return parser


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    if not args.config:
        return args
    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest in ("command", "config") or not hasattr(args, dest):
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        setattr(args, dest, value)
    return args


def _echo(args: argparse.Namespace) -> dict:
    d = {k: v for k, v in vars(args).items() if k not in ("config", "verbose", "out", "threads")}
    d["version"] = __version__
    return d


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _hyper(args, K=None) -> Hyperparams:
    return Hyperparams(K=int(K if K is not None else args.K), a=args.a, b=args.b,
                       tolerance=args.tolerance, max_iter=args.max_iter,
                       n_restarts=args.restarts, seed=args.seed)


def _load(args):
    net = read_edgelist(args.input)
    if args.no_preprocess:
        return net, None
    net, report = preprocess(net)
    return net, report


def _params_doc(params: ModelParams, labels) -> str:
    d = params.to_dict()
    d["node_labels"] = list(labels)
    return json.dumps(d, indent=1, sort_keys=True)


def _read_params(path, net) -> ModelParams:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DynRecipError(f"cannot read params {path}: {exc}") from None
    params = ModelParams.from_dict(d)
    labels = d.get("node_labels")
    if labels is not None and list(labels) != list(net.labels):
        raise DynRecipError("params node labels do not match the input network")
    return params


def _fix_eta(args):
    return 0.0 if args.eta_zero else None


def cmd_fit(args) -> int:
    out = Path(args.out)
    net, report = _load(args)
    res = fit(net, _hyper(args), args.variant, rec_lag=args.rec_lag,
              fix_eta=_fix_eta(args), n_jobs=args.threads)
    _write(out, "params.json", _params_doc(res.params, net.labels))
    _write(out, "trace.csv", res.trace_csv())
    if report is not None:
        _write(out, "preprocess_report.json", report.to_json())
    _write(out, "config.json", json.dumps(_echo(args), indent=1, sort_keys=True))
    status = "converged" if res.converged else "max-iter reached"
    print(f"{status}: objective {res.objective:.6f} after {res.n_iterations} iterations, "
          f"eta {res.params.eta:.6g}, beta {np.round(res.params.beta, 6).tolist()}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_generate(args) -> int:
    out = Path(args.out)
    cfg = GeneratorConfig(n_nodes=args.nodes, K=args.K, avg_degree=args.avg_degree,
                          eta=args.eta, beta=args.beta, T=args.T, ratio=args.ratio,
                          structure_schedule=args.schedule, binarize=not args.weighted,
                          seed=args.seed)
    net, params = generate(cfg)
    _write(out, "network.txt", dump_edgelist(net))
    _write(out, "params.json", _params_doc(params, net.labels))
    _write(out, "config.json", json.dumps({**_echo(args), "generator": cfg.to_dict()},
                                          indent=1, sort_keys=True))
    print(f"generated {net.n_nodes} nodes, {net.n_steps} snapshots, "
          f"{sum(net.n_edges(t) for t in range(net.n_steps))} edge records")
    return EXIT_OK


def cmd_predict(args) -> int:
    out = Path(args.out)
    net, _ = _load(args)
    t = args.t
    if not 1 <= t <= net.T:
        raise DynRecipError(f"--t must lie in [1, {net.T}]; the first step cannot be forecast")
    if args.params:
        params = _read_params(args.params, net)
    else:
        params = fit(net.truncated(t), _hyper(args), args.variant, rec_lag=args.rec_lag,
                     fix_eta=_fix_eta(args), n_jobs=args.threads).params
    scores, labels = forecast_scores(params, net, t)
    value = auc(scores, labels)
    _write(out, "predict.csv", long_csv([("forecast_auc", t, 0, "auc", value)]))
    _write(out, "predict.json", summary_json({"t": t, "auc": value}))
    _write(out, "config.json", json.dumps(_echo(args), indent=1, sort_keys=True))
    print(f"AUC at t={t}: {value:.6f}")
    return EXIT_OK


def cmd_cv(args) -> int:
    out = Path(args.out)
    net, _ = _load(args)
    rows = []
    summary = {"folds": args.folds, "K": {}}
    for K in args.K:
        res = cross_validate(net, _hyper(args, K), args.variant, args.folds, args.seed,
                             args.rec_lag, _fix_eta(args))
        for f, a in enumerate(res.fold_auc):
            if a is not None:
                rows.append(("cv_auc", K, f, "auc", a))
        summary["K"][str(K)] = {"fold_auc": res.fold_auc, "mean_auc": res.mean_auc,
                                "fold_sizes": res.mask.sizes().tolist()}
        print(f"K={K}: mean held-out AUC {res.mean_auc:.6f}")
    means = {int(k): v["mean_auc"] for k, v in summary["K"].items()}
    summary["best_K"] = max(means, key=lambda k: (means[k], -k))
    _write(out, "cv.csv", long_csv(rows))
    _write(out, "cv.json", summary_json(summary))
    _write(out, "config.json", json.dumps(_echo(args), indent=1, sort_keys=True))
    return EXIT_OK


def cmd_reciprocity(args) -> int:
    out = Path(args.out)
    net, _ = _load(args)
    params = _read_params(args.params, net) if args.params else None
    if params is None:
        params = fit(net, _hyper(args), args.variant, rec_lag=args.rec_lag,
                     fix_eta=_fix_eta(args), n_jobs=args.threads).params
    study = reciprocity_study(net, _hyper(args), args.variant, args.samples, args.seed,
                              args.rec_lag, params=params)
    _write(out, "reciprocity.csv", long_csv(study.rows()))
    _write(out, "reciprocity.json", summary_json(study.summary()))
    _write(out, "config.json", json.dumps(_echo(args), indent=1, sort_keys=True))
    for t, (r, m, s) in enumerate(study.table()):
        print(f"t={t}: real {r:.4f}  samples {m:.4f} +- {s:.4f}")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "generate": cmd_generate, "predict": cmd_predict,
            "cv": cmd_cv, "reciprocity": cmd_reciprocity}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        args = _apply_config(args)
        if args.threads is None:
            args.threads = _threads_default()
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (DynRecipError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # never surface a traceback
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
