"""Command-line front end: one subcommand per pipeline stage.

Each stage reads the previous stage's files and writes its own into the
output directory (``--out``, else ``$BPARHMM_OUT``, else ``./bparhmm-out``).
Settings may come from an INI file (``--config``); any flag given on the
command line wins over the file.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_limits

from . import __version__
from . import io as aio
from .cluster import (LINKAGES, agglomerate, cut, group_tests, largest_gap_height,
                      state_usage_by_cluster)
from .data import construct_vector, load_dataset, normalize_dataset, numeric_constructs, save_dataset
from .distance import MEASURES, distance_matrix
from .embedding import spectral_representation, stationary_representation
from .errors import BPARHMMError, ValidationError
from .model import Hyperparams, fit as fit_model, prune_rare_states
from .predict import MODELS, BenchmarkConfig, attribute_states, report_table, run_benchmark
from .synth import SynthSpec, Truth, generate, score_recovery, two_group_spec

log = logging.getLogger("bparhmm")

OUT_ENV = "BPARHMM_OUT"
DEFAULT_OUT = "bparhmm-out"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(ValidationError):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required (flag or config file)")


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"{what} does not exist: {p}")
    return p


def _int_list(text):
    return [int(x) for x in str(text).replace(",", " ").split()]


def _str_list(text):
    return [x for x in str(text).replace(",", " ").split() if x]


def _load_normalized(path):
    return normalize_dataset(load_dataset(_existing(path, "data directory")))


# -- commands -----------------------------------------------------------------

def cmd_synth(args):
    _need(args, "seed")
    kw = dict(n_series=args.n_series, dim=args.dim, length=args.length, seed=args.seed)
    if args.two_group:
        if args.n_series % 2:
            raise UsageError("--two-group needs an even --n-series")
        spec = two_group_spec(args.n_series // 2, dim=args.dim, length=args.length, seed=args.seed)
    else:
        spec = SynthSpec(n_states=args.n_states, **kw)
    if args.planted:
        rng = np.random.default_rng([args.seed, 4])
        spec.constructs = {"planted": (rng.normal(size=spec.n_states).tolist(), 0.0),
                           "noise": ([0.0] * spec.n_states, 1.0)}
    dataset, truth = generate(spec)
    out = _out_dir(args)
    save_dataset(dataset, out / "data")
    aio.write_json(truth.to_json(), out / "truth.json")
    log.info("wrote %d series to %s", len(dataset), out / "data")


def _hyper(args):
    return Hyperparams(alpha=args.alpha, lag=args.lag, kappa=args.kappa, gamma=args.gamma,
                       sweeps=args.sweeps, burn_in=args.burn_in, seed=args.seed)


def cmd_fit(args):
    _need(args, "data", "seed")
    dataset = load_dataset(_existing(args.data, "data directory"))
    if not args.raw:
        dataset = normalize_dataset(dataset)
    hyper = _hyper(args)
    hyper.validate(len(dataset.schema))
    out = _out_dir(args)
    raw = fit_model(dataset, hyper, allow_raw=args.raw)
    aio.save_fit(raw, out / "fit_raw.json")
    aio.write_trace(raw, out / "trace.csv")
    pruned = prune_rare_states(raw, dataset, args.threshold)
    aio.save_fit(pruned, out / "fit.json")
    log.info("fit: K=%d before pruning, %d after", raw.K, pruned.K)


def cmd_prune(args):
    _need(args, "fit", "data")
    fit = aio.load_fit(_existing(args.fit, "fit file"))
    dataset = load_dataset(_existing(args.data, "data directory"))
    if not args.raw:
        dataset = normalize_dataset(dataset)
    aio.check_ids(fit.ids, dataset.ids, "data directory")
    pruned = prune_rare_states(fit, dataset, args.threshold)
    aio.save_fit(pruned, _out_dir(args) / "fit.json")


def cmd_distances(args):
    _need(args, "fit")
    fit = aio.load_fit(_existing(args.fit, "fit file"))
    out = _out_dir(args)
    measures = MEASURES if args.measure == "both" else (args.measure,)
    for m in measures:
        dm = distance_matrix(fit, m, eps=args.eps, k_mode=args.k_mode)
        aio.save_distance(dm, out / f"distance_{m}")


def cmd_embed(args):
    out = _out_dir(args)
    if args.kind == "stationary":
        _need(args, "fit")
        rep = stationary_representation(aio.load_fit(_existing(args.fit, "fit file")))
        aio.save_representation(rep, out / "embedding_stationary")
        return
    _need(args, "distances", "k")
    dm = aio.load_distance(_existing(args.distances, "distance file"))
    if not 1 <= args.k <= len(dm.ids):
        raise ValidationError(f"K must be in [1, {len(dm.ids)}] for {len(dm.ids)} series, got {args.k}")
    rep = spectral_representation(dm, args.k, affinity=args.affinity)
    aio.save_representation(rep, out / f"embedding_{rep.kind}_K{args.k}")


def cmd_cluster(args):
    _need(args, "distances")
    dm = aio.load_distance(_existing(args.distances, "distance file"))
    dend = agglomerate(dm, args.linkage)
    height = largest_gap_height(dend) if args.height is None else args.height
    labels = cut(dend, height, args.min_size)
    out = _out_dir(args)
    aio.save_dendrogram(dend, out / f"dendrogram_{dm.measure}")
    aio.save_labels(labels, out / f"clusters_{dm.measure}.csv")
    aio.write_json({"format": aio.FORMAT, "kind": "cut", "height": height,
                    "linkage": args.linkage, "min_size": args.min_size},
                   out / f"cut_{dm.measure}.json")
    if args.data is not None and len(labels.clusters) >= 2:
        dataset = load_dataset(_existing(args.data, "data directory"))
        if dataset.constructs is not None:
            tests = group_tests(labels, dataset.constructs)
            frame = pd.DataFrame([t.__dict__ for t in tests])
            aio._write_frame(frame, out / f"group_tests_{dm.measure}.csv")
    if args.fit is not None and len(labels.clusters) >= 1:
        rep = stationary_representation(aio.load_fit(_existing(args.fit, "fit file")))
        aio.check_ids(rep.ids, dm.ids, "distance file")
        usage = state_usage_by_cluster(rep, labels)
        usage.columns = [f"state{k}" for k in usage.columns]
        aio._write_frame(usage.reset_index(names="cluster"), out / f"state_usage_{dm.measure}.csv")


def cmd_predict(args):
    _need(args, "fit", "data", "seed")
    fit = aio.load_fit(_existing(args.fit, "fit file"))
    dataset = _load_normalized(args.data)
    aio.check_ids(fit.ids, dataset.ids, "data directory")
    config = BenchmarkConfig(
        models=tuple(_str_list(args.models)), k_grid=tuple(_int_list(args.k_grid)),
        measures=tuple(_str_list(args.measures)), affinity=args.affinity,
        include_raw=args.include_raw, n_estimators=args.n_estimators, seed=args.seed,
        constructs=tuple(_str_list(args.constructs)) if args.constructs else None)
    bad = [m for m in config.models if m not in MODELS]
    if bad:
        raise UsageError(f"unknown model(s) {bad}; choose from {MODELS}")
    reports = run_benchmark(fit, dataset, config)
    out = _out_dir(args)
    aio.save_reports(reports, out / "prediction", report_table(reports))
    rows = []
    names = config.constructs or tuple(numeric_constructs(dataset))
    for name in names:
        y = construct_vector(dataset, name, fit.ids)
        try:
            att = attribute_states(fit, y, name)
        except ValidationError as exc:
            log.warning("no attribution for %s: %s", name, exc)
            continue
        rows += [{"construct": name, "state": k, "rank": r, "coefficient": float(att.coefficients[k])}
                 for r, k in enumerate(att.ranking)]
    aio._write_frame(pd.DataFrame(rows, columns=["construct", "state", "rank", "coefficient"]),
                     out / "attribution.csv")


def cmd_score_recovery(args):
    _need(args, "fit", "truth")
    fit = aio.load_fit(_existing(args.fit, "fit file"))
    truth = Truth.from_json(aio.read_json(_existing(args.truth, "truth file")))
    rec = score_recovery(fit, truth)
    aio.write_json(rec.to_json(), _out_dir(args) / "recovery.json")
    print(json.dumps({"accuracy": rec.accuracy, "k_fit": rec.k_fit, "k_true": rec.k_true}))


# -- parser -------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="INI file; flags override its values")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="bparhmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    _add_common(p)
    p.add_argument("--n-series", type=int, default=20)
    p.add_argument("--n-states", type=int, default=4)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--length", type=int, default=500)
    p.add_argument("--two-group", action="store_true", help="two planted groups on disjoint states")
    p.add_argument("--planted", action="store_true", help="add a linear construct and a noise construct")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="run the sampler, then prune rare states")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--kappa", type=float, default=10.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--lag", type=int, default=1)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--raw", action="store_true", help="skip z-scoring")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("prune", help="drop states used by few series")
    _add_common(p)
    p.add_argument("--fit")
    p.add_argument("--data")
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--raw", action="store_true")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("distances", help="pairwise HMM distance matrices")
    _add_common(p)
    p.add_argument("--fit")
    p.add_argument("--measure", choices=MEASURES + ("both",), default="both")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--k-mode", choices=("global", "per-hmm"), default="global")
    p.set_defaults(func=cmd_distances)

    p = sub.add_parser("embed", help="stationary or spectral representations")
    _add_common(p)
    p.add_argument("--kind", choices=("stationary", "spectral"), default="spectral")
    p.add_argument("--fit")
    p.add_argument("--distances")
    p.add_argument("--k", "-K", type=int)
    p.add_argument("--affinity", action="store_true", help="Gaussian-affinity spectral variant")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="agglomerative clustering and group tests")
    _add_common(p)
    p.add_argument("--distances")
    p.add_argument("--linkage", choices=LINKAGES, default="average")
    p.add_argument("--height", type=float, help="cut height (default: largest gap)")
    p.add_argument("--min-size", type=int, default=5)
    p.add_argument("--data", help="dataset whose constructs table is tested across clusters")
    p.add_argument("--fit", help="fit for per-cluster state usage")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("predict", help="LOOCV construct prediction benchmark")
    _add_common(p)
    p.add_argument("--fit")
    p.add_argument("--data")
    p.add_argument("--models", default=",".join(MODELS))
    p.add_argument("--k-grid", default="10,20,30,40,50,60,70,80,90,100")
    p.add_argument("--measures", default=",".join(MEASURES))
    p.add_argument("--constructs", default=None)
    p.add_argument("--affinity", action="store_true")
    p.add_argument("--include-raw", action="store_true")
    p.add_argument("--n-estimators", type=int, default=200)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score-recovery", help="compare a fit with synthetic ground truth")
    _add_common(p)
    p.add_argument("--fit")
    p.add_argument("--truth")
    p.set_defaults(func=cmd_score_recovery)
    return parser


def _config_defaults(path, subparser):
    """Values from every section of the INI file that name an option of ``subparser``."""
    cfg = configparser.ConfigParser()
    if not cfg.read(_existing(path, "config file")):
        raise ValidationError(f"cannot read config file {path}")
    actions = {a.dest: a for a in subparser._actions}
    out = {}
    for section in cfg.sections():
        for key, text in cfg.items(section):
            dest = key.replace("-", "_")
            if dest not in actions or dest in ("config", "func"):
                continue
            a = actions[dest]
            if isinstance(a, argparse._StoreTrueAction):
                out[dest] = cfg.getboolean(section, key)
            elif a.type is not None:
                try:
                    out[dest] = a.type(text)
                except ValueError as exc:
                    raise ValidationError(f"{path}: bad value for {key!r}: {text!r}") from exc
            else:
                out[dest] = text
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            sub.set_defaults(**_config_defaults(args.config, sub))
            args = parser.parse_args(argv)
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be positive")
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BPARHMMError, ArithmeticError, OSError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
