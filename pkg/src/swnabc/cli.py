"""Command line entry point: ``swnabc {validate,estimate-lang,exact-lang,emd,discover}``.

Artifacts go to ``--out``; a one-line ``key=value`` summary goes to stdout and
human-readable progress to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .abc import ABCConfig, smc_discover
from .detector import DEFAULT_MAX_RUNS, NoAcceptedTraceError, estimate_language
from .distance import DiscreteDistribution, DistanceError, emd, remd
from .eventlog import LogError, dump_language, load_language, load_log
from .oracle import NodeBudgetExceeded, exact_language
from .petrinet import NetError, load_net, validate_workflow

log = logging.getLogger("swnabc")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_ALGO = 0, 1, 2, 3

CONFIG_KEYS = ("particles", "eps1", "zeta", "confidence", "width", "max_layers", "seed", "workers", "ground",
               "max_runs")


class UsageError(Exception):
    pass


def _summary(**kv):
    print(" ".join(f"{k}={_fmt(v)}" for k, v in kv.items()), flush=True)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _materialize_seed(seed):
    if seed is not None:
        return int(seed)
    return int(np.random.SeedSequence().entropy % 2**63)


def _outdir(args, names):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clash = [n for n in names if (out / n).exists()]
    if clash and not args.force:
        raise UsageError(f"refusing to overwrite {', '.join(str(out / n) for n in clash)} (use --force)")
    return out


def cmd_validate(args) -> int:
    net = load_net(args.net)
    problems = validate_workflow(net)
    for p in problems:
        log.error("violation: %s", p)
    labels = net.visible_labels
    code = EXIT_OK if not problems else EXIT_INPUT
    unlabeled = []
    if args.log:
        lang = load_log(args.log)
        unlabeled = sorted(set(lang.alphabet) - labels)
        extra = sorted(labels - set(lang.alphabet))
        for a in unlabeled:
            log.warning("log activity unlabeled in net: %s", a)
        for a in extra:
            log.warning("net label never seen in log: %s", a)
        if unlabeled:
            code = EXIT_INPUT
    _summary(
        valid=not problems,
        violations=len(problems),
        places=len(net.places),
        transitions=len(net.transitions),
        silent=sum(t.silent for t in net.transitions),
        unlabeled_log_activities=len(unlabeled),
    )
    return code


def cmd_estimate_lang(args) -> int:
    net, lang = load_net(args.net), load_log(args.log)
    seed = _materialize_seed(args.seed)
    out = _outdir(args, ["estimate.json"])
    est = estimate_language(
        net, lang, args.confidence, args.width, args.max_runs, seed, workers=_workers(args.workers)
    )
    (out / "estimate.json").write_text(est.dump(lang) + "\n")
    _summary(
        command="estimate-lang",
        seed=seed,
        confidence=args.confidence,
        width=args.width,
        runs=est.runs_total,
        accepted=est.runs_accepted,
        probs=[round(float(p), 6) for p in est.probs],
        remd=remd(lang, est, args.ground),
        out=out / "estimate.json",
    )
    return EXIT_OK


def cmd_exact_lang(args) -> int:
    net, lang = load_net(args.net), load_log(args.log)
    out = _outdir(args, ["exact.json"])
    res = exact_language(net, lang, firing_cap=args.firing_cap, rational=args.rational)
    meta = {
        "rejected_mass": float(res.rejected_mass),
        "truncated_mass": float(res.truncated_mass),
        "accepted_mass": float(res.accepted_mass),
        "nodes": res.nodes,
    }
    if args.rational:
        meta["exact"] = [str(p) for p in res.probs]
    (out / "exact.json").write_text(dump_language(lang.unique_traces, [float(p) for p in res.probs], meta) + "\n")
    _summary(command="exact-lang", probs=[float(p) for p in res.probs], **meta, out=out / "exact.json")
    return EXIT_OK


def cmd_emd(args) -> int:
    t1, p1, _ = load_language(Path(args.first).read_text())
    t2, p2, _ = load_language(Path(args.second).read_text())
    first = DiscreteDistribution(tuple(t1), p1).normalized()
    second = DiscreteDistribution(tuple(t2), p2)
    if args.restricted:
        keep = {t for t in first.support}
        mask = np.array([t in keep for t in second.support], dtype=bool)
        second = DiscreteDistribution(tuple(t for t, k in zip(second.support, mask) if k), second.mass[mask])
        if second.mass.sum() <= 0:
            if args.ground == "raw":
                raise DistanceError("second language has no mass on the first one's support")
            _summary(emd=1.0, restricted=True, ground=args.ground, degenerate=True)
            return EXIT_OK
    value = emd(first, second.normalized(), args.ground)
    _summary(emd=value, restricted=args.restricted, ground=args.ground)
    return EXIT_OK


def _discover_config(args) -> ABCConfig:
    values = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
        unknown = set(data) - set(CONFIG_KEYS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(data)
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    values["seed"] = _materialize_seed(values.get("seed"))
    values["workers"] = _workers(values.get("workers"))
    cfg = ABCConfig(**values)
    try:
        cfg.check()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def cmd_discover(args) -> int:
    net, lang = load_net(args.net), load_log(args.log)
    cfg = _discover_config(args)
    out = _outdir(args, ["report.json", "posterior.csv", "weights.json"])
    log.info("discover: %s", " ".join(f"{f.name}={getattr(cfg, f.name)}" for f in fields(cfg)))
    report = smc_discover(net, lang, cfg)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    with open(out / "posterior.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "particle", *report.transition_ids, "score", "delta"])
        w.writerows(report.posterior_rows())
    weights = dict(zip(report.transition_ids, report.best_weights.tolist()))
    (out / "weights.json").write_text(json.dumps(weights, indent=1) + "\n")
    _summary(
        command="discover",
        **{k: getattr(cfg, k) for k in CONFIG_KEYS},
        layers=len(report.layers),
        best_score=report.best_score,
        total_runs=report.total_runs,
        stop=report.stop_reason,
        out=out,
    )
    return EXIT_ALGO if report.stop_reason == "attempt_cap" else EXIT_OK


def _workers(v):
    return int(v) if v else (os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swnabc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common_out(p):
        p.add_argument("--out", default="swnabc-out", help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite existing artifacts")

    def sim(p, defaults=True):
        d = (lambda v: v) if defaults else (lambda v: None)
        p.add_argument("--confidence", type=float, default=d(0.99))
        p.add_argument("--width", type=float, default=d(0.1))
        p.add_argument("--max-runs", dest="max_runs", type=int, default=d(DEFAULT_MAX_RUNS))
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--ground", choices=["normalized", "raw"], default=d("normalized"))

    p = sub.add_parser("validate", help="check workflow-net structure and alphabet coverage")
    p.add_argument("net")
    p.add_argument("log", nargs="?")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("estimate-lang", help="simulate the net's language over the log support")
    p.add_argument("net")
    p.add_argument("log")
    sim(p)
    common_out(p)
    p.set_defaults(func=cmd_estimate_lang)

    p = sub.add_parser("exact-lang", help="exact detector-bounded language of the net")
    p.add_argument("net")
    p.add_argument("log")
    p.add_argument("--firing-cap", dest="firing_cap", type=int)
    p.add_argument("--rational", action="store_true", help="exact rational arithmetic")
    common_out(p)
    p.set_defaults(func=cmd_exact_lang)

    p = sub.add_parser("emd", help="EMD between two language dump files")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--ground", choices=["normalized", "raw"], default="normalized")
    p.add_argument("--restricted", action="store_true", help="restrict the second language to the first's support")
    p.set_defaults(func=cmd_emd)

    p = sub.add_parser("discover", help="ABC-SMC search for transition weights")
    p.add_argument("net")
    p.add_argument("log")
    p.add_argument("--particles", type=int)
    p.add_argument("--eps1", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--max-layers", dest="max_layers", type=int)
    p.add_argument("--config", help="JSON config file; flags override it")
    sim(p, defaults=False)
    common_out(p)
    p.set_defaults(func=cmd_discover)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (NetError, LogError, DistanceError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (NoAcceptedTraceError, NodeBudgetExceeded, RuntimeError) as exc:
        log.error("%s", exc)
        return EXIT_ALGO


if __name__ == "__main__":
    sys.exit(main())
