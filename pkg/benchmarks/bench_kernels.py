"""Throughput of the compiled and pure-numpy simulation kernels.

    python benchmarks/bench_kernels.py [--runs 200000]
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from swnabc._kernels import simulate_batch
from swnabc.detector import BATCH_RUNS, batch_rng, compile_model
from swnabc.eventlog import load_log
from swnabc.petrinet import load_net, with_weights
from swnabc.synthetic import sample_log, tree_to_net

DATA = Path(__file__).resolve().parent.parent / "data"
LOOPY = ("seq", ("act", "a"), ("and", ("loop", ("act", "b"), ("act", "c")), ("xor", ("act", "d"), ("act", "e"))),
         ("act", "f"))


def cases():
    yield "fig1", compile_model(load_net(DATA / "fig1.pnml"), load_log(DATA / "fig1_log.csv"))
    rng = np.random.default_rng(0)
    net = tree_to_net(LOOPY)
    net = with_weights(net, rng.uniform(0.2, 1.0, len(net.transitions)))
    yield "par-loop", compile_model(net, sample_log(net, 1000, rng))


def bench(model, backend, runs):
    simulate_batch(model, 10, batch_rng(0, 0), backend)  # compile / warm up
    t0 = time.perf_counter()
    for b in range(runs // BATCH_RUNS):
        simulate_batch(model, BATCH_RUNS, batch_rng(1, b), backend)
    return time.perf_counter() - t0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=200_000)
    args = ap.parse_args(argv)
    print(f"{'net':<10}{'backend':<8}{'seconds':>10}{'us/run':>10}{'speedup':>10}")
    for name, model in cases():
        times = {b: bench(model, b, args.runs) for b in ("numpy", "numba")}
        for b, t in times.items():
            speed = times["numpy"] / t
            print(f"{name:<10}{b:<8}{t:>10.3f}{1e6 * t / args.runs:>10.3f}{speed:>10.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
