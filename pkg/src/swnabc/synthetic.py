"""Block-structured workflow nets for experiments and tests.

Nets are built from small process trees (sequence, exclusive choice,
parallel, loop), which yields sound, 1-safe workflow nets by construction.
"""

from __future__ import annotations

from collections import Counter
from itertools import count

import numpy as np

from .eventlog import LogLanguage, language_from_counts
from .petrinet import StochasticWorkflowNet, Transition, build_net, enabled, fire

# trees: ("act", label) | ("tau",) | ("seq", *kids) | ("xor", *kids) | ("and", *kids) | ("loop", body, redo)


def tree_to_net(tree, weights=None, name="") -> StochasticWorkflowNet:
    """Translate a process tree into a net; ``weights`` is used in transition order."""
    places = ["source", "sink"]
    transitions: list[Transition] = []
    arcs: dict[tuple[str, str], int] = {}
    pid, tid = count(), count()

    def place():
        p = f"p{next(pid)}"
        places.append(p)
        return p

    def trans(label, ins, outs):
        t = f"t{next(tid)}"
        transitions.append(Transition(t, label, 1.0))
        for p in ins:
            arcs[(p, t)] = 1
        for p in outs:
            arcs[(t, p)] = 1

    def build(node, pin, pout):
        kind = node[0]
        if kind == "act":
            trans(node[1], [pin], [pout])
        elif kind == "tau":
            trans(None, [pin], [pout])
        elif kind == "seq":
            kids = node[1:]
            cur = pin
            for i, kid in enumerate(kids):
                nxt = pout if i == len(kids) - 1 else place()
                build(kid, cur, nxt)
                cur = nxt
        elif kind == "xor":
            for kid in node[1:]:
                build(kid, pin, pout)
        elif kind == "and":
            ins, outs = [], []
            for _ in node[1:]:
                ins.append(place())
                outs.append(place())
            trans(None, [pin], ins)
            for kid, a, b in zip(node[1:], ins, outs):
                build(kid, a, b)
            trans(None, outs, [pout])
        elif kind == "loop":
            body, redo = node[1], node[2]
            start, mid = place(), place()
            trans(None, [pin], [start])
            build(body, start, mid)
            build(redo, mid, start)
            trans(None, [mid], [pout])
        else:
            raise ValueError(f"unknown tree node {kind!r}")

    build(tree, "source", "sink")
    if weights is not None:
        transitions = [Transition(t.id, t.label, float(w)) for t, w in zip(transitions, weights, strict=True)]
    return build_net(places, transitions, arcs, {"source": 1}, name=name)


def random_tree(rng: np.random.Generator, max_transitions=8, alphabet="abcdef", loops=False):
    """Random process tree whose net has at most ``max_transitions`` transitions."""

    def cost(node):
        kind = node[0]
        if kind in ("act", "tau"):
            return 1
        extra = {"and": 2, "loop": 2}.get(kind, 0)
        return extra + sum(cost(k) for k in node[1:])

    def grow(budget, depth):
        ops = ["act"] * 3
        if budget >= 2 and depth < 3:
            ops += ["seq", "xor"]
        if budget >= 4 and depth < 3:
            ops.append("and")
            if loops:
                ops.append("loop")
        op = ops[rng.integers(len(ops))]
        if op == "act":
            return ("act", alphabet[rng.integers(len(alphabet))])
        if op in ("seq", "xor"):
            left = grow(budget - 1, depth + 1)
            right = grow(budget - cost(left), depth + 1)
            return (op, left, right)
        if op == "and":
            left = grow(budget - 3, depth + 1)
            right = grow(budget - 2 - cost(left), depth + 1)
            return ("and", left, right)
        body = grow(budget - 3, depth + 1)
        return ("loop", body, ("tau",))

    while True:
        tree = grow(max_transitions, 0)
        if cost(tree) <= max_transitions:
            return tree


def sample_trace(net: StochasticWorkflowNet, rng: np.random.Generator, max_firings=1000) -> tuple[str, ...] | None:
    """Play the net's token game once; ``None`` if it does not finish in ``max_firings``."""
    marking = net.initial()
    weights = {t.id: t.weight for t in net.transitions}
    labels = {t.id: t.label for t in net.transitions}
    trace = []
    for _ in range(max_firings):
        en = enabled(net, marking)
        if not en:
            return tuple(trace)
        w = np.array([weights[t] for t in en])
        t = en[rng.choice(len(en), p=w / w.sum())]
        marking = fire(net, marking, t)
        if labels[t] is not None:
            trace.append(labels[t])
    return None


def sample_log(net: StochasticWorkflowNet, n_traces: int, rng: np.random.Generator) -> LogLanguage:
    traces = Counter()
    while sum(traces.values()) < n_traces:
        t = sample_trace(net, rng)
        if t:
            traces[t] += 1
    return language_from_counts(traces)
