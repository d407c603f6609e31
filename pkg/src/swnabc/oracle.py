"""Exact detector-bounded stochastic language of a net, by breadth-first unfolding.

This is the ground truth the simulation estimator is checked against. It uses
the detector's bounds (per-letter maxima, longest trace, firing cap), so both
sides live on the same sample space.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .detector import convex_remap, default_firing_cap, word_map
from .distance import DiscreteDistribution
from .eventlog import LogLanguage
from .petrinet import NetError, StochasticWorkflowNet, UnsafeMarkingError, validate_workflow

DEFAULT_NODE_BUDGET = 1_000_000


class NodeBudgetExceeded(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class ExactLanguage:
    """Exact probabilities of the log traces plus the mass that never got there.

    ``rejected_mass`` covers detector-guard violations, visible prefixes that
    leave the log support, deadlocks away from the sink and completed traces
    outside the log. ``truncated_mass`` is the mass still running at the
    firing cap.
    """

    probs: np.ndarray  # indexed by convex index; Fraction objects in rational mode
    traces: tuple
    rejected_mass: float | Fraction
    truncated_mass: float | Fraction
    nodes: int

    @property
    def accepted_mass(self):
        return sum(self.probs, start=Fraction(0) if self.probs.dtype == object else 0.0)

    def as_dict(self) -> dict:
        return dict(zip(self.traces, self.probs.tolist()))


def _weight(w: float, rational: bool):
    return Fraction(repr(w)) if rational else w


def exact_language(
    net: StochasticWorkflowNet,
    lang: LogLanguage,
    firing_cap: int | None = None,
    node_budget: int = DEFAULT_NODE_BUDGET,
    rational: bool = False,
) -> ExactLanguage:
    """Unfold the detector-constrained reachability graph level by level.

    Level ``k`` holds the states reached after ``k`` firings; states with equal
    (marking, visible trace) at the same level are merged and their
    probabilities summed. Weights are converted through their shortest decimal
    representation in rational mode, so ``0.3`` counts as ``3/10``.
    """
    problems = validate_workflow(net)
    if problems:
        raise NetError("not a valid workflow net: " + "; ".join(problems))
    cap = default_firing_cap(net, lang) if firing_cap is None else firing_cap
    zero = Fraction(0) if rational else 0.0
    places = net.places
    pidx = {p: i for i, p in enumerate(places)}
    sink = pidx[net.sink]
    final = tuple(1 if i == sink else 0 for i in range(len(places)))
    trans = []
    for t in net.transitions:
        pre = tuple((pidx[p], k) for p, k in net.preset(t.id).items())
        delta = [0] * len(places)
        for p, k in net.preset(t.id).items():
            delta[pidx[p]] -= k
        for p, k in net.postset(t.id).items():
            delta[pidx[p]] += k
        trans.append((t.id, pre, tuple(delta), t.label, _weight(t.weight, rational)))
    prefixes = {tr[:k] for tr in lang.unique_traces for k in range(len(tr) + 1)}

    probs = [zero] * lang.support_size
    rejected = truncated = zero
    m0 = tuple(net.initial_marking.get(p, 0) for p in places)
    frontier = {(m0, ()): Fraction(1) if rational else 1.0}
    nodes = 1
    level = 0
    while frontier:
        nxt: dict = {}
        for (marking, trace), mass in frontier.items():
            en = [t for t in trans if all(marking[i] >= k for i, k in t[1])]
            if not en:
                if marking == final:
                    idx = convex_remap(lang, word_map(trace, lang.letter_map, lang.n))
                    if idx is not None:
                        probs[idx] += mass
                        continue
                rejected += mass
                continue
            if level >= cap:
                truncated += mass
                continue
            total = sum((t[4] for t in en), start=zero)
            for tid, _, delta, label, w in en:
                m = tuple(x + d for x, d in zip(marking, delta))
                if any(x > 1 for x in m):
                    raise UnsafeMarkingError(f"firing {tid!r} reaches a marking that is not 1-safe")
                p = mass * w / total
                tr = trace
                if label is not None:
                    tr = trace + (label,)
                    if (
                        label not in lang.letter_maxima
                        or tr.count(label) > lang.letter_maxima[label]
                        or len(tr) > lang.max_len
                        or tr not in prefixes
                    ):
                        rejected += p
                        continue
                key = (m, tr)
                if key in nxt:
                    nxt[key] += p
                else:
                    nxt[key] = p
                    nodes += 1
        if nodes > node_budget:
            diag = {"level": level, "nodes": nodes, "accepted_mass": float(sum(probs)),
                    "rejected_mass": float(rejected)}
            raise NodeBudgetExceeded(f"node budget {node_budget} exceeded at level {level}", diag)
        frontier = nxt
        level += 1

    arr = np.array(probs, dtype=object if rational else np.float64)
    return ExactLanguage(arr, lang.unique_traces, rejected, truncated, nodes)


def normalized_restricted(result: ExactLanguage) -> DiscreteDistribution:
    total = result.accepted_mass
    if total <= 0:
        raise ValueError("zero accepted mass: nothing to normalize")
    mass = np.array([float(x / total) for x in result.probs], dtype=np.float64)
    return DiscreteDistribution(tuple(result.traces), mass)
