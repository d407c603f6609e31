"""Word mapping, the stochastic-language detector, and (confidence, width)-controlled
estimation of a net's stochastic language restricted to the log support.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm

from . import _kernels
from .eventlog import LogLanguage, dump_language
from .petrinet import NetError, StochasticWorkflowNet, UnsafeMarkingError, enabled, validate_workflow

log = logging.getLogger(__name__)

BATCH_RUNS = 1000
DEFAULT_MAX_RUNS = 2_000_000


class NoAcceptedTraceError(RuntimeError):
    """No simulated run was accepted by the detector."""

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


def word_map(trace: Sequence[str], letter_map: Mapping[str, int], n: int) -> int:
    """Exact integer code of ``trace``: sum of ``letter_map[trace[i]] * n**i``."""
    value = 0
    scale = 1
    for a in trace:
        value += letter_map[a] * scale
        scale *= n
    return value


def convex_remap(lang: LogLanguage, value: int) -> int | None:
    return lang.remap.get(value)


def default_firing_cap(net: StochasticWorkflowNet, lang: LogLanguage) -> int:
    return 10 * (lang.max_len + len(net.transitions))


@dataclass(frozen=True)
class DetectorRunResult:
    accepted: bool
    index: int | None  # convex index when accepted
    reason: str | None  # rejection reason otherwise
    fired_count: int
    visible_trace: tuple[str, ...]


def run_detector(net, lang: LogLanguage, rng: np.random.Generator, firing_cap: int | None = None) -> DetectorRunResult:
    """Simulate a single run of ``net`` synchronised with the detector of ``lang``.

    Reference implementation: keeps the exact word code and checks membership
    only at deadlock. Consumes one ``rng.random()`` per firing, the same
    draw-to-firing convention as the batched kernels.
    """
    cap = default_firing_cap(net, lang) if firing_cap is None else firing_cap
    weights = {t.id: t.weight for t in net.transitions}
    labels = {t.id: t.label for t in net.transitions}
    n = lang.n
    marking = net.initial()
    w = c = 0
    per_letter = dict.fromkeys(lang.alphabet, 0)
    trace: list[str] = []
    fired = 0

    def reject(reason):
        return DetectorRunResult(False, None, reason, fired, tuple(trace))

    while True:
        en = enabled(net, marking)
        if not en:
            if marking == {net.sink: 1}:
                idx = convex_remap(lang, w)
                if idx is not None:
                    return DetectorRunResult(True, idx, None, fired, tuple(trace))
                return reject("not-in-log")
            return reject("deadlock-nonfinal")
        if fired >= cap:
            return reject("firing-cap")
        total = 0.0
        for t in en:
            total += weights[t]
        target = rng.random() * total
        pick = en[-1]
        cum = 0.0
        for t in en:
            cum += weights[t]
            if cum > target:
                pick = t
                break
        fired += 1
        for p, k in net.preset(pick).items():
            marking[p] -= k
        for p, k in net.postset(pick).items():
            marking[p] = marking.get(p, 0) + k
            if marking[p] > 1:
                return reject("unsafe")
        marking = {p: k for p, k in marking.items() if k}
        a = labels[pick]
        if a is None:
            continue
        if a not in per_letter:
            trace.append(a)
            return reject("not-in-log")
        per_letter[a] += 1
        trace.append(a)
        if per_letter[a] > lang.letter_maxima[a] or c + 1 > lang.max_len:
            return reject("bound-exceeded")
        w += lang.letter_map[a] * n**c
        c += 1


@dataclass(frozen=True)
class CompiledModel:
    """Dense array form of a (net, log) pair consumed by the simulation kernels."""

    pre_ptr: np.ndarray
    pre_idx: np.ndarray
    pre_mult: np.ndarray
    post_ptr: np.ndarray
    post_idx: np.ndarray
    post_mult: np.ndarray
    pre_dense: np.ndarray
    post_dense: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    m0: np.ndarray
    sink: int
    child: np.ndarray
    terminal: np.ndarray
    letter_max: np.ndarray
    max_len: int
    cap: int

    def with_weights(self, weights) -> "CompiledModel":
        w = np.ascontiguousarray(weights, dtype=np.float64)
        if w.shape != self.weights.shape or not np.all(w > 0):
            raise NetError("weight vector must match the transitions and be strictly positive")
        return replace(self, weights=w)


def prefix_trie(lang: LogLanguage) -> tuple[np.ndarray, np.ndarray]:
    """Prefix tree of the log support: ``child[node, letter]`` and ``terminal[node]``."""
    letter = {a: i for i, a in enumerate(lang.alphabet)}
    child = [[-1] * lang.n]
    terminal = [-1]
    for idx, trace in enumerate(lang.unique_traces):
        node = 0
        for a in trace:
            nxt = child[node][letter[a]]
            if nxt < 0:
                nxt = len(child)
                child[node][letter[a]] = nxt
                child.append([-1] * lang.n)
                terminal.append(-1)
            node = nxt
        terminal[node] = idx
    return np.array(child, dtype=np.int64).reshape(-1, lang.n), np.array(terminal, dtype=np.int64)


def compile_model(net: StochasticWorkflowNet, lang: LogLanguage, firing_cap: int | None = None) -> CompiledModel:
    problems = validate_workflow(net)
    if problems:
        raise NetError("not a valid workflow net: " + "; ".join(problems))
    pidx = {p: i for i, p in enumerate(net.places)}
    letter = {a: i for i, a in enumerate(lang.alphabet)}
    n_t, n_p = len(net.transitions), len(net.places)
    pre_dense = np.zeros((n_t, n_p), dtype=np.int64)
    post_dense = np.zeros((n_t, n_p), dtype=np.int64)
    for ti, t in enumerate(net.transitions):
        for p, k in net.preset(t.id).items():
            pre_dense[ti, pidx[p]] = k
        for p, k in net.postset(t.id).items():
            post_dense[ti, pidx[p]] = k

    def csr(dense):
        ptr = np.zeros(n_t + 1, dtype=np.int64)
        idx, mult = [], []
        for ti in range(n_t):
            nz = np.flatnonzero(dense[ti])
            idx.extend(nz.tolist())
            mult.extend(dense[ti, nz].tolist())
            ptr[ti + 1] = len(idx)
        return ptr, np.array(idx, dtype=np.int64), np.array(mult, dtype=np.int64)

    labels = np.array(
        [_kernels.SILENT_LABEL if t.label is None else letter.get(t.label, _kernels.FOREIGN_LABEL) for t in net.transitions],
        dtype=np.int64,
    )
    m0 = np.zeros(n_p, dtype=np.int64)
    for p, k in net.initial_marking.items():
        m0[pidx[p]] = k
    child, terminal = prefix_trie(lang)
    pre_ptr, pre_idx, pre_mult = csr(pre_dense)
    post_ptr, post_idx, post_mult = csr(post_dense)
    return CompiledModel(
        pre_ptr=pre_ptr, pre_idx=pre_idx, pre_mult=pre_mult,
        post_ptr=post_ptr, post_idx=post_idx, post_mult=post_mult,
        pre_dense=pre_dense, post_dense=post_dense,
        labels=labels,
        weights=net.weights,
        m0=m0,
        sink=pidx[net.sink],
        child=child,
        terminal=terminal,
        letter_max=np.array([lang.letter_maxima[a] for a in lang.alphabet], dtype=np.int64),
        max_len=lang.max_len,
        cap=default_firing_cap(net, lang) if firing_cap is None else int(firing_cap),
    )


@dataclass
class LanguageEstimate:
    probs: np.ndarray
    counts: np.ndarray
    runs_total: int
    runs_accepted: int
    confidence: float
    width: float
    seed: int
    rejections: dict[str, int] = field(default_factory=dict)

    @property
    def acceptance_ratio(self) -> float:
        return self.runs_accepted / self.runs_total if self.runs_total else 0.0

    def meta(self) -> dict:
        return {
            "runs": self.runs_total,
            "runs_accepted": self.runs_accepted,
            "confidence": self.confidence,
            "width": self.width,
            "seed": self.seed,
            "acceptance_ratio": self.acceptance_ratio,
            "rejections": dict(self.rejections),
        }

    def dump(self, lang: LogLanguage) -> str:
        return dump_language(lang.unique_traces, self.probs, self.meta())


@lru_cache(maxsize=32)
def _z_value(confidence: float) -> float:
    return float(norm.ppf(0.5 + confidence / 2))


def interval_widths(counts: np.ndarray, accepted: int, confidence: float) -> np.ndarray:
    """Full widths of the per-bucket normal-approximation binomial intervals."""
    if accepted == 0:
        return np.full(counts.shape, np.inf)
    z = _z_value(confidence)
    p = counts / accepted
    return 2.0 * z * np.sqrt(p * (1.0 - p) / accepted)


def batch_rng(seed: int, batch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(batch,)))


def estimate_language(
    net: StochasticWorkflowNet | CompiledModel,
    lang: LogLanguage,
    confidence: float = 0.99,
    width: float = 0.1,
    max_runs: int = DEFAULT_MAX_RUNS,
    seed: int = 0,
    workers: int = 1,
    backend: str | None = None,
    batch_runs: int = BATCH_RUNS,
) -> LanguageEstimate:
    """Estimate the net's language over the log support, conditional on acceptance.

    Runs are simulated in batches of ``batch_runs``; batch ``b`` draws from its
    own stream derived from ``(seed, b)``. Simulation stops once every bucket's
    confidence interval is at most ``width`` wide, or after ``max_runs`` runs.
    """
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    if not width > 0:
        raise ValueError("width must be positive")
    model = net if isinstance(net, CompiledModel) else compile_model(net, lang)
    counts = np.zeros(lang.support_size, dtype=np.int64)
    reasons = np.zeros(len(_kernels.STATUS_NAMES), dtype=np.int64)
    total = accepted = 0
    batch = 0

    def one(b):
        status, result, _ = _kernels.simulate_batch(model, batch_runs, batch_rng(seed, b), backend)
        return status, result

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while total < max_runs:
            n_round = max(1, min(workers, -(-(max_runs - total) // batch_runs)))
            bs = range(batch, batch + n_round)
            outs = list(pool.map(one, bs)) if pool else [one(b) for b in bs]
            batch += n_round
            for status, result in outs:
                reasons += np.bincount(status, minlength=reasons.size)
                counts += np.bincount(result[status == _kernels.ACCEPTED], minlength=counts.size)
                total += status.size
            accepted = int(counts.sum())
            if reasons[_kernels.UNSAFE]:
                raise UnsafeMarkingError("simulation reached a marking with more than one token on a place")
            if accepted and np.all(interval_widths(counts, accepted, confidence) <= width):
                break
    finally:
        if pool:
            pool.shutdown()

    rejections = {
        _kernels.STATUS_NAMES[code]: int(k)
        for code, k in enumerate(reasons)
        if k and code not in (_kernels.ACCEPTED, _kernels.RUNNING)
    }
    if accepted == 0:
        diag = {"runs": total, "rejections": rejections}
        raise NoAcceptedTraceError(f"no accepted trace after {total} runs", diag)
    return LanguageEstimate(
        probs=counts / accepted,
        counts=counts,
        runs_total=total,
        runs_accepted=accepted,
        confidence=confidence,
        width=width,
        seed=seed,
        rejections=rejections,
    )
