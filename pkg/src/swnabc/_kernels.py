"""Batched detector simulation kernels.

Two interchangeable backends advance a batch of runs through the product of a
net and the language detector:

* ``numba``: per-run loop compiled with ``@njit`` (default when numba imports).
* ``numpy``: step-synchronous, vectorised across runs.

Both consume the same uniform matrix ``u[step, run]`` (one draw per firing) and
perform floating point operations in the same order, so they return identical
results for the same generator. Set ``SWNABC_DISABLE_NUMBA=1`` to force the
numpy path.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


RUNNING = 0
ACCEPTED = 1
BOUND_EXCEEDED = 2
DEADLOCK_NONFINAL = 3
NOT_IN_LOG = 4
FIRING_CAP = 5
UNSAFE = 6

STATUS_NAMES = {
    RUNNING: "running",
    ACCEPTED: "accepted",
    BOUND_EXCEEDED: "bound-exceeded",
    DEADLOCK_NONFINAL: "deadlock-nonfinal",
    NOT_IN_LOG: "not-in-log",
    FIRING_CAP: "firing-cap",
    UNSAFE: "unsafe",
}

SILENT_LABEL = -1
FOREIGN_LABEL = -2  # visible label absent from the log alphabet: the detector blocks

FIRST_BLOCK_EXTRA = 4
BLOCK = 16


def default_backend() -> str:
    flag = os.environ.get("SWNABC_DISABLE_NUMBA", "").strip().lower()
    if flag in ("1", "true", "yes", "on") or not NUMBA_AVAILABLE:
        return "numpy"
    return "numba"


@njit(cache=True, nogil=True)
def _advance_numba(
    pre_ptr, pre_idx, pre_mult, post_ptr, post_idx, post_mult,
    labels, weights, sink, child, terminal, letter_max, max_len, cap,
    marking, node, counts, length, fired, status, result, u, s0,
):
    n_runs, n_places = marking.shape
    n_trans = labels.shape[0]
    s1 = s0 + u.shape[0]
    en = np.zeros(n_trans, dtype=np.bool_)
    for r in range(n_runs):
        while status[r] == 0:
            total = 0.0
            any_en = False
            for t in range(n_trans):
                ok = True
                for k in range(pre_ptr[t], pre_ptr[t + 1]):
                    if marking[r, pre_idx[k]] < pre_mult[k]:
                        ok = False
                        break
                en[t] = ok
                if ok:
                    total += weights[t]
                    any_en = True
            if not any_en:
                tokens = 0
                for p in range(n_places):
                    tokens += marking[r, p]
                if tokens == 1 and marking[r, sink] == 1:
                    if terminal[node[r]] >= 0:
                        status[r] = 1
                        result[r] = terminal[node[r]]
                    else:
                        status[r] = 4
                else:
                    status[r] = 3
                break
            if fired[r] >= cap:
                status[r] = 5
                break
            if fired[r] >= s1:
                break
            target = u[fired[r] - s0, r] * total
            cum = 0.0
            pick = -1
            for t in range(n_trans):
                if en[t]:
                    cum += weights[t]
                    pick = t
                    if cum > target:
                        break
            fired[r] += 1
            for k in range(pre_ptr[pick], pre_ptr[pick + 1]):
                marking[r, pre_idx[k]] -= pre_mult[k]
            unsafe = False
            for k in range(post_ptr[pick], post_ptr[pick + 1]):
                marking[r, post_idx[k]] += post_mult[k]
                if marking[r, post_idx[k]] > 1:
                    unsafe = True
            if unsafe:
                status[r] = 6
                break
            lab = labels[pick]
            if lab == -2:
                status[r] = 4
            elif lab >= 0:
                counts[r, lab] += 1
                length[r] += 1
                if counts[r, lab] > letter_max[lab] or length[r] > max_len:
                    status[r] = 2
                else:
                    nxt = child[node[r], lab]
                    if nxt < 0:
                        status[r] = 4
                    else:
                        node[r] = nxt


def _advance_numpy(model, marking, node, counts, length, fired, status, result, u, s0):
    pre, post, weights = model.pre_dense, model.post_dense, model.weights
    labels = model.labels
    s1 = s0 + u.shape[0]
    for s in range(s0, s1 + 1):
        act = np.flatnonzero(status == RUNNING)
        if act.size == 0:
            return
        m = marking[act]
        en = np.all(m[:, None, :] >= pre[None, :, :], axis=2)
        any_en = en.any(axis=1)

        dead = act[~any_en]
        if dead.size:
            final = (marking[dead].sum(axis=1) == 1) & (marking[dead, model.sink] == 1)
            idx = model.terminal[node[dead]]
            acc = final & (idx >= 0)
            status[dead[acc]] = ACCEPTED
            result[dead[acc]] = idx[acc]
            status[dead[final & (idx < 0)]] = NOT_IN_LOG
            status[dead[~final]] = DEADLOCK_NONFINAL

        live = any_en.copy()
        capped = live & (fired[act] >= model.cap)
        status[act[capped]] = FIRING_CAP
        live &= ~capped
        if s == s1 or not live.any():
            continue
        act, en = act[live], en[live]
        wmat = np.where(en, weights[None, :], 0.0)
        cum = np.cumsum(wmat, axis=1)
        target = u[s - s0, act] * cum[:, -1]
        over = cum > target[:, None]
        last_en = en.shape[1] - 1 - np.argmax(en[:, ::-1], axis=1)
        pick = np.where(over.any(axis=1), np.argmax(over, axis=1), last_en)

        fired[act] += 1
        marking[act] += post[pick] - pre[pick]
        bad = (marking[act] > 1).any(axis=1)
        status[act[bad]] = UNSAFE
        ok = ~bad
        act, pick = act[ok], pick[ok]
        lab = labels[pick]
        status[act[lab == FOREIGN_LABEL]] = NOT_IN_LOG
        vis = lab >= 0
        act, lab = act[vis], lab[vis]
        if act.size == 0:
            continue
        counts[act, lab] += 1
        length[act] += 1
        over_bound = (counts[act, lab] > model.letter_max[lab]) | (length[act] > model.max_len)
        status[act[over_bound]] = BOUND_EXCEEDED
        act, lab = act[~over_bound], lab[~over_bound]
        nxt = model.child[node[act], lab]
        status[act[nxt < 0]] = NOT_IN_LOG
        node[act[nxt >= 0]] = nxt[nxt >= 0]


def simulate_batch(model, n_runs: int, rng: np.random.Generator, backend: str | None = None):
    """Simulate ``n_runs`` detector runs; returns ``(status, result, fired)`` arrays.

    ``result[r]`` is the convex index of an accepted run and -1 otherwise.
    """
    backend = backend or default_backend()
    marking = np.tile(model.m0, (n_runs, 1))
    node = np.zeros(n_runs, dtype=np.int64)
    counts = np.zeros((n_runs, model.letter_max.shape[0]), dtype=np.int64)
    length = np.zeros(n_runs, dtype=np.int64)
    fired = np.zeros(n_runs, dtype=np.int64)
    status = np.zeros(n_runs, dtype=np.int64)
    result = np.full(n_runs, -1, dtype=np.int64)
    s0 = 0
    block = min(model.cap, model.max_len + FIRST_BLOCK_EXTRA)
    while True:
        u = rng.random((block, n_runs))
        if backend == "numba":
            _advance_numba(
                model.pre_ptr, model.pre_idx, model.pre_mult,
                model.post_ptr, model.post_idx, model.post_mult,
                model.labels, model.weights, model.sink, model.child, model.terminal,
                model.letter_max, model.max_len, model.cap,
                marking, node, counts, length, fired, status, result, u, s0,
            )
        elif backend == "numpy":
            _advance_numpy(model, marking, node, counts, length, fired, status, result, u, s0)
        else:
            raise ValueError(f"unknown backend {backend!r}")
        s0 += block
        if not (status == RUNNING).any():
            return status, result, fired
        block = min(BLOCK, model.cap - s0)
