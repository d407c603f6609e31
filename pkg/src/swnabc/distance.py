"""Levenshtein ground distance, exact discrete EMD and restricted EMD."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .eventlog import LogLanguage

log = logging.getLogger(__name__)

MASS_TOL = 1e-9


class DistanceError(ValueError):
    pass


def levenshtein(t1: Sequence, t2: Sequence) -> int:
    """Unit-cost edit distance (insertions, deletions, substitutions)."""
    if len(t1) < len(t2):
        t1, t2 = t2, t1
    prev = list(range(len(t2) + 1))
    for i, a in enumerate(t1, start=1):
        cur = [i]
        for j, b in enumerate(t2, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a != b)))
        prev = cur
    return prev[-1]


def ground_distance(t1: Sequence, t2: Sequence, mode: str = "normalized") -> float:
    d = levenshtein(t1, t2)
    if mode == "raw":
        return d
    if mode != "normalized":
        raise ValueError(f"unknown ground mode {mode!r}")
    longest = max(len(t1), len(t2))
    return d / longest if longest else 0.0


@lru_cache(maxsize=64)
def _ground_matrix(rows: tuple, cols: tuple, mode: str) -> np.ndarray:
    m = np.array([[ground_distance(a, b, mode) for b in cols] for a in rows], dtype=np.float64)
    m.setflags(write=False)
    return m


def ground_matrix(rows: Sequence[Sequence], cols: Sequence[Sequence], mode: str = "normalized") -> np.ndarray:
    return _ground_matrix(tuple(map(tuple, rows)), tuple(map(tuple, cols)), mode)


@dataclass(frozen=True)
class DiscreteDistribution:
    support: tuple
    mass: np.ndarray

    def __post_init__(self):
        if len(set(self.support)) != len(self.support):
            raise DistanceError("support entries must be distinct")
        if len(self.support) != len(self.mass):
            raise DistanceError("support and mass lengths differ")

    @classmethod
    def from_pairs(cls, pairs) -> "DiscreteDistribution":
        pairs = list(pairs.items() if hasattr(pairs, "items") else pairs)
        return cls(tuple(tuple(t) for t, _ in pairs), np.array([m for _, m in pairs], dtype=np.float64))

    def normalized(self) -> "DiscreteDistribution":
        total = self.mass.sum()
        if total <= 0:
            raise DistanceError("distribution has zero total mass")
        return DiscreteDistribution(self.support, self.mass / total)


# -- transportation simplex -------------------------------------------------


def _least_cost_start(a, b, cost):
    """Matrix-minimum initial basis: a spanning tree of exactly m + n - 1 cells."""
    m, n = len(a), len(b)
    ra, rb = a.tolist(), b.tolist()
    row_on, col_on = [True] * m, [True] * n
    rows_left, cols_left = m, n
    flow = np.zeros((m, n))
    basis = []
    for k in np.argsort(cost, axis=None, kind="stable").tolist():
        i, j = divmod(k, n)
        if not (row_on[i] and col_on[j]):
            continue
        x = min(ra[i], rb[j])
        flow[i, j] = x
        basis.append((i, j))
        ra[i] -= x
        rb[j] -= x
        if rows_left == 1 and cols_left == 1:
            return flow, basis
        # drop exactly one line per cell so degenerate steps keep the tree spanning
        if rows_left > 1 and (cols_left == 1 or ra[i] <= rb[j]):
            row_on[i] = False
            rows_left -= 1
        else:
            col_on[j] = False
            cols_left -= 1
    raise AssertionError("initial basis did not span")


def _potentials(cost_rows, basis, m, n):
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    pot = [None] * (m + n)
    pot[0] = 0.0
    stack = [0]
    while stack:
        x = stack.pop()
        px = pot[x]
        for y in adj[x]:
            if pot[y] is None:
                # u_i + v_j = c_ij on basic cells
                pot[y] = (cost_rows[x][y - m] if x < m else cost_rows[y][x - m]) - px
                stack.append(y)
    return np.array(pot[:m]), np.array(pot[m:]), adj


def _tree_path(adj, start, goal):
    parent = {start: None}
    queue = deque([start])
    while queue:
        x = queue.popleft()
        if x == goal:
            break
        for y in adj[x]:
            if y not in parent:
                parent[y] = x
                queue.append(y)
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def transport(a: np.ndarray, b: np.ndarray, cost: np.ndarray, max_iter: int | None = None) -> tuple[float, np.ndarray]:
    """Solve the balanced transportation problem exactly; returns (cost, plan)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    m, n = cost.shape
    flow, basis = _least_cost_start(a, b, cost)
    cost_rows = cost.tolist()
    in_basis = np.zeros((m, n), dtype=bool)
    for cell in basis:
        in_basis[cell] = True
    tol = 1e-12 * max(1.0, float(np.abs(cost).max(initial=0.0)))
    max_iter = max_iter or 50 * (m * n + 10)
    for it in range(max_iter):
        u, v, adj = _potentials(cost_rows, basis, m, n)
        reduced = cost - u[:, None] - v[None, :]
        reduced[in_basis] = 0.0
        if reduced.min() >= -tol:
            break
        if it < max_iter // 2:
            i, j = np.unravel_index(np.argmin(reduced), reduced.shape)
        else:  # Bland's rule once pivoting drags on, to rule out cycling
            i, j = np.argwhere(reduced < -tol)[0]
        path = _tree_path(adj, int(i), m + int(j))
        cells = []
        for x, y in zip(path, path[1:]):
            cells.append((x, y - m) if x < m else (y, x - m))
        minus = cells[0::2]
        plus = cells[1::2]
        theta_cell = min(minus, key=lambda c: (flow[c], c))
        theta = flow[theta_cell]
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[i, j] += theta
        flow[theta_cell] = 0.0
        basis.remove(theta_cell)
        in_basis[theta_cell] = False
        basis.append((int(i), int(j)))
        in_basis[i, j] = True
    else:
        log.warning("transportation simplex hit the iteration limit (%d)", max_iter)
    np.maximum(flow, 0.0, out=flow)
    return float(np.sum(flow * cost)), flow


def _check_mass(mass, name):
    if np.any(mass < 0):
        raise DistanceError(f"{name} has negative mass")
    if abs(mass.sum() - 1.0) > MASS_TOL:
        raise DistanceError(f"{name} is not normalized (total mass {mass.sum()!r})")


def emd(
    p: DiscreteDistribution,
    q: DiscreteDistribution,
    ground: str | Callable[[Sequence, Sequence], float] = "normalized",
) -> float:
    """Exact Earth Mover's Distance between two normalized trace distributions."""
    _check_mass(p.mass, "p")
    _check_mass(q.mass, "q")
    pi = np.flatnonzero(p.mass > 0)
    qi = np.flatnonzero(q.mass > 0)
    rows = [p.support[i] for i in pi]
    cols = [q.support[j] for j in qi]
    if callable(ground):
        cost = np.array([[float(ground(r, c)) for c in cols] for r in rows])
    else:
        cost = ground_matrix(rows, cols, ground)
    a = p.mass[pi]
    b = q.mass[qi] * (a.sum() / q.mass[qi].sum())
    value, _ = transport(a, b, cost)
    return max(value, 0.0)


def remd(
    lang: LogLanguage,
    model,
    ground: str = "normalized",
    residual: bool = False,
) -> float:
    """Restricted EMD between the log language and a model language over the log support.

    ``model`` is an array of masses indexed by convex index, a
    :class:`~swnabc.detector.LanguageEstimate`, or a :class:`DiscreteDistribution`
    whose support lies inside the log support. The model side is renormalized
    to mass 1 unless ``residual`` is set, in which case the missing mass is
    moved to a virtual trace at distance 1 from every log trace (normalized
    ground only).
    """
    mass = _model_mass(lang, model)
    total = float(mass.sum())
    log_dist = DiscreteDistribution(lang.unique_traces, lang.probabilities)
    if total <= 0:
        if ground == "raw":
            raise DistanceError("model has zero mass on the log support")
        log.debug("zero model mass on the log support; rEMD taken as 1.0")
        return 1.0
    if not residual:
        return emd(log_dist, DiscreteDistribution(lang.unique_traces, mass / total), ground)
    if ground != "normalized":
        raise DistanceError("residual mode needs the normalized ground distance")
    if total > 1 + MASS_TOL:
        raise DistanceError("model mass exceeds 1 in residual mode")
    qi = np.flatnonzero(mass > 0)
    cost = np.hstack([ground_matrix(lang.unique_traces, [lang.unique_traces[j] for j in qi], ground),
                      np.ones((lang.support_size, 1))])
    b = np.append(mass[qi], max(0.0, 1.0 - total))
    value, _ = transport(lang.probabilities, b * (1.0 / b.sum()), cost)
    return max(value, 0.0)


def _model_mass(lang: LogLanguage, model) -> np.ndarray:
    if isinstance(model, DiscreteDistribution):
        index = {t: i for i, t in enumerate(lang.unique_traces)}
        mass = np.zeros(lang.support_size)
        for t, m in zip(model.support, model.mass):
            if tuple(t) not in index:
                if m > 0:
                    raise DistanceError(f"model trace {t} is outside the log support")
                continue
            mass[index[tuple(t)]] += m
        return mass
    probs = getattr(model, "probs", model)
    mass = np.asarray(probs, dtype=np.float64)
    if mass.shape != (lang.support_size,):
        raise DistanceError(f"expected {lang.support_size} masses, got shape {mass.shape}")
    if np.any(mass < 0):
        raise DistanceError("negative model mass")
    return mass
