"""ABC rejection sampling and ABC-SMC search over transition weights.

Particles are weight vectors in ``[w_min, 1]^k``; a particle's score is the
restricted EMD between the log language and the simulated language of the net
carrying those weights. Layer tolerances are the median score of the previous
layer; the search stops once a layer improves on its tolerance by less than
``zeta``.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import truncnorm

from .detector import DEFAULT_MAX_RUNS, CompiledModel, NoAcceptedTraceError, compile_model, estimate_language
from .distance import remd
from .eventlog import LogLanguage
from .petrinet import StochasticWorkflowNet

log = logging.getLogger(__name__)

W_MIN = 1e-9
VAR_MIN = 1e-6


class AttemptCapExceeded(RuntimeError):
    pass


@dataclass
class ABCConfig:
    particles: int = 100
    eps1: float = 1.0
    zeta: float = 0.005
    confidence: float = 0.99
    width: float = 0.1
    max_layers: int = 100
    seed: int = 0
    workers: int = 1
    ground: str = "normalized"
    max_runs: int = DEFAULT_MAX_RUNS
    w_min: float = W_MIN
    var_min: float = VAR_MIN
    rejection_attempts: int = 10_000
    smc_attempts: int = 100_000

    def check(self):
        if self.particles < 2:
            raise ValueError("need at least 2 particles")
        if not 0 <= self.eps1 <= 1:
            raise ValueError("eps1 must lie in [0, 1]")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if self.max_layers < 1:
            raise ValueError("max_layers must be at least 1")


class Scorer:
    """Scores weight vectors against one log; picklable for worker processes."""

    def __init__(self, net: StochasticWorkflowNet | CompiledModel, lang: LogLanguage, confidence=0.99,
                 width=0.1, max_runs=DEFAULT_MAX_RUNS, ground="normalized"):
        self.model = net if isinstance(net, CompiledModel) else compile_model(net, lang)
        self.lang = lang
        self.confidence = confidence
        self.width = width
        self.max_runs = max_runs
        self.ground = ground
        self.runs = 0

    @property
    def k(self) -> int:
        return self.model.weights.shape[0]

    def __call__(self, w, seed: int) -> float:
        try:
            est = estimate_language(
                self.model.with_weights(w), self.lang, self.confidence, self.width, self.max_runs, seed
            )
        except NoAcceptedTraceError as exc:
            self.runs += exc.diagnostics["runs"]
            return 1.0
        except Exception as exc:  # noqa: BLE001 - any simulation failure ranks as worst
            log.warning("scoring failed (%s); using 1.0", exc)
            return 1.0
        self.runs += est.runs_total
        return remd(self.lang, est, self.ground)


def score(net, lang, w, confidence=0.99, width=0.1, seed=0, ground="normalized", max_runs=DEFAULT_MAX_RUNS) -> float:
    """rEMD between ``lang`` and the simulated language of ``net`` with weights ``w``."""
    return Scorer(net, lang, confidence, width, max_runs, ground)(w, seed)


def adaptive_tolerance(scores) -> float:
    return float(np.median(np.asarray(scores, dtype=np.float64)))


def kernel_update(weights: np.ndarray, deltas: np.ndarray, var_min: float = VAR_MIN) -> np.ndarray:
    """Per-component variance: twice the delta-weighted empirical variance, floored."""
    d = np.asarray(deltas, dtype=np.float64)
    d = d / d.sum()
    mean = d @ weights
    var = d @ (weights - mean) ** 2
    return np.maximum(2.0 * var, var_min)


def _bounds(center, sd, w_min):
    return (w_min - center) / sd, (1.0 - center) / sd


def kernel_sample(center, variances, rng: np.random.Generator, w_min: float = W_MIN) -> np.ndarray:
    """Inverse-CDF draw from independent normals truncated to ``[w_min, 1]``."""
    center = np.asarray(center, dtype=np.float64)
    sd = np.sqrt(variances)
    a, b = _bounds(center, sd, w_min)
    x = truncnorm.ppf(rng.random(center.shape), a, b, loc=center, scale=sd)
    return np.clip(x, w_min, 1.0)


def kernel_log_density(x, centers, variances, w_min: float = W_MIN) -> np.ndarray:
    """Log density of ``x`` under the kernel centred at each row of ``centers``."""
    centers = np.atleast_2d(centers)
    sd = np.sqrt(variances)
    a, b = _bounds(centers, sd, w_min)
    return truncnorm.logpdf(x, a, b, loc=centers, scale=sd).sum(axis=-1)


def kernel_density(x, center, variances, w_min: float = W_MIN) -> float:
    return float(np.exp(kernel_log_density(x, center, variances, w_min))[0])


@dataclass
class Population:
    layer: int
    weights: np.ndarray  # (n, k)
    scores: np.ndarray
    deltas: np.ndarray
    tolerance: float
    attempts: int
    runs: int
    variances: np.ndarray | None = None

    def summary(self) -> dict:
        return {
            "layer": self.layer,
            "tolerance": self.tolerance,
            "median_score": float(np.median(self.scores)),
            "min_score": float(self.scores.min()),
            "attempts": self.attempts,
            "acceptance_rate": len(self.scores) / self.attempts,
            "runs": self.runs,
        }


@dataclass
class DiscoveryReport:
    transition_ids: list[str]
    layers: list[Population]
    best_weights: np.ndarray
    best_score: float
    best_layer: int
    total_runs: int
    wall_clock: float
    config: dict
    stop_reason: str
    warnings: list[str] = field(default_factory=list)

    @property
    def tolerances(self) -> list[float]:
        return [p.tolerance for p in self.layers]

    @property
    def final(self) -> Population:
        return self.layers[-1]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "transitions": self.transition_ids,
            "layers": [p.summary() for p in self.layers],
            "best": {
                "layer": self.best_layer,
                "score": self.best_score,
                "weights": dict(zip(self.transition_ids, self.best_weights.tolist())),
            },
            "total_runs": self.total_runs,
            "wall_clock": self.wall_clock,
            "stop_reason": self.stop_reason,
            "warnings": self.warnings,
        }

    def posterior_rows(self):
        for p in self.layers:
            for j in range(len(p.scores)):
                yield [p.layer, j, *p.weights[j].tolist(), float(p.scores[j]), float(p.deltas[j])]


def slot_rng(seed: int, layer: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(layer, slot)))


def _draw_prior(rng, k, w_min):
    return np.clip(rng.random(k), w_min, 1.0)


def _search_prior(scorer: Scorer, cfg: ABCConfig, slot: int):
    rng = slot_rng(cfg.seed, 1, slot)
    runs0 = scorer.runs
    for attempt in range(1, cfg.rejection_attempts + 1):
        w = _draw_prior(rng, scorer.k, cfg.w_min)
        s = scorer(w, int(rng.integers(2**63)))
        if s <= cfg.eps1:
            return w, s, attempt, scorer.runs - runs0
    raise AttemptCapExceeded(
        f"slot {slot}: no prior draw within eps1={cfg.eps1} after {cfg.rejection_attempts} attempts; "
        "try a larger eps1"
    )


def _search_kernel(scorer: Scorer, cfg: ABCConfig, layer: int, slot: int, prev: Population, variances, eps):
    rng = slot_rng(cfg.seed, layer, slot)
    runs0 = scorer.runs
    n = len(prev.deltas)
    for attempt in range(1, cfg.smc_attempts + 1):
        anc = rng.choice(n, p=prev.deltas)
        w = kernel_sample(prev.weights[anc], variances, rng, cfg.w_min)
        s = scorer(w, int(rng.integers(2**63)))
        if s < eps:
            return w, s, attempt, scorer.runs - runs0
    raise AttemptCapExceeded(f"layer {layer} slot {slot}: no proposal below {eps:.6g} in {cfg.smc_attempts} attempts")


_WORKER_SCORER: Scorer | None = None


def _init_worker(scorer):
    global _WORKER_SCORER
    _WORKER_SCORER = scorer


def _worker_prior(args):
    cfg, slot = args
    return _search_prior(_WORKER_SCORER, cfg, slot)


def _worker_kernel(args):
    return _search_kernel(_WORKER_SCORER, *args)


def _run_slots(pool, scorer, fn_local, fn_remote, arglist):
    if pool is None:
        return [fn_local(scorer, *a) for a in arglist]
    return list(pool.map(fn_remote, arglist))


def rejection_sample(net, lang, n: int, eps1: float, confidence=0.99, width=0.1, seed=0, **kw) -> Population:
    """Layer 1: ``n`` uniform prior draws, each redrawn until its score is at most ``eps1``."""
    cfg = ABCConfig(particles=n, eps1=eps1, confidence=confidence, width=width, seed=seed, **kw)
    cfg.check()
    scorer = Scorer(net, lang, confidence, width, cfg.max_runs, cfg.ground)
    return _rejection_layer(None, scorer, cfg)


def _rejection_layer(pool, scorer, cfg) -> Population:
    out = _run_slots(pool, scorer, _search_prior, _worker_prior,
                     [(cfg, j) for j in range(cfg.particles)])
    n = cfg.particles
    return Population(
        layer=1,
        weights=np.array([o[0] for o in out]),
        scores=np.array([o[1] for o in out]),
        deltas=np.full(n, 1.0 / n),
        tolerance=cfg.eps1,
        attempts=sum(o[2] for o in out),
        runs=sum(o[3] for o in out),
    )


def _smc_layer(pool, scorer, cfg, layer, prev: Population, eps) -> Population:
    variances = kernel_update(prev.weights, prev.deltas, cfg.var_min)
    args = [(cfg, layer, j, prev, variances, eps) for j in range(cfg.particles)]
    out = _run_slots(pool, scorer, _search_kernel, _worker_kernel, args)
    weights = np.array([o[0] for o in out])
    log_prev = np.log(prev.deltas)
    log_delta = np.array(
        [-logsumexp(log_prev + kernel_log_density(w, prev.weights, variances, cfg.w_min)) for w in weights]
    )
    # prior density is 1 on the box, so it drops out of the update
    deltas = np.exp(log_delta - logsumexp(log_delta))
    deltas /= deltas.sum()
    return Population(
        layer=layer,
        weights=weights,
        scores=np.array([o[1] for o in out]),
        deltas=deltas,
        tolerance=eps,
        attempts=sum(o[2] for o in out),
        runs=sum(o[3] for o in out),
        variances=variances,
    )


def smc_discover(net: StochasticWorkflowNet, lang: LogLanguage, config: ABCConfig | None = None, **overrides) -> DiscoveryReport:
    """Search transition weights minimizing rEMD to the log with adaptive-tolerance ABC-SMC."""
    cfg = config or ABCConfig()
    if overrides:
        cfg = ABCConfig(**{**asdict(cfg), **overrides})
    cfg.check()
    t0 = time.perf_counter()
    scorer = Scorer(net, lang, cfg.confidence, cfg.width, cfg.max_runs, cfg.ground)
    pool = ProcessPoolExecutor(cfg.workers, initializer=_init_worker, initargs=(scorer,)) if cfg.workers > 1 else None
    layers: list[Population] = []
    warnings: list[str] = []
    stop = "max_layers"
    try:
        pop = _rejection_layer(pool, scorer, cfg)
        layers.append(pop)
        _progress(pop, layers)
        while len(layers) < cfg.max_layers:
            eps = adaptive_tolerance(pop.scores)
            if eps >= pop.tolerance:
                # layer-1 scores may sit exactly at eps1; keep tolerances strictly decreasing
                eps = math.nextafter(pop.tolerance, -math.inf)
            if eps <= 0:
                stop = "zero_tolerance"
                break
            try:
                nxt = _smc_layer(pool, scorer, cfg, len(layers) + 1, pop, eps)
            except AttemptCapExceeded as exc:
                warnings.append(str(exc))
                log.warning("%s; stopping with %d layers", exc, len(layers))
                stop = "attempt_cap"
                break
            layers.append(nxt)
            _progress(nxt, layers)
            improvement = eps - float(np.median(nxt.scores))
            pop = nxt
            if improvement < cfg.zeta:
                stop = "improvement_below_zeta"
                break
    finally:
        if pool:
            pool.shutdown()

    best_layer, best_j = min(
        ((p.layer, j) for p in layers for j in range(len(p.scores))),
        key=lambda lj: (layers[lj[0] - 1].scores[lj[1]], -lj[0]),
    )
    best = layers[best_layer - 1]
    return DiscoveryReport(
        transition_ids=_transition_ids(net),
        layers=layers,
        best_weights=best.weights[best_j].copy(),
        best_score=float(best.scores[best_j]),
        best_layer=best_layer,
        total_runs=sum(p.runs for p in layers),
        wall_clock=time.perf_counter() - t0,
        config=asdict(cfg),
        stop_reason=stop,
        warnings=warnings,
    )


def _transition_ids(net):
    if isinstance(net, StochasticWorkflowNet):
        return net.transition_ids
    return [f"t{i}" for i in range(net.weights.shape[0])]


def _progress(pop: Population, layers):
    s = pop.summary()
    log.info(
        "layer %d: tolerance=%.6g median=%.6g best=%.6g acceptance=%.3f runs=%d cumulative_runs=%d",
        s["layer"], s["tolerance"], s["median_score"], s["min_score"], s["acceptance_rate"], s["runs"],
        sum(p.runs for p in layers),
    )
