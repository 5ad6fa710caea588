"""
Event-driven Monte Carlo simulation of push gossip with a versioned source.

All Poisson clocks are superposed into one clock of rate λe + λ + Σ_i r_i
(r_i the out-rate of node i, λ for built families). Each event picks its type
by rate: source self-update (N0 += 1), source push to a uniform node
(N_t := N0), or a gossip push from node i to j ~ λ_ij / r_i
(N_j := max(N_j, N_i)). Recipients are drawn from per-node Vose alias tables.

The age X(t) = n·N0 − Σ_i N_i (all nodes) or N0 − N_anchor (single node) is
piecewise constant, so its time integral over (warmup, horizon] is
accumulated exactly between events.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .exact_age import AgeKind, AgeResult
from .shared.config import get_config, get_config_manager, init_worker_config
from .shared.error_handler import SimulationError, ValidationError, validate_int_range
from .shared.logging_utils import LogContext, get_logger, log_performance
from .topology import Graph

logger = get_logger(__name__)

EVENT_TYPES = ("source_self", "source_push", "gossip")


class Estimator(str, Enum):
    """How the per-replication age is averaged."""
    ALL_NODES = "all_nodes"
    SINGLE_NODE_MEAN = "single_node_mean"


@dataclass(frozen=True)
class SimConfig:
    """Simulation run settings.

    ``warmup`` defaults to the configured fraction of the horizon and
    ``horizon`` to the time at which λe·t reaches the configured number of
    source updates.
    """
    horizon: Optional[float] = None
    warmup: Optional[float] = None
    replications: Optional[int] = None
    seed: Optional[int] = None
    estimator: Estimator = Estimator.ALL_NODES
    confidence: Optional[float] = None
    anchor: int = 0
    per_node: bool = False
    workers: Optional[int] = None
    batch_size: Optional[int] = None

    def resolved(self, g: Graph) -> "SimConfig":
        """Fill defaults from configuration and validate."""
        defaults = get_config().simulation
        horizon = self.horizon
        if horizon is None:
            if g.source_rate <= 0:
                raise ValidationError("A horizon is required when lambda_e is 0")
            horizon = defaults.min_source_updates / g.source_rate
        horizon = float(horizon)
        if not horizon > 0 or not math.isfinite(horizon):
            raise ValidationError(f"horizon must be positive and finite, got {self.horizon!r}")

        warmup = defaults.warmup_fraction * horizon if self.warmup is None else float(self.warmup)
        if not 0.0 <= warmup < horizon:
            raise ValidationError(f"warmup must lie in [0, horizon), got {warmup} with horizon {horizon}")

        replications = validate_int_range(
            "replications", defaults.replications if self.replications is None else self.replications, 1)
        confidence = defaults.confidence if self.confidence is None else float(self.confidence)
        if confidence and not 0.0 < confidence < 1.0:
            raise ValidationError(f"confidence must lie in (0, 1), got {confidence}")
        if confidence and replications < 2:
            raise ValidationError("A confidence interval needs at least 2 replications; "
                                  "set confidence to 0 for a single replication")

        return SimConfig(
            horizon=horizon,
            warmup=warmup,
            replications=replications,
            seed=int(defaults.seed if self.seed is None else self.seed),
            estimator=Estimator(self.estimator),
            confidence=confidence,
            anchor=validate_int_range("anchor", self.anchor, 0, g.n - 1),
            per_node=self.per_node,
            workers=validate_int_range("workers", defaults.workers if self.workers is None else self.workers, 1),
            batch_size=validate_int_range(
                "batch_size", defaults.batch_size if self.batch_size is None else self.batch_size, 1),
        )


@dataclass
class SimState:
    """Version counters and accumulators of one replication."""
    n0: int
    versions: List[int]
    time: float = 0.0
    age_integral: float = 0.0
    source_integral: float = 0.0
    node_integrals: Optional[List[float]] = None
    last_change: Optional[List[float]] = None
    event_counts: List[int] = field(default_factory=lambda: [0, 0, 0])


@dataclass(frozen=True)
class ReplicationResult:
    """Outcome of one replication."""
    index: int
    mean_age: float
    events: int
    event_counts: Dict[str, int]
    per_node: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SimulationReport:
    """Replication summary; ``age`` carries the mean and CI half-width."""
    age: AgeResult
    replications: Tuple[ReplicationResult, ...]
    config: SimConfig

    @property
    def events(self) -> int:
        return sum(r.events for r in self.replications)

    @property
    def event_counts(self) -> Dict[str, int]:
        totals = {name: 0 for name in EVENT_TYPES}
        for r in self.replications:
            for name, count in r.event_counts.items():
                totals[name] += count
        return totals

    @property
    def per_node(self) -> Optional[np.ndarray]:
        if self.replications[0].per_node is None:
            return None
        return np.mean([r.per_node for r in self.replications], axis=0)


class AliasTables:
    """Vose alias tables for every node's recipient distribution, in CSR layout."""

    def __init__(self, g: Graph):
        rates = g.rates
        self.indptr = rates.indptr.astype(np.int64)
        self.recipients = rates.indices.astype(np.int64)
        self.prob = np.ones(rates.nnz, dtype=float)
        self.alias = np.zeros(rates.nnz, dtype=np.int64)
        for i in range(g.n):
            start, end = self.indptr[i], self.indptr[i + 1]
            if end > start:
                prob, alias = vose_table(rates.data[start:end])
                self.prob[start:end] = prob
                self.alias[start:end] = alias

    def sample(self, node: int, u: float) -> int:
        """Recipient of a push from node, from one uniform draw u in [0, 1)."""
        start = self.indptr[node]
        size = self.indptr[node + 1] - start
        scaled = u * size
        slot = int(scaled)
        if scaled - slot >= self.prob[start + slot]:
            slot = self.alias[start + slot]
        return int(self.recipients[start + slot])


def vose_table(weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vose alias table (acceptance probabilities, alias slots) for weights."""
    weights = np.asarray(weights, dtype=float)
    size = weights.shape[0]
    total = weights.sum()
    if size == 0 or total <= 0:
        raise SimulationError("Alias table needs positive weights")
    scaled = weights * (size / total)
    prob = np.ones(size, dtype=float)
    alias = np.arange(size, dtype=np.int64)
    small = [i for i in range(size) if scaled[i] < 1.0]
    large = [i for i in range(size) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        l = large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = (scaled[l] + scaled[s]) - 1.0
        if scaled[l] < 1.0:
            small.append(l)
        else:
            large.append(l)
    return prob, alias


def _window(start: float, end: float, warmup: float, horizon: float) -> float:
    """Length of (start, end] ∩ (warmup, horizon]."""
    return max(0.0, min(end, horizon) - max(start, warmup))


def run_replication(g: Graph, cfg: SimConfig, index: int, seed_seq: np.random.SeedSequence) -> ReplicationResult:
    """One sequential replication; cfg must already be resolved."""
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    n = g.n
    lam_e, lam = g.source_rate, g.gossip_rate
    node_rates = g.out_rates
    gossip_total = float(node_rates.sum())
    total_rate = lam_e + lam + gossip_total
    p_self = lam_e / total_rate
    p_source = (lam_e + lam) / total_rate

    uniform_senders = bool(np.allclose(node_rates, node_rates[0], rtol=1e-12, atol=0.0))
    sender_prob, sender_alias = (None, None) if uniform_senders else vose_table(node_rates)
    tables = AliasTables(g)
    indptr = tables.indptr.tolist()
    recipients = tables.recipients.tolist()
    accept = tables.prob.tolist()
    alias = tables.alias.tolist()

    horizon, warmup = cfg.horizon, cfg.warmup
    all_nodes = cfg.estimator is Estimator.ALL_NODES
    anchor = cfg.anchor
    check = logger.is_debug_enabled()

    state = SimState(n0=0, versions=[0] * n)
    if cfg.per_node:
        state.node_integrals = [0.0] * n
        state.last_change = [0.0] * n
    versions = state.versions
    node_integrals, last_change = state.node_integrals, state.last_change
    counts = state.event_counts

    n0 = 0
    version_sum = 0
    t = 0.0
    age_integral = 0.0
    source_integral = 0.0
    batch = cfg.batch_size
    scale = 1.0 / total_rate

    def assign(node: int, value: int, now: float) -> None:
        if node_integrals is not None:
            node_integrals[node] += versions[node] * _window(last_change[node], now, warmup, horizon)
            last_change[node] = now
        versions[node] = value

    done = False
    while not done:
        gaps = (rng.standard_exponential(batch) * scale).tolist()
        kinds = rng.random(batch).tolist()
        picks = rng.random(batch).tolist()
        draws = rng.random(batch).tolist()
        for step in range(batch):
            dt = gaps[step]
            end = t + dt
            if end >= horizon:
                end = horizon
                done = True
            span = _window(t, end, warmup, horizon)
            if span > 0.0:
                age = n * n0 - version_sum if all_nodes else n0 - versions[anchor]
                age_integral += age * span
                source_integral += n0 * span
            t = end
            if done:
                break

            kind = kinds[step]
            if kind < p_self:
                counts[0] += 1
                n0 += 1
            elif kind < p_source:
                counts[1] += 1
                target = int(picks[step] * n)
                version_sum += n0 - versions[target]
                assign(target, n0, t)
            else:
                counts[2] += 1
                if uniform_senders:
                    sender = int(picks[step] * n)
                else:
                    scaled = picks[step] * n
                    sender = int(scaled)
                    if scaled - sender >= sender_prob[sender]:
                        sender = int(sender_alias[sender])
                start = indptr[sender]
                size = indptr[sender + 1] - start
                scaled = draws[step] * size
                slot = int(scaled)
                if scaled - slot >= accept[start + slot]:
                    slot = alias[start + slot]
                receiver = recipients[start + slot]
                fresh = versions[sender]
                if fresh > versions[receiver]:
                    version_sum += fresh - versions[receiver]
                    assign(receiver, fresh, t)
                    if check and not 0 <= versions[receiver] <= n0:
                        raise SimulationError("Node version outside [0, N0]",
                                              details={"node": receiver, "version": versions[receiver], "n0": n0})

    window = horizon - warmup
    divisor = window * (n if all_nodes else 1)
    mean_age = age_integral / divisor

    per_node = None
    if node_integrals is not None:
        for node in range(n):
            node_integrals[node] += versions[node] * _window(last_change[node], horizon, warmup, horizon)
        per_node = (source_integral - np.asarray(node_integrals)) / window

    events = sum(counts)
    logger.debug("replication finished", replication=index, events=events, mean_age=mean_age)
    return ReplicationResult(
        index=index,
        mean_age=float(mean_age),
        events=events,
        event_counts=dict(zip(EVENT_TYPES, counts)),
        per_node=per_node,
    )


def _replication_task(args: Tuple[Graph, SimConfig, int, np.random.SeedSequence]) -> ReplicationResult:
    g, cfg, index, seed_seq = args
    with LogContext(replication=index):
        return run_replication(g, cfg, index, seed_seq)


def confidence_halfwidth(samples: Sequence[float], confidence: float) -> float:
    """Normal-approximation half-width over replication means."""
    values = np.asarray(samples, dtype=float)
    if values.shape[0] < 2:
        raise ValidationError("A confidence interval needs at least 2 samples")
    z = stats.norm.ppf(0.5 + confidence / 2.0)
    return float(z * values.std(ddof=1) / math.sqrt(values.shape[0]))


@log_performance("simulator.simulate")
def simulate(g: Graph, cfg: Optional[SimConfig] = None) -> SimulationReport:
    """Estimate the stationary single-node version age by replicated simulation."""
    cfg = (cfg or SimConfig()).resolved(g)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.replications)
    tasks = [(g, cfg, index, child) for index, child in enumerate(children)]

    logger.info("simulation started", family=g.family.value, params=g.label, n=g.n,
                horizon=cfg.horizon, warmup=cfg.warmup, replications=cfg.replications, seed=cfg.seed)
    if cfg.workers > 1 and cfg.replications > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.replications), initializer=init_worker_config,
                                 initargs=(get_config_manager().snapshot(),)) as pool:
            results = list(pool.map(_replication_task, tasks))
    else:
        results = [_replication_task(task) for task in tasks]

    means = [r.mean_age for r in results]
    halfwidth = confidence_halfwidth(means, cfg.confidence) if cfg.confidence else None
    age = AgeResult(
        value=float(np.mean(means)),
        kind=AgeKind.SIMULATED,
        ci_halfwidth=halfwidth,
        metadata={
            "family": g.family.value,
            "params": g.label,
            "n": g.n,
            "seed": cfg.seed,
            "horizon": cfg.horizon,
            "warmup": cfg.warmup,
            "replications": cfg.replications,
            "estimator": cfg.estimator.value,
            "events": sum(r.events for r in results),
        },
    )
    return SimulationReport(age=age, replications=tuple(results), config=cfg)


@dataclass(frozen=True)
class ScalingFit:
    """v ≈ coefficient · n^exponent."""
    exponent: float
    coefficient: float


def fit_scaling(results: Sequence[Tuple[float, float]]) -> ScalingFit:
    """Least-squares fit of log v against log n."""
    points = [(float(n), float(v)) for n, v in results]
    if len(points) < 3:
        raise ValidationError(f"fit_scaling needs at least 3 points, got {len(points)}")
    sizes = np.array([p[0] for p in points])
    ages = np.array([p[1] for p in points])
    if np.unique(sizes).shape[0] != sizes.shape[0]:
        raise ValidationError("fit_scaling needs distinct n values")
    if (sizes <= 0).any() or (ages <= 0).any():
        raise ValidationError("fit_scaling needs positive n and v")
    slope, intercept = np.polyfit(np.log(sizes), np.log(ages), 1)
    return ScalingFit(exponent=float(slope), coefficient=float(math.exp(intercept)))
