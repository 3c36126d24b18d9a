"""Environment-aware training of the generator.

The loss per (query, conditions) pair is ``-u + beta * soft_cost(S)``. The
utility goes through agent execution and is not differentiable, so its
gradient is estimated with the likelihood ratio over independently sampled
Bernoulli edges, with a moving-average baseline. The cost term is analytic.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Mapping, Protocol, Sequence, TextIO, Union

import numpy as np

from .agents import AgentProfile, ConditionSet, Query
from .embedding import EmbedderSpec
from .errors import MissingPriceFeature, NonFiniteGradient, ShapeMismatch, ValidationError
from .generator import GeneratorParams, backward, featurize, forward, generate
from .graph import AnchorTopology, CommTopology, Edge, break_cycles, check_probability_matrix

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-6
METRIC_COLUMNS = ("step", "loss", "mean_utility", "soft_cost", "baseline")


@dataclass(frozen=True)
class CostModel:
    """Token-price model; prices live in the condition features."""

    tokens_per_message: float = 512.0
    in_price_feature: str = "input_price"
    out_price_feature: str = "output_price"

    def __post_init__(self):
        if not self.tokens_per_message > 0:
            raise ValidationError("tokens_per_message must be positive")


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.2
    lr: float = 0.3
    samples_per_step: int = 4
    baseline_decay: float = 0.9
    steps: int = 300
    tau: float = 0.5
    k_rounds: int = 1
    seed: int = 0
    batch_size: int = 4
    exhaustive: bool = False

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError("beta must be non-negative")
        if not self.lr > 0:
            raise ValidationError("learning rate must be positive")
        if self.samples_per_step < 1 or self.batch_size < 1 or self.k_rounds < 1:
            raise ValidationError("samples_per_step, batch_size and k_rounds must be >= 1")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValidationError("baseline_decay must lie in [0, 1)")
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if not 0.0 < self.tau < 1.0:
            raise ValidationError("tau must lie in (0, 1)")


@dataclass(frozen=True)
class EpisodeBatch:
    pairs: tuple[tuple[Query, ConditionSet], ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if not self.pairs:
            raise ValidationError("episode batch is empty")


class Environment(Protocol):
    """Scores one execution of a topology; ``seed`` fixes all randomness."""

    def utility(self, query: Query, conditions: ConditionSet, topology: CommTopology,
                seed: int, k_rounds: int = 1) -> float: ...


# --- cost ---------------------------------------------------------------------

def edge_cost_matrix(roster: Sequence[AgentProfile], conditions: ConditionSet, cm: CostModel = CostModel()) -> np.ndarray:
    n = len(roster)
    out_p, in_p = np.zeros(n), np.zeros(n)
    for k, agent in enumerate(roster):
        merged = conditions.merged(agent.id)
        for arr, name in ((in_p, cm.in_price_feature), (out_p, cm.out_price_feature)):
            feat = merged.get(name)
            if feat is None or not feat.is_scalar:
                raise MissingPriceFeature(f"agent {agent.id!r} has no scalar {name!r} feature")
            if feat.value < 0:
                raise ValidationError(f"agent {agent.id!r}: negative {name}")
            arr[k] = feat.value
    cost = (out_p[:, None] + in_p[None, :]) * cm.tokens_per_message / 1e6
    np.fill_diagonal(cost, 0.0)
    return cost


def soft_cost(s, cost) -> float:
    s, cost = np.asarray(s, float), np.asarray(cost, float)
    if s.shape != cost.shape:
        raise ShapeMismatch(f"matrix {s.shape} vs cost {cost.shape}")
    mask = ~np.eye(s.shape[0], dtype=bool)
    return float(np.sum(cost[mask] * s[mask]))


def soft_cost_grad(s, cost) -> np.ndarray:
    g = np.array(cost, dtype=float)
    np.fill_diagonal(g, 0.0)
    return g


# --- edge sampling ----------------------------------------------------------------

@dataclass(frozen=True)
class SampledGraph:
    outcome: np.ndarray  # boolean n x n, diagonal False
    logprob: float
    edges: dict[Edge, float]


def outcome_logprob(s, outcome) -> float:
    s = np.asarray(s, float)
    mask = ~np.eye(s.shape[0], dtype=bool)
    p = np.where(outcome, s, 1.0 - s)[mask]
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(p)))


def outcome_probability(s, outcome) -> float:
    s = np.asarray(s, float)
    mask = ~np.eye(s.shape[0], dtype=bool)
    return float(np.prod(np.where(outcome, s, 1.0 - s)[mask]))


def _edges_of(s, outcome) -> dict[Edge, float]:
    rows, cols = np.nonzero(outcome)
    return {(int(i), int(j)): float(s[i, j]) for i, j in zip(rows, cols)}


def sample_graph(s, seed) -> SampledGraph:
    """Include each off-diagonal edge independently with probability ``s[i, j]``."""
    s = check_probability_matrix(s)
    u = np.random.default_rng(seed).random(s.shape)
    outcome = u < s
    np.fill_diagonal(outcome, False)
    return SampledGraph(outcome, outcome_logprob(s, outcome), _edges_of(s, outcome))


def enumerate_outcomes(n: int) -> Iterator[np.ndarray]:
    """Every off-diagonal edge pattern on ``n`` nodes (``2**(n*(n-1))`` of them)."""
    slots = [(i, j) for i in range(n) for j in range(n) if i != j]
    for bits in itertools.product((False, True), repeat=len(slots)):
        e = np.zeros((n, n), dtype=bool)
        for (i, j), b in zip(slots, bits):
            e[i, j] = b
        yield e


def logprob_grad(s, outcome) -> np.ndarray:
    """d log P(outcome) / dS, with probabilities clamped away from 0 and 1."""
    sc = np.clip(np.asarray(s, float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    g = (outcome.astype(float) - sc) / (sc * (1.0 - sc))
    np.fill_diagonal(g, 0.0)
    return g


def score_function_grad(s, outcomes: Sequence[np.ndarray], utilities: Sequence[float],
                        weights: Sequence[float], baseline: float = 0.0) -> np.ndarray:
    """Estimate of d E[u] / dS from weighted outcomes; ``weights`` sum to one."""
    g = np.zeros_like(np.asarray(s, float))
    for e, u, w in zip(outcomes, utilities, weights):
        g += w * (u - baseline) * logprob_grad(s, e)
    return g


# --- training ----------------------------------------------------------------------

@dataclass(frozen=True)
class StepMetrics:
    step: int
    loss: float
    mean_utility: float
    soft_cost: float
    baseline: float
    grad_norm: float = 0.0
    baselines: Mapping[str, float] = field(default_factory=dict, repr=False, compare=False)

    def row(self) -> str:
        return "\t".join([str(self.step)] + [repr(float(getattr(self, c))) for c in METRIC_COLUMNS[1:]])


def _rollout_seed(cfg: TrainConfig, step: int, pair: int, sample: int) -> list[int]:
    return [cfg.seed, step, pair, sample]


def condition_key(roster: Sequence[AgentProfile], conditions: ConditionSet) -> str:
    """Canonical text of the merged conditions, used to key baselines."""
    parts = []
    for agent in roster:
        merged = conditions.merged(agent.id)
        parts.append(agent.id + ":" + ",".join(f"{k}={merged[k].render()}" for k in sorted(merged)))
    return "|".join(parts)


Baseline = Union[float, Mapping[str, float], None]


def train_step(
    params: GeneratorParams,
    batch: EpisodeBatch,
    env: Environment,
    cfg: TrainConfig,
    cm: CostModel,
    roster: Sequence[AgentProfile],
    anchor: AnchorTopology,
    baseline: Baseline = None,
    step: int = 0,
    embedder: EmbedderSpec | None = None,
) -> tuple[GeneratorParams, StepMetrics]:
    """One gradient-descent update on a batch of (query, conditions) pairs.

    Baselines are moving averages kept per condition set (see
    :func:`condition_key`); a float applies one value to every pair. A
    condition set seen for the first time starts at its own mean utility in
    this step. ``cfg.exhaustive`` replaces the ``M`` samples by every outcome
    weighted by its probability (tiny graphs only).
    """
    embedder = embedder or EmbedderSpec(dimension=params.dims.d_in)
    n = len(roster)
    episodes = []
    for b, (query, conditions) in enumerate(batch.pairs):
        fwd = forward(params, *featurize(roster, conditions, query, embedder), anchor)
        s = fwd.s
        cost = edge_cost_matrix(roster, conditions, cm)
        if cfg.exhaustive:
            outcomes = list(enumerate_outcomes(n))
            weights = [outcome_probability(s, e) for e in outcomes]
        else:
            outcomes = [sample_graph(s, _rollout_seed(cfg, step, b, m) + [0]).outcome
                        for m in range(cfg.samples_per_step)]
            weights = [1.0 / cfg.samples_per_step] * cfg.samples_per_step
        utils = []
        for m, e in enumerate(outcomes):
            topo = CommTopology.build(n, break_cycles(_edges_of(s, e)))
            seed = int(np.random.SeedSequence(_rollout_seed(cfg, step, b, m) + [1]).generate_state(1)[0])
            utils.append(float(env.utility(query, conditions, topo, seed, cfg.k_rounds)))
        key = condition_key(roster, conditions)
        episodes.append((key, fwd, cost, outcomes, weights, utils, float(np.dot(weights, utils))))

    by_key: dict[str, list[float]] = {}
    for key, *_, mean_u in episodes:
        by_key.setdefault(key, []).append(mean_u)
    if baseline is None or isinstance(baseline, Mapping):
        known = dict(baseline or {})
        current = {k: known.get(k, float(np.mean(v))) for k, v in by_key.items()}
    else:
        known, current = {}, {k: float(baseline) for k in by_key}

    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    costs = []
    for key, fwd, cost, outcomes, weights, utils, _ in episodes:
        g_s = -score_function_grad(fwd.s, outcomes, utils, weights, current[key])
        g_s += cfg.beta * soft_cost_grad(fwd.s, cost)
        costs.append(soft_cost(fwd.s, cost))
        for k, v in backward(params, fwd, g_s).items():
            grads[k] += v / len(episodes)

    sq = sum(float(np.sum(v * v)) for v in grads.values())
    batch_utility = float(np.mean([e[-1] for e in episodes]))
    if not np.isfinite(sq):
        bad = sorted(k for k, v in grads.items() if not np.all(np.isfinite(v)))
        raise NonFiniteGradient(f"non-finite gradient at step {step} in {bad}",
                                {"step": step, "tensors": bad, "baselines": current,
                                 "utilities": [e[-1] for e in episodes]})
    new_params = params.descend(grads, cfg.lr)
    d = cfg.baseline_decay
    known.update({k: d * current[k] + (1.0 - d) * float(np.mean(v)) for k, v in by_key.items()})
    mean_cost = float(np.mean(costs))
    metrics = StepMetrics(step, -batch_utility + cfg.beta * mean_cost, batch_utility, mean_cost,
                          float(np.mean(list(known.values()))), float(np.sqrt(sq)), known)
    return new_params, metrics


@dataclass
class TrainResult:
    params: GeneratorParams
    history: list[StepMetrics] = field(default_factory=list)


def _batches(pairs: Sequence, cfg: TrainConfig) -> Iterator[EpisodeBatch]:
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    order: list[int] = []
    while True:
        if len(order) < cfg.batch_size:
            order += list(rng.permutation(len(pairs)))
        chunk, order = order[:cfg.batch_size], order[cfg.batch_size:]
        yield EpisodeBatch(tuple(pairs[i] for i in chunk))


def train(
    params: GeneratorParams,
    pairs: Sequence[tuple[Query, ConditionSet]],
    env: Environment,
    cfg: TrainConfig,
    cm: CostModel,
    roster: Sequence[AgentProfile],
    anchor: AnchorTopology,
    embedder: EmbedderSpec | None = None,
    metrics_out: TextIO | None = None,
    checkpoint_every: int = 0,
    on_checkpoint: Callable[[int, GeneratorParams], None] | None = None,
) -> TrainResult:
    """Run ``cfg.steps`` updates over reshuffled pairs; deterministic in ``cfg.seed``."""
    if not pairs:
        raise ValidationError("training needs at least one (query, conditions) pair")
    result = TrainResult(params)
    if metrics_out is not None:
        metrics_out.write("\t".join(METRIC_COLUMNS) + "\n")
    baseline = None
    batches = _batches(pairs, cfg)
    for step in range(cfg.steps):
        result.params, m = train_step(result.params, next(batches), env, cfg, cm, roster, anchor,
                                      baseline, step, embedder)
        baseline = m.baselines
        result.history.append(m)
        if metrics_out is not None:
            metrics_out.write(m.row() + "\n")
        if checkpoint_every and on_checkpoint and (step + 1) % checkpoint_every == 0:
            on_checkpoint(step + 1, result.params)
        if step % 50 == 0:
            log.debug("step %d %s", step, asdict(m))
    return result


def evaluate(
    params: GeneratorParams,
    pairs: Sequence[tuple[Query, ConditionSet]],
    env: Environment,
    roster: Sequence[AgentProfile],
    anchor: AnchorTopology,
    tau: float = 0.5,
    repeats: int = 8,
    k_rounds: int = 1,
    seed: int = 12345,
    embedder: EmbedderSpec | None = None,
) -> float:
    """Mean utility of the deployed (thresholded) topology over ``pairs``."""
    total = 0.0
    for p, (query, conditions) in enumerate(pairs):
        _, topo = generate(roster, conditions, query, anchor, params, tau, embedder)
        for r in range(repeats):
            total += env.utility(query, conditions, topo, seed + 7919 * p + r, k_rounds)
    return total / (len(pairs) * repeats)
