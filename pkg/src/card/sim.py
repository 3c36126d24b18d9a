"""A seeded multiple-choice world for training without hosted models.

Each simulated agent answers correctly with a probability built from its
model quality, an optional tool bonus, and a bonus per correct upstream
message; otherwise it picks a wrong option uniformly. All draws are hashes of
(seed, task, agent, round), so every rollout is reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .agents import AgentProfile, ConditionFeature, ConditionSet, Query
from .errors import ValidationError
from .graph import CommTopology
from .manifest import Manifest
from .runtime import SELECT_LAST, Message, RoundPrompts, aggregate, normalize_answer, run_rounds
from .training import CostModel

ALPHABET = ("A", "B", "C", "D")
P_CAP = 0.98
HELP_BONUS = 0.15
TOOL_BONUS = 0.2
TOOL_QUALITY_GATE = 0.5

# Long multi-turn messages, so the price gap between model tiers matters.
SIM_TOKENS_PER_MESSAGE = 12_000.0

SCENARIOS = ("weak-model", "strong-model", "weak-tool", "strong-tool", "mixed")


@dataclass(frozen=True)
class ResponderSpec:
    base_quality: float
    tool_bonus: float = 0.0
    help_bonus: float = HELP_BONUS

    def __post_init__(self):
        if not 0.0 <= self.base_quality <= 1.0:
            raise ValidationError("base_quality must lie in [0, 1]")
        if not 0.0 <= self.tool_bonus <= 0.5:
            raise ValidationError("tool_bonus must lie in [0, 0.5]")
        if self.help_bonus < 0.0:
            raise ValidationError("help_bonus must be non-negative")

    def p_correct(self, difficulty: float, correct_upstream: int) -> float:
        p = difficulty * (self.base_quality + self.tool_bonus + self.help_bonus * correct_upstream)
        return min(max(p, 0.0), P_CAP)


@dataclass(frozen=True)
class SimTask:
    id: str
    text: str
    answer: str
    difficulty: float = 1.0

    def __post_init__(self):
        if self.answer not in ALPHABET:
            raise ValidationError(f"answer {self.answer!r} not in {ALPHABET}")
        if not 0.0 <= self.difficulty <= 1.0:
            raise ValidationError("difficulty must lie in [0, 1]")

    def query(self) -> Query:
        return Query(self.id, self.text, self.answer)


def _uniforms(seed: int, task_id: str, agent: int, round: int) -> tuple[float, float]:
    h = hashlib.blake2b(f"{seed}|{task_id}|{agent}|{round}".encode(), digest_size=16).digest()
    return int.from_bytes(h[:8], "little") / 2.0**64, int.from_bytes(h[8:], "little") / 2.0**64


def sim_executor(specs: Sequence[ResponderSpec], task: SimTask, seed: int):
    truth = normalize_answer(task.answer)
    wrong = [a for a in ALPHABET if a != task.answer]

    def execute(agent: int, prompts: RoundPrompts, upstream: Sequence[Message]) -> str:
        correct = len({m.sender for m in upstream if normalize_answer(m.content) == truth})
        p = specs[agent].p_correct(task.difficulty, correct)
        u_skill, u_pick = _uniforms(seed, task.id, agent, prompts.round)
        if u_skill < p:
            return task.answer
        return wrong[min(int(u_pick * len(wrong)), len(wrong) - 1)]

    return execute


def sim_utility(answer: str, task: SimTask) -> float:
    return 1.0 if normalize_answer(answer) == normalize_answer(task.answer) else 0.0


def responder_specs(roster: Sequence[AgentProfile], conditions: ConditionSet,
                    tool_bonus: float = TOOL_BONUS, help_bonus: float = HELP_BONUS) -> list[ResponderSpec]:
    """Read ``model_quality`` and ``tool_quality`` features into responder specs."""
    specs = []
    for agent in roster:
        quality = conditions.value(agent.id, "model_quality")
        if not isinstance(quality, float):
            raise ValidationError(f"agent {agent.id!r} needs a scalar model_quality feature")
        tool_q = conditions.value(agent.id, "tool_quality", 0.0)
        bonus = tool_bonus if agent.has_tools and isinstance(tool_q, float) and tool_q > TOOL_QUALITY_GATE else 0.0
        specs.append(ResponderSpec(min(max(quality, 0.0), 1.0), bonus, help_bonus))
    return specs


class SimEnvironment:
    """Utility provider backed by :func:`sim_executor`.

    The default reads the answer of the last scheduled agent, so relaying a
    correct answer downstream pays off directly.
    """

    def __init__(self, roster: Sequence[AgentProfile], tasks: Sequence[SimTask],
                 aggregation: str = SELECT_LAST, help_bonus: float = HELP_BONUS, tool_bonus: float = TOOL_BONUS):
        self.roster = list(roster)
        self.tasks = {t.id: t for t in tasks}
        self.aggregation = aggregation
        self.help_bonus = help_bonus
        self.tool_bonus = tool_bonus

    def task_for(self, query: Query) -> SimTask:
        try:
            return self.tasks[query.id]
        except KeyError:
            raise ValidationError(f"query {query.id!r} is not in the simulated task bank") from None

    def run(self, query: Query, conditions: ConditionSet, topology: CommTopology, seed: int, k_rounds: int = 1):
        task = self.task_for(query)
        specs = responder_specs(self.roster, conditions, self.tool_bonus, self.help_bonus)
        return run_rounds(topology, query, sim_executor(specs, task, seed), k_rounds,
                          aggregation=self.aggregation)

    def utility(self, query: Query, conditions: ConditionSet, topology: CommTopology,
                seed: int, k_rounds: int = 1) -> float:
        transcript = self.run(query, conditions, topology, seed, k_rounds)
        return sim_utility(transcript.final_answer, self.task_for(query))


# --- scenario generation ----------------------------------------------------------

ROSTER = (
    AgentProfile("expert", "Knowledgeable Expert", "llm-pool"),
    AgentProfile("searcher", "Searcher", "llm-pool", ("web-search",)),
    AgentProfile("psychologist", "Psychologist", "llm-pool"),
    AgentProfile("mathematician", "Mathematician", "llm-pool"),
    AgentProfile("critic", "Critic", "llm-pool"),
)

# model name, quality, input price, output price (per million tokens)
_MODELS = {
    "weak": ("gpt-4o-mini", 0.35, 0.15, 0.60),
    "medium": ("llama-3-70b", 0.55, 0.59, 0.79),
    "strong": ("gpt-4o", 0.85, 2.50, 10.00),
}
# engine name, tool quality
_TOOLS = {"weak": ("Wiki", 0.30), "strong": ("Google", 0.90)}

_REGIMES = {
    "weak-model": ("weak", "strong"),
    "strong-model": ("strong", "strong"),
    "weak-tool": ("medium", "weak"),
    "strong-tool": ("medium", "strong"),
}

_SUBJECTS = (
    "algebra", "anatomy", "astronomy", "ethics", "economics", "genetics", "geography",
    "law", "logic", "nutrition", "philosophy", "physics", "psychology", "statistics",
    "virology", "world history",
)
_FORMS = (
    "Which option best answers the {s} question",
    "Pick the correct statement about {s}",
    "Select the most accurate claim in {s}",
    "Identify the right conclusion for this {s} item",
)


def regime_conditions(model: str, tool: str) -> ConditionSet:
    name, quality, in_price, out_price = _MODELS[model]
    engine, tool_q = _TOOLS[tool]
    shared = (
        ConditionFeature("model", name),
        ConditionFeature("model_quality", quality),
        ConditionFeature("input_price", in_price, "USD/1M tokens"),
        ConditionFeature("output_price", out_price, "USD/1M tokens"),
    )
    searcher = (
        ConditionFeature("search_engine", engine),
        ConditionFeature("tool_quality", tool_q),
    )
    return ConditionSet({"searcher": searcher}, shared)


def scenario_conditions(scenario: str) -> ConditionSet:
    if scenario not in _REGIMES:
        raise ValidationError(f"{scenario!r} is not a single-regime scenario; choose from {tuple(_REGIMES)}")
    return regime_conditions(*_REGIMES[scenario])


def make_task_bank(size: int = 64, seed: int = 0) -> list[SimTask]:
    rng = np.random.default_rng([seed, 64])
    tasks = []
    for k in range(size):
        subject = _SUBJECTS[rng.integers(len(_SUBJECTS))]
        form = _FORMS[rng.integers(len(_FORMS))]
        text = f"Q{k:03d}. {form.format(s=subject)}? Answer with A, B, C or D."
        answer = ALPHABET[rng.integers(len(ALPHABET))]
        difficulty = float(np.round(rng.uniform(0.6, 1.0), 4))
        tasks.append(SimTask(f"task-{k:03d}", text, answer, difficulty))
    return tasks


def make_config_set(scenario: str, seed: int = 0, size: int = 64) -> list[tuple[Query, ConditionSet]]:
    """Pair the task bank with condition sets realizing ``scenario``.

    ``mixed`` cycles through the four single regimes task by task.
    """
    if scenario not in SCENARIOS:
        raise ValidationError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    tasks = make_task_bank(size, seed)
    regimes = list(_REGIMES) if scenario == "mixed" else [scenario]
    return [(t.query(), scenario_conditions(regimes[k % len(regimes)])) for k, t in enumerate(tasks)]


@dataclass(frozen=True)
class SimWorld:
    roster: tuple[AgentProfile, ...]
    tasks: tuple[SimTask, ...]
    pairs: tuple[tuple[Query, ConditionSet], ...]
    cost_model: CostModel

    def environment(self, **kwargs) -> SimEnvironment:
        return SimEnvironment(self.roster, self.tasks, **kwargs)


def make_world(scenario: str, seed: int = 0, size: int = 64) -> SimWorld:
    return SimWorld(
        ROSTER,
        tuple(make_task_bank(size, seed)),
        tuple(make_config_set(scenario, seed, size)),
        CostModel(tokens_per_message=SIM_TOKENS_PER_MESSAGE),
    )


def scenario_manifest(scenario: str) -> Manifest:
    """A single-regime scenario as a roster/condition manifest."""
    return Manifest(ROSTER, scenario_conditions(scenario), CostModel(tokens_per_message=SIM_TOKENS_PER_MESSAGE))
