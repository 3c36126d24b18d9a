from collections import Counter

import numpy as np
import pytest

from card.errors import ValidationError
from card.graph import CommTopology
from card.manifest import parse_manifest, write_manifest
from card.runtime import Message, RoundPrompts, VOTE
from card.sim import (ALPHABET, P_CAP, ResponderSpec, SimTask, make_config_set, make_task_bank, make_world,
                      responder_specs, scenario_conditions, scenario_manifest, sim_executor, sim_utility)


def prompts(t):
    return RoundPrompts(t, "sys", "user")


def test_capped_skill_frequency():
    ex = sim_executor([ResponderSpec(1.0)], SimTask("t", "q?", "B"), seed=3)
    draws = 100_000
    hits = sum(ex(0, prompts(t), ()) == "B" for t in range(1, draws + 1))
    assert abs(hits / draws - 0.98) < 0.005


def test_zero_skill_answers_uniformly_wrong():
    task = SimTask("t", "q?", "A")
    counts = Counter()
    for seed in range(3000):
        counts[sim_executor([ResponderSpec(0.0)], task, seed)(0, prompts(1), ())] += 1
    assert "A" not in counts and set(counts) == {"B", "C", "D"}
    assert all(abs(c / 3000 - 1 / 3) < 0.04 for c in counts.values())


def test_help_bonus_is_additive_per_distinct_correct_sender():
    spec = ResponderSpec(0.2, help_bonus=0.15)
    assert spec.p_correct(1.0, 2) - spec.p_correct(1.0, 0) == pytest.approx(0.30)
    assert ResponderSpec(0.9, 0.5).p_correct(1.0, 5) == P_CAP
    assert ResponderSpec(0.5).p_correct(0.5, 0) == pytest.approx(0.25)


def test_executor_counts_distinct_correct_senders_only():
    task = SimTask("t", "q?", "C")
    spec = [ResponderSpec(0.0), ResponderSpec(0.0, help_bonus=0.49)]
    dup = (Message(1, 0, "C"), Message(1, 0, " c "), Message(1, 0, "A"))
    two = (Message(1, 0, "C"), Message(1, 2, "c"))
    hit_dup = np.mean([sim_executor(spec, task, s)(1, prompts(1), dup) == "C" for s in range(4000)])
    hit_two = np.mean([sim_executor(spec, task, s)(1, prompts(1), two) == "C" for s in range(4000)])
    assert abs(hit_dup - 0.49) < 0.03 and abs(hit_two - 0.98) < 0.02


def test_responder_spec_validation():
    for kw in (dict(base_quality=1.2), dict(base_quality=0.5, tool_bonus=0.6), dict(base_quality=0.5, help_bonus=-1)):
        with pytest.raises(ValidationError):
            ResponderSpec(**kw)
    with pytest.raises(ValidationError):
        SimTask("t", "q", "E")


@pytest.mark.parametrize("answer, truth, want", [("A", "A", 1.0), (" a ", "A", 1.0), ("Z", "A", 0.0), ("B", "A", 0.0)])
def test_sim_utility(answer, truth, want):
    assert sim_utility(answer, SimTask("t", "q?", truth)) == want


def test_scenario_qualities():
    weak = make_config_set("weak-model")
    strong = make_config_set("strong-model")
    roster = make_world("weak-model").roster
    assert len(weak) == 64
    assert all(c.value(a.id, "model_quality") == 0.35 for _, c in weak for a in roster)
    assert all(c.value(a.id, "model_quality") == 0.85 for _, c in strong for a in roster)
    mixed = {c.value(a.id, "model_quality") for _, c in make_config_set("mixed") for a in roster}
    assert len(mixed) >= 2


def test_unknown_scenario():
    with pytest.raises(ValidationError):
        make_config_set("medium-model")
    with pytest.raises(ValidationError):
        scenario_conditions("mixed")


def test_world_is_reproducible():
    assert make_task_bank(seed=4) == make_task_bank(seed=4)
    assert make_task_bank(seed=4) != make_task_bank(seed=5)
    assert all(t.answer in ALPHABET for t in make_task_bank())
    a, b = make_world("mixed", 1), make_world("mixed", 1)
    topo = CommTopology.build(5, {(0, 4): 0.9})
    env_a, env_b = a.environment(), b.environment()
    for q, c in a.pairs[:8]:
        assert env_a.run(q, c, topo, 9).export() == env_b.run(q, c, topo, 9).export()


def test_tool_bonus_needs_tools_and_quality():
    w = make_world("strong-tool")
    specs = responder_specs(w.roster, scenario_conditions("strong-tool"))
    bonus = {a.id: s.tool_bonus for a, s in zip(w.roster, specs)}
    assert bonus["searcher"] > 0 and all(v == 0 for k, v in bonus.items() if k != "searcher")
    weak_tool = responder_specs(w.roster, scenario_conditions("weak-tool"))
    assert all(s.tool_bonus == 0 for s in weak_tool)


@pytest.mark.parametrize("aggregation", ["select-last", VOTE])
def test_collaboration_value_on_weak_models(aggregation):
    w = make_world("weak-model", size=64)
    env = w.environment(aggregation=aggregation)
    chain = CommTopology.build(5, {(i, i + 1): 0.9 for i in range(4)})
    full = CommTopology.build(5, {(i, j): 0.9 for i in range(5) for j in range(i + 1, 5)})
    empty = CommTopology.build(5, {})
    episodes = 10_000
    scores = {}
    for name, topo in (("empty", empty), ("chain", chain), ("full", full)):
        total = 0.0
        for k in range(episodes):
            q, c = w.pairs[k % len(w.pairs)]
            total += env.utility(q, c, topo, seed=k)
        scores[name] = total / episodes
    assert scores["full"] >= scores["empty"] + 0.02
    if aggregation == "select-last":
        assert scores["chain"] >= scores["empty"] + 0.02


def test_scenario_manifest_round_trip():
    m = scenario_manifest("weak-model")
    assert parse_manifest(write_manifest(m)) == m
    assert m.cost_model.tokens_per_message > 512
