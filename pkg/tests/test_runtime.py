from pathlib import Path

import pytest

from card.agents import Query
from card.errors import EmptyResponses, ExecutorFailure, ValidationError
from card.graph import CommTopology
from card.runtime import (CONCAT_SUMMARY, SELECT_LAST, VOTE, aggregate, build_user_prompt, run_rounds)
from card.sim import ResponderSpec, SimTask, sim_executor
from oracles import SpyExecutor

GOLDEN = Path(__file__).parent / "data" / "golden_transcript.tsv"
Q = Query("q", "What is 2 + 2?")


def echo(agent, prompts, upstream):
    return Q.text


def concat(agent, prompts, upstream):
    return f"a{agent}[" + "|".join(m.content for m in upstream) + "]"


def test_echo_on_empty_topology():
    tr = run_rounds(CommTopology.build(3, {}), Q, echo)
    assert tr.final_responses() == [Q.text] * 3


def test_chain_propagates_upstream_content():
    tr = run_rounds(CommTopology.build(2, {(0, 1): 0.9}), Q, concat)
    assert tr.per_round[0][0].content in tr.per_round[0][1].content


def test_user_prompt_contains_query():
    assert Q.text in build_user_prompt(Q, [])


def test_spy_sees_only_same_round_in_neighbors():
    topo = CommTopology.build(4, {(2, 0): 0.9, (0, 1): 0.8, (2, 3): 0.7})
    spy = SpyExecutor()
    run_rounds(topo, Q, spy, k=2)
    assert [a for a, *_ in spy.calls] == list(topo.schedule) * 2
    for agent, prompts, upstream in spy.calls:
        assert {m.sender for m in upstream} == {i for (i, j) in topo.edges if j == agent}
        assert all(m.round == prompts.round for m in upstream)
        assert Q.text in prompts.user


def test_k_rounds_recorded():
    tr = run_rounds(CommTopology.build(2, {}), Q, echo, k=3)
    assert len(tr.per_round) == 3 and all(len(r) == 2 for r in tr.per_round)
    with pytest.raises(ValidationError):
        run_rounds(CommTopology.build(2, {}), Q, echo, k=0)


def test_executor_failure_keeps_partial_transcript():
    def flaky(agent, prompts, upstream):
        if agent == 1:
            raise RuntimeError("boom")
        return "ok"

    with pytest.raises(ExecutorFailure) as info:
        run_rounds(CommTopology.build(2, {(0, 1): 0.9}), Q, flaky)
    err = info.value
    assert (err.agent, err.round) == (1, 1)
    assert err.partial.per_round[0][0].content == "ok"
    assert isinstance(err.__cause__, RuntimeError)


def test_vote_majority_and_ties():
    assert aggregate(["A", "A", "B"], VOTE) == "A"
    assert aggregate(["B", "A"], VOTE) == "A"
    assert aggregate([" a", "A ", "b"], VOTE) == "A"


def test_vote_is_permutation_invariant():
    rs = ["b", "C", " c", "B", "a"]
    assert len({aggregate(rs[k:] + rs[:k], VOTE) for k in range(len(rs))}) == 1


def test_select_last_follows_schedule():
    assert aggregate(["r0", "r1", "r2"], SELECT_LAST, schedule=[2, 0, 1]) == "r1"


def test_concat_summary_is_deterministic():
    out = aggregate(["x", "y"], CONCAT_SUMMARY)
    assert out == aggregate(["x", "y"], CONCAT_SUMMARY) and "x" in out and "y" in out


def test_aggregate_errors():
    with pytest.raises(EmptyResponses):
        aggregate([], VOTE)
    with pytest.raises(ValidationError):
        aggregate(["a"], "median")


def golden_transcript():
    task = SimTask("golden", "Pick the correct statement about logic?", "C", 0.9)
    specs = [ResponderSpec(0.35), ResponderSpec(0.35, 0.2), ResponderSpec(0.85)]
    topo = CommTopology.build(3, {(0, 2): 0.8, (1, 2): 0.7})
    return run_rounds(topo, task.query(), sim_executor(specs, task, seed=11), k=2, aggregation=VOTE)


def test_transcript_matches_golden_file():
    assert golden_transcript().export() == GOLDEN.read_text()


def test_transcript_is_deterministic():
    assert golden_transcript().export() == golden_transcript().export()


def test_export_escapes_control_characters():
    tr = run_rounds(CommTopology.build(1, {}), Q, lambda a, p, u: "tab\there\nnew")
    row = tr.export().splitlines()[1].split("\t")
    assert row[-1] == "tab\\there\\nnew" and len(row) == 5
