import numpy as np
import pytest

from card.agents import AgentProfile, ConditionFeature, ConditionSet, Query
from card.generator import Dims, init_params
from card.graph import AnchorTopology


def priced(model, quality, in_price, out_price):
    return (
        ConditionFeature("model", model),
        ConditionFeature("model_quality", quality),
        ConditionFeature("input_price", in_price, "USD/1M tokens"),
        ConditionFeature("output_price", out_price, "USD/1M tokens"),
    )


@pytest.fixture
def roster3():
    return (
        AgentProfile("planner", "Planner", "gpt-4o-mini"),
        AgentProfile("searcher", "Searcher", "gpt-4o-mini", ("Google",)),
        AgentProfile("critic", "Critic", "gpt-4o"),
    )


@pytest.fixture
def conditions3():
    return ConditionSet(
        {
            "planner": priced("gpt-4o-mini", 0.35, 0.15, 0.60),
            "searcher": priced("gpt-4o-mini", 0.35, 0.15, 0.60) + (ConditionFeature("tool_quality", 0.9),),
            "critic": priced("gpt-4o", 0.85, 2.50, 10.00),
        }
    )


@pytest.fixture
def query():
    return Query("q1", "Which option best answers the physics question?")


@pytest.fixture
def chain3():
    return AnchorTopology("chain", 3)


@pytest.fixture
def params():
    return init_params(Dims(), seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
