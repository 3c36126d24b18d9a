import pytest

from card.agents import (AgentProfile, ConditionFeature, ConditionSet, Query, validate_roster,
                         verbalize_condition, verbalize_profile)
from card.errors import UnknownAgent, ValidationError


def test_profile_without_tools_says_so():
    text = verbalize_profile(AgentProfile("c", "Critic", "m"))
    assert "Critic" in text and "m" in text
    assert "no tools" in text


def test_profile_verbalization_is_deterministic():
    p = AgentProfile("s", "Searcher", "gpt-4o-mini", ("Google",))
    assert verbalize_profile(p) == verbalize_profile(AgentProfile("s", "Searcher", "gpt-4o-mini", ["Google"]))


def test_profile_mentions_role_model_and_plugins():
    text = verbalize_profile(AgentProfile("s", "Searcher", "gpt-4o-mini", ("Google",)))
    for token in ("Searcher", "gpt-4o-mini", "Google"):
        assert token in text
    assert text.index("Searcher") < text.index("gpt-4o-mini") < text.index("Google")


def test_condition_from_single_global_feature():
    cs = ConditionSet({"a": ()}, (ConditionFeature("budget", 3.0),))
    assert verbalize_condition("a", cs) == "Runtime conditions: budget is 3.0000."


def test_per_agent_feature_overrides_global():
    cs = ConditionSet({"a": (ConditionFeature("tool_quality", 0.3),)}, (ConditionFeature("tool_quality", 0.9),))
    text = verbalize_condition("a", cs)
    assert "0.3000" in text and "0.9000" not in text


def test_features_render_in_name_order():
    cs = ConditionSet({"a": (ConditionFeature("b", 1.0), ConditionFeature("a", 2.0))})
    text = verbalize_condition("a", cs)
    assert text.index("a is 2.0000") < text.index("b is 1.0000")


def test_categorical_values_render_verbatim():
    cs = ConditionSet({"a": (ConditionFeature("engine", "Google Search"),)})
    assert "engine is Google Search" in verbalize_condition("a", cs)


def test_unknown_agent_without_globals():
    with pytest.raises(UnknownAgent):
        verbalize_condition("ghost", ConditionSet({"a": (ConditionFeature("x", 1.0),)}))


def test_agent_missing_but_globals_present_uses_globals():
    cs = ConditionSet({}, (ConditionFeature("x", 1.0),))
    assert verbalize_condition("anyone", cs) == "Runtime conditions: x is 1.0000."


def test_changing_a_value_changes_text():
    base = ConditionSet({"a": (ConditionFeature("q", 0.5),)})
    assert verbalize_condition("a", base) != verbalize_condition("a", base.with_feature("a", "q", 0.5001))


@pytest.mark.parametrize("bad", [float("nan"), float("inf")])
def test_scalar_features_must_be_finite(bad):
    with pytest.raises(ValidationError):
        ConditionFeature("x", bad)


def test_feature_name_nonempty():
    with pytest.raises(ValidationError):
        ConditionFeature("", 1.0)


def test_duplicate_feature_names_rejected():
    with pytest.raises(ValidationError):
        ConditionSet({"a": (ConditionFeature("x", 1.0), ConditionFeature("x", 2.0))})


def test_conditions_must_name_roster_agents():
    roster = [AgentProfile("a", "A", "m")]
    with pytest.raises(UnknownAgent):
        ConditionSet({"b": ()}).validate(roster)


def test_roster_ids_unique_and_nonempty():
    with pytest.raises(ValidationError):
        validate_roster([AgentProfile("a", "A", "m"), AgentProfile("a", "B", "m")])
    with pytest.raises(ValidationError):
        validate_roster([])
    with pytest.raises(ValidationError):
        AgentProfile("", "A", "m")
    with pytest.raises(ValidationError):
        AgentProfile("a", "", "m")


def test_query_text_required():
    with pytest.raises(ValidationError):
        Query("q", "")


def test_with_feature_global_replaces_by_name():
    cs = ConditionSet({}, (ConditionFeature("x", 1.0),)).with_feature(None, "x", 2.0)
    assert cs.value("a", "x") == 2.0
    assert len(cs.global_features) == 1


def test_condition_set_is_immutable():
    cs = ConditionSet({"a": (ConditionFeature("x", 1.0),)})
    with pytest.raises(TypeError):
        cs.per_agent["b"] = ()
