"""Agents, runtime conditions and queries, plus their text templates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence, Union

from .errors import UnknownAgent, ValidationError

Scalar = float
FeatureValue = Union[str, float]


@dataclass(frozen=True)
class AgentProfile:
    id: str
    role: str
    base_model: str
    plugins: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValidationError("agent id must be nonempty")
        if not self.role:
            raise ValidationError(f"agent {self.id!r}: role must be nonempty")
        object.__setattr__(self, "plugins", tuple(self.plugins))

    @property
    def has_tools(self) -> bool:
        return bool(self.plugins)


@dataclass(frozen=True)
class ConditionFeature:
    """One runtime feature. Strings are categorical, numbers are scalars."""

    name: str
    value: FeatureValue
    unit: str = ""

    def __post_init__(self):
        if not self.name:
            raise ValidationError("feature name must be nonempty")
        if isinstance(self.value, bool) or not isinstance(self.value, (str, int, float)):
            raise ValidationError(f"feature {self.name!r}: unsupported value {self.value!r}")
        if not isinstance(self.value, str):
            v = float(self.value)
            if not math.isfinite(v):
                raise ValidationError(f"feature {self.name!r}: value must be finite")
            object.__setattr__(self, "value", v)

    @property
    def is_scalar(self) -> bool:
        return not isinstance(self.value, str)

    def render(self) -> str:
        if self.is_scalar:
            return f"{self.value:.4f}"
        return self.value


def _as_features(items: Iterable[ConditionFeature], owner: str) -> tuple[ConditionFeature, ...]:
    out = tuple(items)
    names = [f.name for f in out]
    if len(set(names)) != len(names):
        raise ValidationError(f"{owner}: duplicate feature names {sorted(names)}")
    return out


@dataclass(frozen=True)
class ConditionSet:
    per_agent: Mapping[str, tuple[ConditionFeature, ...]] = field(default_factory=dict)
    global_features: tuple[ConditionFeature, ...] = ()

    def __post_init__(self):
        frozen = {aid: _as_features(fs, f"agent {aid!r}") for aid, fs in self.per_agent.items()}
        object.__setattr__(self, "per_agent", MappingProxyType(frozen))
        object.__setattr__(self, "global_features", _as_features(self.global_features, "global"))

    def merged(self, agent_id: str) -> dict[str, ConditionFeature]:
        """Global features overridden by the agent's own, keyed by name."""
        out = {f.name: f for f in self.global_features}
        for f in self.per_agent.get(agent_id, ()):
            out[f.name] = f
        return out

    def value(self, agent_id: str, name: str, default=None):
        f = self.merged(agent_id).get(name)
        return default if f is None else f.value

    def validate(self, roster: Sequence[AgentProfile]) -> None:
        ids = {p.id for p in roster}
        for aid in self.per_agent:
            if aid not in ids:
                raise UnknownAgent(f"conditions name agent {aid!r} which is not in the roster")

    def with_feature(self, agent_id: str | None, name: str, value: FeatureValue, unit: str = "") -> "ConditionSet":
        """Copy with one feature set; ``agent_id=None`` targets the global list."""
        feat = ConditionFeature(name, value, unit)
        if agent_id is None:
            kept = [f for f in self.global_features if f.name != name]
            return replace(self, global_features=tuple(kept) + (feat,))
        per = dict(self.per_agent)
        kept = [f for f in per.get(agent_id, ()) if f.name != name]
        per[agent_id] = tuple(kept) + (feat,)
        return ConditionSet(per, self.global_features)


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    ground_truth: str | None = None

    def __post_init__(self):
        if not self.text:
            raise ValidationError(f"query {self.id!r}: text must be nonempty")


def validate_roster(roster: Sequence[AgentProfile]) -> None:
    if not roster:
        raise ValidationError("roster must be nonempty")
    seen = set()
    for p in roster:
        if p.id in seen:
            raise ValidationError(f"duplicate agent id {p.id!r}")
        seen.add(p.id)


def verbalize_profile(profile: AgentProfile) -> str:
    if profile.plugins:
        tools = "has access to the tools: " + ", ".join(profile.plugins)
    else:
        tools = "has no tools"
    return (
        f"Agent role: {profile.role}. "
        f"Base model: {profile.base_model}. "
        f"The agent {tools}."
    )


def verbalize_condition(agent_id: str, conditions: ConditionSet) -> str:
    if agent_id not in conditions.per_agent and not conditions.global_features:
        raise UnknownAgent(f"no conditions for agent {agent_id!r} and no global conditions")
    merged = conditions.merged(agent_id)
    if not merged:
        return "Runtime conditions: none."
    parts = [f"{name} is {merged[name].render()}" for name in sorted(merged)]
    return "Runtime conditions: " + "; ".join(parts) + "."
