"""Roster and condition manifests.

A manifest is plain text with three sections. Inside a section, a line at
column 1 opens an entry and indented ``key = value`` lines fill it::

    # comments run to end of line
    [agents]
    searcher
      role = Searcher
      base_model = gpt-4o-mini
      plugins = web-search, calculator

    [conditions]
    *                       # applies to every agent
      input_price = 0.15 USD/1M tokens
    searcher
      search_engine = Google
      tool_quality = 0.9

    [cost]
    tokens_per_message = 512

A condition value whose first word is a number becomes a scalar and the rest
of the line its unit; anything else (or a double-quoted value) is categorical.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .agents import AgentProfile, ConditionFeature, ConditionSet, validate_roster
from .errors import ManifestError, ValidationError
from .training import CostModel

GLOBAL = "*"
SECTIONS = ("agents", "conditions", "cost")
AGENT_KEYS = ("role", "base_model", "plugins")
COST_KEYS = {"tokens_per_message": "tokens_per_message",
             "input_price_feature": "in_price_feature",
             "output_price_feature": "out_price_feature"}

_SECTION = re.compile(r"^\[([^\]]*)\]\s*$")
_ENTRY = re.compile(r"^(\S+)\s*$")
_PAIR = re.compile(r"^(\s+)([A-Za-z_][\w.-]*)\s*=\s*(.*?)\s*$")
_NUM = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)(?:\s+(.*))?$")


@dataclass(frozen=True)
class Manifest:
    roster: tuple[AgentProfile, ...]
    conditions: ConditionSet = field(default_factory=ConditionSet)
    cost_model: CostModel = field(default_factory=CostModel)


def _strip_comment(line: str) -> str:
    out, quoted = [], False
    for ch in line:
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out).rstrip()


def parse_feature_value(raw: str) -> tuple[str | float, str]:
    if len(raw) >= 2 and raw[0] == raw[-1] == '"':
        return raw[1:-1], ""
    m = _NUM.match(raw)
    if m:
        v = float(m.group(1))
        if math.isfinite(v):
            return v, (m.group(2) or "").strip()
    return raw, ""


def parse_manifest(text: str, path: str | None = None) -> Manifest:
    section = None
    entry: str | None = None
    agents: dict[str, dict[str, str]] = {}
    agent_lines: dict[str, int] = {}
    conds: dict[str, list[ConditionFeature]] = {}
    cost: dict[str, str] = {}
    seen_sections: set[str] = set()

    def fail(msg, line, col=1):
        raise ManifestError(msg, line, col, path)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        if "\t" in line[: len(line) - len(line.lstrip())]:
            fail("indent with spaces, not tabs", lineno)
        if m := _SECTION.match(line):
            name = m.group(1).strip()
            if name not in SECTIONS:
                fail(f"unknown section [{name}]; expected one of {', '.join(SECTIONS)}", lineno, 2)
            if name in seen_sections:
                fail(f"section [{name}] appears twice", lineno, 2)
            seen_sections.add(name)
            section, entry = name, None
            continue
        if section is None:
            fail("content before the first [section]", lineno)
        if not line[0].isspace():
            if section == "cost":
                m = _PAIR.match(" " + line)
                if not m:
                    fail("expected 'key = value'", lineno)
                key, value = m.group(2), m.group(3)
                if key not in COST_KEYS:
                    fail(f"unknown cost key {key!r}", lineno)
                if key in cost:
                    fail(f"duplicate cost key {key!r}", lineno)
                cost[key] = value
                continue
            m = _ENTRY.match(line)
            if not m:
                fail("an entry line holds a single name", lineno, len(line.split()[0]) + 2)
            entry = m.group(1)
            if section == "agents":
                if entry == GLOBAL:
                    fail("'*' is only meaningful under [conditions]", lineno)
                if entry in agents:
                    fail(f"agent {entry!r} declared twice", lineno)
                agents[entry] = {}
                agent_lines[entry] = lineno
            else:
                if entry in conds:
                    fail(f"conditions for {entry!r} given twice", lineno)
                conds[entry] = []
            continue
        m = _PAIR.match(line)
        if not m:
            fail("expected 'key = value'", lineno, len(line) - len(line.lstrip()) + 1)
        col = len(m.group(1)) + 1
        key, value = m.group(2), m.group(3)
        if section == "cost":
            fail("[cost] keys are not indented", lineno)
        if entry is None:
            fail(f"'{key}' is not inside an entry", lineno, col)
        if not value:
            fail(f"'{key}' has no value", lineno, col)
        if section == "agents":
            if key not in AGENT_KEYS:
                fail(f"unknown agent key {key!r}; expected one of {', '.join(AGENT_KEYS)}", lineno, col)
            if key in agents[entry]:
                fail(f"duplicate key {key!r}", lineno, col)
            agents[entry][key] = value
        else:
            if any(f.name == key for f in conds[entry]):
                fail(f"duplicate feature {key!r}", lineno, col)
            v, unit = parse_feature_value(value)
            conds[entry].append(ConditionFeature(key, v, unit))

    if not agents:
        fail("manifest declares no agents", 1)
    roster = []
    for aid, fields in agents.items():
        if "role" not in fields:
            fail(f"agent {aid!r} has no role", agent_lines[aid])
        plugins = tuple(p.strip() for p in fields.get("plugins", "").split(",") if p.strip())
        roster.append(AgentProfile(aid, fields["role"], fields.get("base_model", "unspecified"), plugins))
    validate_roster(roster)

    cost_kwargs = {}
    for key, value in cost.items():
        if key == "tokens_per_message":
            try:
                cost_kwargs[COST_KEYS[key]] = float(value)
            except ValueError:
                raise ValidationError(f"tokens_per_message must be a number, got {value!r}") from None
        else:
            cost_kwargs[COST_KEYS[key]] = value
    global_feats = tuple(conds.pop(GLOBAL, ()))
    conditions = ConditionSet({k: tuple(v) for k, v in conds.items()}, global_feats)
    conditions.validate(roster)
    return Manifest(tuple(roster), conditions, CostModel(**cost_kwargs))


def load_manifest(path) -> Manifest:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest: {exc.strerror}", 1, 1, str(path)) from None
    return parse_manifest(text, str(path))


def _format_value(f: ConditionFeature) -> str:
    if f.is_scalar:
        body = repr(f.value)
        return f"{body} {f.unit}" if f.unit else body
    needs_quotes = "#" in f.value or parse_feature_value(f.value) != (f.value, "") or f.value != f.value.strip()
    return f'"{f.value}"' if needs_quotes else f.value


def write_manifest(m: Manifest) -> str:
    """Render ``m`` so that :func:`parse_manifest` gives it back unchanged."""
    out = ["[agents]"]
    for a in m.roster:
        out.append(a.id)
        out.append(f"  role = {a.role}")
        out.append(f"  base_model = {a.base_model}")
        if a.plugins:
            out.append(f"  plugins = {', '.join(a.plugins)}")
    out += ["", "[conditions]"]
    blocks = [(GLOBAL, m.conditions.global_features)] + list(m.conditions.per_agent.items())
    for owner, feats in blocks:
        if not feats:
            continue
        out.append(owner)
        out.extend(f"  {f.name} = {_format_value(f)}" for f in feats)
    cm = m.cost_model
    out += ["", "[cost]",
            f"tokens_per_message = {cm.tokens_per_message!r}",
            f"input_price_feature = {cm.in_price_feature}",
            f"output_price_feature = {cm.out_price_feature}"]
    return "\n".join(out) + "\n"
