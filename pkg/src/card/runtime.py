"""K-round message propagation over a communication DAG, and answer aggregation."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from .agents import Query
from .errors import EmptyResponses, ExecutorFailure, ValidationError
from .graph import CommTopology, in_neighbors

DEFAULT_SYSTEM_PROMPT = (
    "You are one agent in a team. Read the task and any responses forwarded by "
    "upstream agents, then give your own answer."
)

VOTE = "vote"
SELECT_LAST = "select-last"
CONCAT_SUMMARY = "concat-summary"
AGGREGATION_MODES = (VOTE, SELECT_LAST, CONCAT_SUMMARY)


@dataclass(frozen=True)
class Message:
    round: int
    sender: int
    content: str


@dataclass(frozen=True)
class RoundPrompts:
    round: int
    system: str
    user: str


class AgentExecutor(Protocol):
    def __call__(self, agent: int, prompts: RoundPrompts, upstream: Sequence[Message]) -> str: ...


@dataclass
class Transcript:
    n: int
    k: int
    per_round: list[list[Message | None]] = field(default_factory=list)
    prompts: list[list[RoundPrompts | None]] = field(default_factory=list)
    final_answer: str | None = None

    def final_responses(self) -> list[str]:
        return [m.content for m in self.per_round[-1]]

    def export(self) -> str:
        """One tab-separated record per (round, agent), stable field order."""
        lines = ["round\tagent\tsystem_sha256\tuser_sha256\tresponse"]
        for t, (msgs, prompts) in enumerate(zip(self.per_round, self.prompts), start=1):
            for i, (m, p) in enumerate(zip(msgs, prompts)):
                if m is None:
                    continue
                content = m.content.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")
                lines.append(f"{t}\t{i}\t{_digest(p.system)}\t{_digest(p.user)}\t{content}")
        if self.final_answer is not None:
            lines.append(f"final\t-\t-\t-\t{self.final_answer}")
        return "\n".join(lines) + "\n"


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def build_user_prompt(query: Query, upstream: Sequence[Message]) -> str:
    parts = [f"Task: {query.text}"]
    if upstream:
        parts.append("Responses from upstream agents:")
        parts.extend(f"[agent {m.sender}] {m.content}" for m in upstream)
    return "\n".join(parts)


def run_rounds(
    topology: CommTopology,
    query: Query,
    executor: AgentExecutor,
    k: int = 1,
    system_prompt: str = DEFAULT_SYSTEM_PROMPT,
    aggregation: str | None = None,
) -> Transcript:
    """Visit agents in schedule order for each of ``k`` rounds.

    Each agent sees the round-``t`` responses of its in-neighbors, which the
    schedule guarantees already exist. With ``aggregation`` set, the final
    round is also reduced to ``final_answer``.
    """
    if k < 1:
        raise ValidationError("need at least one round")
    n = topology.n
    preds = [sorted(in_neighbors(topology, j)) for j in range(n)]
    tr = Transcript(n, k)
    for t in range(1, k + 1):
        msgs: list[Message | None] = [None] * n
        prompts: list[RoundPrompts | None] = [None] * n
        tr.per_round.append(msgs)
        tr.prompts.append(prompts)
        for i in topology.schedule:
            upstream = [msgs[j] for j in preds[i]]
            rp = RoundPrompts(t, system_prompt, build_user_prompt(query, upstream))
            prompts[i] = rp
            try:
                content = executor(i, rp, tuple(upstream))
            except Exception as exc:
                raise ExecutorFailure(i, t, tr, exc) from exc
            msgs[i] = Message(t, i, str(content))
    if aggregation is not None:
        tr.final_answer = aggregate(tr.final_responses(), aggregation, topology.schedule)
    return tr


def normalize_answer(text: str) -> str:
    return text.strip().lower()


def aggregate(responses: Sequence[str], mode: str = VOTE, schedule: Sequence[int] | None = None) -> str:
    if not responses:
        raise EmptyResponses("nothing to aggregate")
    if mode == VOTE:
        counts = Counter(normalize_answer(r) for r in responses)
        top = max(counts.values())
        winner = min(a for a, c in counts.items() if c == top)
        # report a surface form that does not depend on response order
        return min(r.strip() for r in responses if normalize_answer(r) == winner)
    if mode == SELECT_LAST:
        order = list(schedule) if schedule is not None else list(range(len(responses)))
        return responses[order[-1]]
    if mode == CONCAT_SUMMARY:
        return "\n---\n".join(f"[{i}] {r.strip()}" for i, r in enumerate(responses))
    raise ValidationError(f"unknown aggregation mode {mode!r}; expected one of {AGGREGATION_MODES}")
