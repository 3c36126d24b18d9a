"""Directed communication graphs: anchors, thresholding, cycle repair, scheduling."""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CycleDetected, IndexOutOfRange, InvalidThreshold, ManifestError, ShapeMismatch, ValidationError

Edge = tuple[int, int]
EdgeSet = Mapping[Edge, float]

CHAIN = "chain"
STAR = "star"
FULLY_CONNECTED = "fully-connected"
ANCHOR_KINDS = (CHAIN, STAR, FULLY_CONNECTED)

MASKED = "Masked"


@dataclass(frozen=True)
class AnchorTopology:
    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in ANCHOR_KINDS:
            raise ValidationError(f"unknown anchor kind {self.kind!r}; expected one of {ANCHOR_KINDS}")
        if self.n < 1:
            raise ValidationError("anchor needs at least one node")


def anchor_adjacency(anchor: AnchorTopology) -> np.ndarray:
    n = anchor.n
    a = np.zeros((n, n))
    if anchor.kind == CHAIN:
        for i in range(n - 1):
            a[i, i + 1] = 1.0
    elif anchor.kind == STAR:
        a[0, 1:] = 1.0
    else:
        a[:] = 1.0
        np.fill_diagonal(a, 0.0)
    return a


def check_probability_matrix(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeMismatch(f"edge-probability matrix must be square, got shape {s.shape}")
    if not np.all(np.isfinite(s)) or s.min(initial=0.0) < 0.0 or s.max(initial=0.0) > 1.0:
        raise ValidationError("edge probabilities must be finite and lie in [0, 1]")
    if np.any(np.diag(s) != 0.0):
        raise ValidationError("edge-probability matrix must have a zero (masked) diagonal")
    return s


def offdiag_mask(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def threshold(s, tau: float) -> dict[Edge, float]:
    """Edges with probability strictly above ``tau``."""
    if not 0.0 < tau < 1.0:
        raise InvalidThreshold(f"threshold must lie in (0, 1), got {tau}")
    s = check_probability_matrix(s)
    rows, cols = np.nonzero(s > tau)
    return {(int(i), int(j)): float(s[i, j]) for i, j in zip(rows, cols) if i != j}


def _adjacency(edges: Iterable[Edge]) -> dict[int, list[int]]:
    adj: dict[int, list[int]] = {}
    for i, j in edges:
        adj.setdefault(i, []).append(j)
    for targets in adj.values():
        targets.sort()
    return adj


def find_cycle(edges: Iterable[Edge]) -> list[Edge] | None:
    """First cycle met by a DFS in ascending node order, as a list of edges."""
    adj = _adjacency(edges)
    nodes = sorted(set(adj) | {j for ts in adj.values() for j in ts})
    state = {v: 0 for v in nodes}  # 0 unseen, 1 on stack, 2 done
    for root in nodes:
        if state[root]:
            continue
        path = [root]
        iters = [iter(adj.get(root, ()))]
        state[root] = 1
        while iters:
            nxt = next(iters[-1], None)
            if nxt is None:
                state[path.pop()] = 2
                iters.pop()
            elif state[nxt] == 1:
                loop = path[path.index(nxt):] + [nxt]
                return list(zip(loop, loop[1:]))
            elif state[nxt] == 0:
                state[nxt] = 1
                path.append(nxt)
                iters.append(iter(adj.get(nxt, ())))
    return None


def _reaches(adj: dict[int, list[int]], src: int, dst: int) -> bool:
    stack, seen = [src], {src}
    while stack:
        v = stack.pop()
        if v == dst:
            return True
        for w in adj.get(v, ()):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return False


def break_cycles(edges: EdgeSet) -> dict[Edge, float]:
    """Remove least-probable cycle edges until the graph is acyclic.

    Ties go to the lexicographically smallest edge. Removed edges that no
    longer close a cycle are then restored, most probable first, so the
    result is a maximal acyclic subset.
    """
    kept = dict(edges)
    if any(i == j for i, j in kept):
        raise ValidationError("self-loops are not allowed")
    removed: list[Edge] = []
    while (cycle := find_cycle(kept)) is not None:
        victim = min(cycle, key=lambda e: (kept[e], e))
        removed.append(victim)
        del kept[victim]
    if removed:
        adj = _adjacency(kept)
        for e in sorted(removed, key=lambda e: (-edges[e], e)):
            i, j = e
            if not _reaches(adj, j, i):
                kept[e] = edges[e]
                adj.setdefault(i, []).append(j)
    return dict(sorted(kept.items()))


def schedule(edges: Iterable[Edge], n: int) -> tuple[int, ...]:
    """Kahn's algorithm, always releasing the smallest ready index."""
    succ: list[list[int]] = [[] for _ in range(n)]
    indeg = [0] * n
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise IndexOutOfRange(f"edge {(i, j)} outside 0..{n - 1}")
        succ[i].append(j)
        indeg[j] += 1
    ready = [v for v in range(n) if indeg[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, w)
    if len(order) != n:
        stuck = [v for v in range(n) if indeg[v] > 0]
        raise CycleDetected(f"edge set has a cycle through nodes {stuck}", stuck)
    return tuple(order)


@dataclass(frozen=True)
class CommTopology:
    n: int
    edges: Mapping[Edge, float]
    schedule: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", MappingProxyType(dict(sorted(self.edges.items()))))
        object.__setattr__(self, "schedule", tuple(self.schedule))
        if sorted(self.schedule) != list(range(self.n)):
            raise ValidationError("schedule must be a permutation of the agents")
        pos = {v: k for k, v in enumerate(self.schedule)}
        for i, j in self.edges:
            if i == j:
                raise ValidationError(f"self-loop on {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise IndexOutOfRange(f"edge {(i, j)} outside 0..{self.n - 1}")
            if pos[i] >= pos[j]:
                raise CycleDetected(f"schedule places {j} before its upstream {i}")

    @classmethod
    def build(cls, n: int, edges: EdgeSet) -> "CommTopology":
        return cls(n, dict(edges), schedule(edges, n))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for (i, j) in self.edges:
            a[i, j] = 1.0
        return a

    def describe(self) -> str:
        edge_txt = ", ".join(f"{i}->{j} ({p:.4f})" for (i, j), p in self.edges.items()) or "(none)"
        return f"edges: {edge_txt}\nschedule: {' '.join(map(str, self.schedule))}"


def in_neighbors(topology: CommTopology, j: int) -> set[int]:
    if not 0 <= j < topology.n:
        raise IndexOutOfRange(f"agent index {j} outside 0..{topology.n - 1}")
    return {i for (i, k) in topology.edges if k == j}


def topology_from_matrix(s, tau: float) -> CommTopology:
    s = check_probability_matrix(s)
    return CommTopology.build(s.shape[0], break_cycles(threshold(s, tau)))


# --- plain-text matrix format ---------------------------------------------------

def format_matrix(s, labels: Sequence[str] | None = None, masked: bool = True) -> str:
    """Row-major grid with two decimals; the diagonal reads ``Masked`` or ``0.00``."""
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    if labels is not None and len(labels) != n:
        raise ShapeMismatch(f"{len(labels)} labels for a {n}x{n} matrix")
    width = max((len(x) for x in labels), default=0) if labels else 0
    lines = []
    for i in range(n):
        cells = [(MASKED if masked else "0.00") if i == j else f"{s[i, j]:.2f}" for j in range(n)]
        row = " ".join(f"{c:>6}" for c in cells)
        lines.append(f"{labels[i]:<{width}} | {row}" if labels else row)
    return "\n".join(lines) + "\n"


def parse_matrix(text: str, path: str | None = None) -> tuple[np.ndarray, list[str] | None]:
    """Read the grid written by :func:`format_matrix` (either diagonal style).

    Blank lines and ``#`` comments are skipped. A row may carry a label before
    ``|``; labels must be given on every row or on none.
    """
    rows: list[list[float]] = []
    labels: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        body, col0 = line, 0
        if "|" in line:
            label, body = line.split("|", 1)
            col0 = len(label) + 1
            labels.append(label.strip())
        values: list[float] = []
        for m in re.finditer(r"\S+", body):
            tok, col = m.group(), col0 + m.start() + 1
            k = len(values)
            if tok == MASKED:
                if k != len(rows):
                    raise ManifestError(f"'{MASKED}' allowed only on the diagonal", lineno, col, path)
                values.append(0.0)
                continue
            try:
                v = float(tok)
            except ValueError:
                raise ManifestError(f"not a number: {tok!r}", lineno, col, path) from None
            if not 0.0 <= v <= 1.0:
                raise ManifestError(f"probability out of [0, 1]: {tok}", lineno, col, path)
            if k == len(rows) and v != 0.0:
                raise ManifestError("diagonal entry must be Masked or 0", lineno, col, path)
            values.append(v)
        rows.append(values)
        if rows and len(values) != len(rows[0]):
            raise ManifestError(f"row has {len(values)} entries, expected {len(rows[0])}", lineno, 1, path)
    if not rows:
        raise ManifestError("no matrix rows found", 1, 1, path)
    if len(rows) != len(rows[0]):
        raise ManifestError(f"matrix is {len(rows)}x{len(rows[0])}, not square", len(text.splitlines()), 1, path)
    if labels and len(labels) != len(rows):
        raise ManifestError("labels must be given on every row or on none", 1, 1, path)
    return np.array(rows), (labels or None)
