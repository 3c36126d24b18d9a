"""Matrix statistics, correlation reports and runtime adaptation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy import stats as sstats

from .agents import AgentProfile, ConditionSet, Query
from .errors import DegenerateVariance, ShapeMismatch, ValidationError
from .generator import GeneratorParams, generate
from .graph import AnchorTopology, CommTopology, check_probability_matrix, offdiag_mask

OFFDIAG = "offdiag"
FULL = "full"
# Upper-triangle pairs (i < j) that do not start at agent 0. Not the default;
# kept because it is the only subset found that reproduces the published
# correlation table, p-values included.
UPPER_WITHOUT_FIRST = "upper-without-first"
CONVENTIONS = (OFFDIAG, FULL, UPPER_WITHOUT_FIRST)


def paired_entries(a, b, convention: str = OFFDIAG) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"cannot pair matrices of shapes {a.shape} and {b.shape}")
    n = a.shape[0]
    if convention == OFFDIAG:
        mask = offdiag_mask(n)
    elif convention == FULL:
        a, b = a.copy(), b.copy()
        np.fill_diagonal(a, 0.0)
        np.fill_diagonal(b, 0.0)
        mask = np.ones((n, n), dtype=bool)
    elif convention == UPPER_WITHOUT_FIRST:
        mask = np.triu(np.ones((n, n), dtype=bool), k=1)
        mask[0, :] = False
    else:
        raise ValidationError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    return a[mask], b[mask]


def pearson(a, b, convention: str = OFFDIAG) -> tuple[float, float]:
    """Correlation of paired entries and its two-sided p-value (t test, m - 2 dof)."""
    x, y = paired_entries(a, b, convention)
    m = x.size
    if m < 3:
        raise ValidationError(f"need at least 3 paired entries, got {m}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateVariance("correlation is undefined for a constant entry vector")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    r = float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))
    dof = m - 2
    if abs(r) == 1.0:
        return r, 0.0
    t = r * np.sqrt(dof / (1.0 - r * r))
    return r, float(2.0 * sstats.t.sf(abs(t), dof))


@dataclass(frozen=True)
class TopologyStats:
    mean_offdiag: float
    density_at_tau: float
    tau: float
    per_edge: np.ndarray


def stats(s, tau: float = 0.5) -> TopologyStats:
    s = check_probability_matrix(s)
    n = s.shape[0]
    if n < 2:
        return TopologyStats(0.0, 0.0, tau, s)
    off = s[offdiag_mask(n)]
    return TopologyStats(float(off.mean()), float((off > tau).mean()), tau, s)


def adapt(
    params: GeneratorParams,
    roster: Sequence[AgentProfile],
    new_conditions: ConditionSet,
    query: Query,
    anchor: AnchorTopology,
    tau: float = 0.5,
) -> tuple[np.ndarray, CommTopology]:
    """Re-decode under fresh conditions. Parameters are read, never written."""
    return generate(roster, new_conditions, query, anchor, params, tau)


# --- report ---------------------------------------------------------------------

def strength(r: float) -> str:
    a = abs(r)
    if a >= 0.9:
        return "Very strong"
    if a >= 0.7:
        return "Strong"
    if a >= 0.4:
        return "Moderate"
    return "Weak"


def significance(p: float, alpha: float = 0.05) -> str:
    if p < alpha:
        return "Yes"
    return "Marginal" if p < 2 * alpha else "No"


def _fmt_p(p: float) -> str:
    return f"{p:.4f}" if p >= 1e-4 else f"{p:.1e}"


@dataclass(frozen=True)
class PairResult:
    left: str
    right: str
    r: float
    p: float


@dataclass(frozen=True)
class Report:
    names: tuple[str, ...]
    stats: tuple[TopologyStats, ...]
    pairs: tuple[PairResult, ...]
    convention: str

    def to_text(self) -> str:
        w = max(len(n) for n in self.names)
        lines = [f"{'Matrix':<{w}}  mean_offdiag  density@{self.stats[0].tau:g}"]
        for name, st in zip(self.names, self.stats):
            lines.append(f"{name:<{w}}  {st.mean_offdiag:12.4f}  {st.density_at_tau:10.4f}")
        lines.append("")
        lines.append(f"Pearson correlation ({self.convention})")
        rows = [(f"{p.left} vs {p.right}", f"{p.r:.4f}", _fmt_p(p.p), strength(p.r), significance(p.p))
                for p in self.pairs]
        head = ("Comparison", "r", "p", "Strength", "Sig.")
        widths = [max(len(x[k]) for x in rows + [head]) for k in range(5)]
        for row in [head] + rows:
            lines.append("  ".join(c.ljust(widths[k]) if k in (0, 3, 4) else c.rjust(widths[k])
                                   for k, c in enumerate(row)).rstrip())
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {
            "convention": self.convention,
            "matrices": [{"name": n, "mean_offdiag": s.mean_offdiag, "density": s.density_at_tau, "tau": s.tau}
                         for n, s in zip(self.names, self.stats)],
            "pairs": [{"left": p.left, "right": p.right, "r": p.r, "p": p.p,
                       "strength": strength(p.r), "significant": significance(p.p)} for p in self.pairs],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def compare(matrices: Sequence, names: Sequence[str] | None = None, tau: float = 0.5,
            convention: str = OFFDIAG, reference_only: bool = False) -> Report:
    """Stats for every matrix and correlations for each pair.

    With ``reference_only`` only the first matrix is compared against the rest.
    """
    if len(matrices) < 2:
        raise ValidationError("a comparison needs at least two matrices")
    mats = [check_probability_matrix(m) for m in matrices]
    if len({m.shape for m in mats}) != 1:
        raise ShapeMismatch(f"matrices differ in size: {[m.shape[0] for m in mats]}")
    names = tuple(names) if names is not None else tuple(f"Matrix {k + 1}" for k in range(len(mats)))
    if len(names) != len(mats):
        raise ValidationError("one name per matrix is required")
    idx = [(0, j) for j in range(1, len(mats))] if reference_only else list(combinations(range(len(mats)), 2))
    pairs = tuple(PairResult(names[i], names[j], *pearson(mats[i], mats[j], convention)) for i, j in idx)
    return Report(names, tuple(stats(m, tau) for m in mats), pairs, convention)
