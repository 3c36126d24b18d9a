"""Conditional topology generator.

Two message-passing encoders (profile channel and condition channel) run over
the symmetrized anchor graph; a pairwise MLP scores every ordered agent pair
from both endpoints' latents plus a projected query embedding. Forward and
backward passes are written out by hand in numpy.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .agents import AgentProfile, ConditionSet, Query, validate_roster, verbalize_condition, verbalize_profile
from .embedding import EmbedderSpec, batch_embed, embed
from .errors import ShapeMismatch, ValidationError
from .graph import AnchorTopology, CommTopology, anchor_adjacency, break_cycles, threshold

CHECKPOINT_MAGIC = "card-checkpoint"
CHECKPOINT_VERSION = 1
DEFAULT_EDGE_PRIOR = 0.3


@dataclass(frozen=True)
class Dims:
    d_in: int = 64
    d_hid: int = 32
    d_lat: int = 16
    d_dec: int = 32

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "enc_p.w1": (self.d_in, self.d_hid),
            "enc_p.w2": (self.d_hid, self.d_lat),
            "enc_c.w1": (self.d_in, self.d_hid),
            "enc_c.w2": (self.d_hid, self.d_lat),
            "w_q": (self.d_in, self.d_lat),
            "dec.w1": (5 * self.d_lat, self.d_dec),
            "dec.b1": (self.d_dec,),
            "dec.w2": (self.d_dec,),
            "dec.b2": (1,),
        }


@dataclass(frozen=True, eq=False)
class GeneratorParams:
    dims: Dims
    seed: int
    tensors: Mapping[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        shapes = self.dims.shapes()
        if set(self.tensors) != set(shapes):
            raise ShapeMismatch(f"tensor names {sorted(self.tensors)} != {sorted(shapes)}")
        frozen = {}
        for name, shape in shapes.items():
            t = np.array(self.tensors[name], dtype=float)
            if t.shape != shape:
                raise ShapeMismatch(f"{name}: shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ValidationError(f"{name}: non-finite entries")
            t.setflags(write=False)
            frozen[name] = t
        object.__setattr__(self, "tensors", MappingProxyType(frozen))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __eq__(self, other) -> bool:
        if not isinstance(other, GeneratorParams):
            return NotImplemented
        return (self.dims, self.seed) == (other.dims, other.seed) and all(
            np.array_equal(t, other.tensors[k]) for k, t in self.tensors.items())

    def __hash__(self) -> int:
        return hash(self.digest())

    def replace(self, updates: Mapping[str, np.ndarray]) -> "GeneratorParams":
        unknown = set(updates) - set(self.tensors)
        if unknown:
            raise KeyError(sorted(unknown))
        return GeneratorParams(self.dims, self.seed, {**self.tensors, **updates})

    def descend(self, grads: Mapping[str, np.ndarray], lr: float) -> "GeneratorParams":
        return GeneratorParams(self.dims, self.seed, {k: v - lr * grads[k] for k, v in self.tensors.items()})

    def to_text(self) -> str:
        d = self.dims
        lines = [
            f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
            f"dims {d.d_in} {d.d_hid} {d.d_lat} {d.d_dec}",
            f"seed {self.seed}",
        ]
        for name, t in self.tensors.items():
            rows = t.reshape(t.shape[0], -1)
            lines.append(f"tensor {name} {' '.join(map(str, t.shape))}")
            lines.extend(" ".join(repr(float(v)) for v in row) for row in rows)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GeneratorParams":
        lines = iter(text.splitlines())
        header = next(lines, "").split()
        if header != [CHECKPOINT_MAGIC, str(CHECKPOINT_VERSION)]:
            raise ValidationError(f"not a version-{CHECKPOINT_VERSION} checkpoint")
        try:
            dims_line = next(lines).split()
            seed_line = next(lines).split()
            if dims_line[0] != "dims" or seed_line[0] != "seed":
                raise ValidationError("malformed checkpoint header")
            dims = Dims(*map(int, dims_line[1:]))
            tensors = {}
            for line in lines:
                parts = line.split()
                if not parts:
                    continue
                if parts[0] != "tensor":
                    raise ValidationError(f"expected a tensor header, got {line[:40]!r}")
                name, shape = parts[1], tuple(int(x) for x in parts[2:])
                rows = [list(map(float, next(lines).split())) for _ in range(shape[0])]
                tensors[name] = np.array(rows).reshape(shape)
            seed = int(seed_line[1])
        except ValidationError:
            raise
        except (StopIteration, IndexError, ValueError, TypeError) as exc:
            raise ValidationError(f"truncated or malformed checkpoint ({type(exc).__name__})") from None
        return cls(dims, seed, tensors)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def init_params(dims: Dims = Dims(), seed: int = 0, edge_prior: float | None = DEFAULT_EDGE_PRIOR) -> GeneratorParams:
    """Glorot-uniform weights and zero biases.

    With ``edge_prior`` set, the output bias starts at its logit, so an
    untrained generator proposes edges with roughly that probability.
    """
    if edge_prior is not None and not 0.0 < edge_prior < 1.0:
        raise ValidationError("edge_prior must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in dims.shapes().items():
        if ".b" in name:
            tensors[name] = np.zeros(shape)
            continue
        fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], 1)
        r = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[name] = rng.uniform(-r, r, size=shape)
    if edge_prior is not None:
        tensors["dec.b2"] = np.array([np.log(edge_prior / (1.0 - edge_prior))])
    return GeneratorParams(dims, seed, tensors)


def save_checkpoint(params: GeneratorParams, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(params.to_text())


def load_checkpoint(path) -> GeneratorParams:
    with open(path, encoding="ascii") as fh:
        return GeneratorParams.from_text(fh.read())


# --- forward ---------------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0.0)


def normalized_anchor(anchor: AnchorTopology) -> np.ndarray:
    """Row-normalized symmetrized anchor with self-loops."""
    a = anchor_adjacency(anchor)
    m = np.maximum(a, a.T) + np.eye(anchor.n)
    return m / m.sum(axis=1, keepdims=True)


@dataclass
class _EncoderPass:
    ax: np.ndarray
    p1: np.ndarray
    ah: np.ndarray
    p2: np.ndarray
    h: np.ndarray


def _encode(x: np.ndarray, a_hat: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> _EncoderPass:
    ax = a_hat @ x
    p1 = ax @ w1
    ah = a_hat @ relu(p1)
    p2 = ah @ w2
    return _EncoderPass(ax, p1, ah, p2, relu(p2))


def encode(x, anchor: AnchorTopology, weights: Sequence[np.ndarray]) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w1, w2 = weights
    if x.ndim != 2 or x.shape[0] != anchor.n:
        raise ShapeMismatch(f"{x.shape} feature matrix for an anchor of {anchor.n} nodes")
    if x.shape[1] != w1.shape[0] or w1.shape[1] != w2.shape[0]:
        raise ShapeMismatch(f"weights {w1.shape}, {w2.shape} do not fit features {x.shape}")
    return _encode(x, normalized_anchor(anchor), w1, w2).h


def project_query(q, params: GeneratorParams) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (params.dims.d_in,):
        raise ShapeMismatch(f"query embedding shape {q.shape}, expected ({params.dims.d_in},)")
    return relu(q @ params["w_q"])


@dataclass(frozen=True)
class LatentStates:
    h_p: np.ndarray
    h_c: np.ndarray
    h_q: np.ndarray


def _decoder_blocks(w1: np.ndarray, d_lat: int) -> list[np.ndarray]:
    return [w1[k * d_lat:(k + 1) * d_lat] for k in range(5)]


def _decode(lat: LatentStates, params: GeneratorParams):
    d_lat = params.dims.d_lat
    wa, wb, wc, wd, wq = _decoder_blocks(params["dec.w1"], d_lat)
    src = lat.h_p @ wa + lat.h_c @ wb
    dst = lat.h_p @ wc + lat.h_c @ wd
    pre = src[:, None, :] + dst[None, :, :] + (lat.h_q @ wq + params["dec.b1"])
    hid = relu(pre)
    logits = hid @ params["dec.w2"] + params["dec.b2"][0]
    s = expit(logits)
    np.fill_diagonal(s, 0.0)
    return s, pre, hid


def decode_edges(lat: LatentStates, params: GeneratorParams) -> np.ndarray:
    for name in ("h_p", "h_c", "h_q"):
        if not np.all(np.isfinite(getattr(lat, name))):
            raise ValidationError(f"latent {name} has non-finite entries")
    return _decode(lat, params)[0]


@dataclass
class Forward:
    """Everything the backward pass needs from one forward evaluation."""

    x_p: np.ndarray
    x_c: np.ndarray
    x_q: np.ndarray
    a_hat: np.ndarray
    enc_p: _EncoderPass
    enc_c: _EncoderPass
    q_pre: np.ndarray
    lat: LatentStates
    pre: np.ndarray
    hid: np.ndarray
    s: np.ndarray


def forward(params: GeneratorParams, x_p, x_c, x_q, anchor: AnchorTopology) -> Forward:
    x_p, x_c = np.asarray(x_p, float), np.asarray(x_c, float)
    if x_p.shape != x_c.shape or x_p.shape[0] != anchor.n:
        raise ShapeMismatch(f"profile {x_p.shape} / condition {x_c.shape} features for {anchor.n} agents")
    if x_p.shape[1] != params.dims.d_in:
        raise ShapeMismatch(f"feature width {x_p.shape[1]}, expected {params.dims.d_in}")
    a_hat = normalized_anchor(anchor)
    ep = _encode(x_p, a_hat, params["enc_p.w1"], params["enc_p.w2"])
    ec = _encode(x_c, a_hat, params["enc_c.w1"], params["enc_c.w2"])
    x_q = np.asarray(x_q, float)
    if x_q.shape != (params.dims.d_in,):
        raise ShapeMismatch(f"query embedding shape {x_q.shape}")
    q_pre = x_q @ params["w_q"]
    lat = LatentStates(ep.h, ec.h, relu(q_pre))
    s, pre, hid = _decode(lat, params)
    return Forward(x_p, x_c, x_q, a_hat, ep, ec, q_pre, lat, pre, hid, s)


# --- backward --------------------------------------------------------------------

def _encode_backward(e: _EncoderPass, a_hat, w2, grad_h):
    d_p2 = grad_h * (e.p2 > 0)
    g_w2 = e.ah.T @ d_p2
    d_h1 = a_hat.T @ (d_p2 @ w2.T)
    d_p1 = d_h1 * (e.p1 > 0)
    g_w1 = e.ax.T @ d_p1
    return g_w1, g_w2


def backward(params: GeneratorParams, fwd: Forward, grad_s) -> dict[str, np.ndarray]:
    """Gradient of a scalar objective w.r.t. every tensor, given dObjective/dS."""
    grad_s = np.asarray(grad_s, dtype=float)
    d_lat = params.dims.d_lat
    s = fwd.s
    d_logit = grad_s * s * (1.0 - s)
    np.fill_diagonal(d_logit, 0.0)

    g = {}
    g["dec.b2"] = np.array([d_logit.sum()])
    g["dec.w2"] = np.einsum("ij,ijk->k", d_logit, fwd.hid)
    d_pre = d_logit[:, :, None] * params["dec.w2"] * (fwd.pre > 0)
    g["dec.b1"] = d_pre.sum(axis=(0, 1))
    d_src = d_pre.sum(axis=1)
    d_dst = d_pre.sum(axis=0)
    d_qterm = g["dec.b1"]

    lat = fwd.lat
    wa, wb, wc, wd, wq = _decoder_blocks(params["dec.w1"], d_lat)
    g["dec.w1"] = np.vstack([
        lat.h_p.T @ d_src,
        lat.h_c.T @ d_src,
        lat.h_p.T @ d_dst,
        lat.h_c.T @ d_dst,
        np.outer(lat.h_q, d_qterm),
    ])
    d_hp = d_src @ wa.T + d_dst @ wc.T
    d_hc = d_src @ wb.T + d_dst @ wd.T
    d_hq = wq @ d_qterm

    g["enc_p.w1"], g["enc_p.w2"] = _encode_backward(fwd.enc_p, fwd.a_hat, params["enc_p.w2"], d_hp)
    g["enc_c.w1"], g["enc_c.w2"] = _encode_backward(fwd.enc_c, fwd.a_hat, params["enc_c.w2"], d_hc)
    g["w_q"] = np.outer(fwd.x_q, d_hq * (fwd.q_pre > 0))
    return {name: g[name] for name in params.tensors}


# --- end-to-end -----------------------------------------------------------------

def featurize(
    roster: Sequence[AgentProfile],
    conditions: ConditionSet,
    query: Query,
    embedder: EmbedderSpec = EmbedderSpec(),
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    validate_roster(roster)
    conditions.validate(roster)
    x_p = batch_embed([verbalize_profile(p) for p in roster], embedder)
    x_c = batch_embed([verbalize_condition(p.id, conditions) for p in roster], embedder)
    return x_p, x_c, embed(query.text, embedder)


def generate(
    roster: Sequence[AgentProfile],
    conditions: ConditionSet,
    query: Query,
    anchor: AnchorTopology,
    params: GeneratorParams,
    tau: float = 0.5,
    embedder: EmbedderSpec | None = None,
) -> tuple[np.ndarray, CommTopology]:
    """Soft edge matrix and the executable (thresholded, acyclic) topology."""
    embedder = embedder or EmbedderSpec(dimension=params.dims.d_in)
    if anchor.n != len(roster):
        raise ShapeMismatch(f"anchor has {anchor.n} nodes, roster has {len(roster)} agents")
    x_p, x_c, x_q = featurize(roster, conditions, query, embedder)
    s = forward(params, x_p, x_c, x_q, anchor).s
    topo = CommTopology.build(len(roster), break_cycles(threshold(s, tau)))
    return s, topo
