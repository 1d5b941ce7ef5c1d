"""Minimal differentiable compute core.

A ``Tape`` records every operation in execution order; ``Tape.backward`` walks
the records once in reverse, accumulating gradients into parameter leaves.
Values are float64 numpy arrays throughout (scalars are 0-d arrays), which
keeps finite-difference checks tight.

Shape convention: the last axis is the feature axis, leading axes are batch
axes. Primitives accept single items and batches alike.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DiffnetError(ValueError):
    pass


class Node:
    __slots__ = ("value", "grad", "backward_fn", "tape")

    def __init__(self, value: np.ndarray, tape: "Tape", backward_fn=None):
        self.value = value
        self.grad: np.ndarray | None = None
        self.backward_fn = backward_fn
        self.tape = tape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


class Tape:
    """Execution-ordered operation record supporting one reverse sweep."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def _new(self, value, backward_fn=None) -> Node:
        node = Node(np.asarray(value, dtype=np.float64), self, backward_fn)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self._new(value)

    def param(self, name: str, value: np.ndarray) -> Node:
        if name in self.params:
            raise DiffnetError(f"parameter {name!r} already on tape")
        node = self._new(value)
        self.params[name] = node
        return node

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Reverse accumulation from a scalar loss.

        Returns one gradient array per registered parameter; parameters the
        loss does not reach get zeros.
        """
        if loss.value.shape != ():
            raise DiffnetError(f"loss must be scalar, got shape {loss.value.shape}")
        loss.grad = np.ones(())
        for node in reversed(self.nodes):
            if node.grad is not None and node.backward_fn is not None:
                node.backward_fn(node.grad)
        return {
            name: (node.grad.copy() if node.grad is not None else np.zeros_like(node.value))
            for name, node in self.params.items()
        }


def _tape(*nodes: Node) -> Tape:
    return nodes[0].tape


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient over broadcast leading axes back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a: Node, b: Node) -> Node:
    out = _tape(a)._new(a.value + b.value)

    def backward(g):
        a.accumulate(_sum_to(g, a.value.shape))
        b.accumulate(_sum_to(g, b.value.shape))

    out.backward_fn = backward
    return out


def sub(a: Node, b: Node) -> Node:
    out = _tape(a)._new(a.value - b.value)

    def backward(g):
        a.accumulate(_sum_to(g, a.value.shape))
        b.accumulate(_sum_to(-g, b.value.shape))

    out.backward_fn = backward
    return out


def mul(a: Node, b: Node) -> Node:
    out = _tape(a)._new(a.value * b.value)

    def backward(g):
        a.accumulate(_sum_to(g * b.value, a.value.shape))
        b.accumulate(_sum_to(g * a.value, b.value.shape))

    out.backward_fn = backward
    return out


def scale(a: Node, c: float) -> Node:
    out = _tape(a)._new(a.value * c)
    out.backward_fn = lambda g: a.accumulate(g * c)
    return out


def mulc(a: Node, const: np.ndarray) -> Node:
    """Elementwise multiply by a constant array (broadcastable to a)."""
    const = np.asarray(const, dtype=np.float64)
    out = _tape(a)._new(a.value * const)
    out.backward_fn = lambda g: a.accumulate(_sum_to(g * const, a.value.shape))
    return out


def addc(a: Node, const: np.ndarray) -> Node:
    """Elementwise add of a constant array (broadcastable to a)."""
    out = _tape(a)._new(a.value + np.asarray(const, dtype=np.float64))
    out.backward_fn = lambda g: a.accumulate(_sum_to(g, a.value.shape))
    return out


def affine(w: Node, b: Node | None, x: Node) -> Node:
    """y = x @ w.T + b for x of shape (..., n), w of shape (m, n), b of shape (m,)."""
    m, n = w.value.shape
    if x.value.shape[-1] != n:
        raise DiffnetError(f"affine: input dim {x.value.shape[-1]} != weight dim {n}")
    y = x.value @ w.value.T
    if b is not None:
        if b.value.shape != (m,):
            raise DiffnetError(f"affine: bias shape {b.value.shape} != ({m},)")
        y = y + b.value
    out = _tape(x)._new(y)

    def backward(g):
        g2 = g.reshape(-1, m)
        x2 = x.value.reshape(-1, n)
        x.accumulate((g2 @ w.value).reshape(x.value.shape))
        w.accumulate(g2.T @ x2)
        if b is not None:
            b.accumulate(g2.sum(axis=0))

    out.backward_fn = backward
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(x: Node) -> Node:
    s = _sigmoid(x.value)
    out = _tape(x)._new(x.value * s)
    out.backward_fn = lambda g: x.accumulate(g * (s * (1.0 + x.value * (1.0 - s))))
    return out


def layernorm(x: Node, gain: Node, bias: Node, eps: float = 1e-12) -> Node:
    """Normalize the last axis to mean 0, variance 1, then apply gain and bias."""
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _tape(x)._new(xhat * gain.value + bias.value)

    def backward(g):
        gain.accumulate(_sum_to(g * xhat, gain.value.shape))
        bias.accumulate(_sum_to(g, bias.value.shape))
        dxhat = g * gain.value
        term = dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        x.accumulate(inv * term)

    out.backward_fn = backward
    return out


def softmax(x: Node) -> Node:
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _tape(x)._new(y)
    out.backward_fn = lambda g: x.accumulate((g - (g * y).sum(axis=-1, keepdims=True)) * y)
    return out


def stack_pair(a: Node, b: Node) -> Node:
    """Stack two (B, d) nodes into (B, 2, d) token matrices."""
    out = _tape(a)._new(np.stack([a.value, b.value], axis=1))

    def backward(g):
        a.accumulate(g[:, 0])
        b.accumulate(g[:, 1])

    out.backward_fn = backward
    return out


def attend_scores(q: Node, k: Node, scale_const: float) -> Node:
    """(B, dk) x (B, m, dk) -> (B, m) scaled dot-product scores."""
    out = _tape(q)._new(np.einsum("bk,bmk->bm", q.value, k.value) * scale_const)

    def backward(g):
        gs = g * scale_const
        q.accumulate(np.einsum("bm,bmk->bk", gs, k.value))
        k.accumulate(np.einsum("bm,bk->bmk", gs, q.value))

    out.backward_fn = backward
    return out


def attend_mix(att: Node, v: Node) -> Node:
    """(B, m) x (B, m, dv) -> (B, dv) attention-weighted token mix."""
    out = _tape(att)._new(np.einsum("bm,bmv->bv", att.value, v.value))

    def backward(g):
        att.accumulate(np.einsum("bv,bmv->bm", g, v.value))
        v.accumulate(np.einsum("bm,bv->bmv", att.value, g))

    out.backward_fn = backward
    return out


def lerp_rows(mask: np.ndarray, a: Node, b: Node) -> Node:
    """Per-row blend mask*a + (1-mask)*b of (B, d) rows with (B, 1) constant mask.

    ``b`` may be a (d,) vector, broadcast across rows.
    """
    mask = np.asarray(mask, dtype=np.float64)
    out = _tape(a)._new(mask * a.value + (1.0 - mask) * b.value)

    def backward(g):
        a.accumulate(_sum_to(g * mask, a.value.shape))
        b.accumulate(_sum_to(g * (1.0 - mask), b.value.shape))

    out.backward_fn = backward
    return out


def tile_rows(v: Node, n: int) -> Node:
    """Broadcast a (d,) node to (n, d)."""
    out = _tape(v)._new(np.broadcast_to(v.value, (n,) + v.value.shape).copy())
    out.backward_fn = lambda g: v.accumulate(g.sum(axis=0))
    return out


def concat_cols(a: Node, b: Node) -> Node:
    """Concatenate two (..., na) and (..., nb) nodes along the last axis."""
    na = a.value.shape[-1]
    out = _tape(a)._new(np.concatenate([a.value, b.value], axis=-1))

    def backward(g):
        a.accumulate(g[..., :na])
        b.accumulate(g[..., na:])

    out.backward_fn = backward
    return out


def mse(a: Node, b: Node) -> Node:
    """Scalar mean of squared differences over all elements."""
    diff = a.value - b.value
    out = _tape(a)._new(np.asarray(np.mean(diff * diff)))
    n = diff.size

    def backward(g):
        ga = g * (2.0 / n) * diff
        a.accumulate(ga)
        b.accumulate(-ga)

    out.backward_fn = backward
    return out


def sum_all(x: Node) -> Node:
    out = _tape(x)._new(np.asarray(x.value.sum()))
    out.backward_fn = lambda g: x.accumulate(np.broadcast_to(g, x.value.shape).copy())
    return out


def cross_attention(
    h: Node, tokens: Node, w_q: Node, w_k: Node, w_v: Node, w_o: Node
) -> Node:
    """Residual single-query cross-attention over condition tokens.

    q = W_q h; K = tokens W_k^T; V = tokens W_v^T;
    out = h + (softmax(q K^T / sqrt(d_k)) V) W_o^T.

    ``h`` is (B, d_h) and ``tokens`` is (B, m, d_c) with m >= 1.
    """
    if tokens.value.ndim != 3 or tokens.value.shape[1] < 1:
        raise DiffnetError("tokens must be (B, m, d_c) with m >= 1")
    d_k = w_q.value.shape[0]
    q = affine(w_q, None, h)
    k = affine(w_k, None, tokens)
    v = affine(w_v, None, tokens)
    att = softmax(attend_scores(q, k, 1.0 / np.sqrt(d_k)))
    mix = attend_mix(att, v)
    return add(h, affine(w_o, None, mix))


def cross_attention_single(h_vec, tokens_mat, w_q, w_k, w_v, w_o, tape: Tape):
    """Convenience wrapper: one query vector and one (m, d_c) token matrix."""
    h = tape.constant(np.asarray(h_vec, dtype=np.float64)[None, :])
    tokens = tape.constant(np.asarray(tokens_mat, dtype=np.float64)[None, :, :])
    out = cross_attention(h, tokens, w_q, w_k, w_v, w_o)
    return out.value[0]


def time_embed(t: float, dim: int) -> np.ndarray:
    """Sinusoidal features of a timestep: pairs of sin/cos at geometric frequencies."""
    if dim % 2 != 0:
        raise DiffnetError("time embedding dim must be even")
    i = np.arange(dim // 2)
    angles = t / np.power(10000.0, 2.0 * i / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


# ---------------------------------------------------------------------------
# parameter store + Adam
# ---------------------------------------------------------------------------


_NAME_SEEDS: dict[str, int] = {}


def _name_seed(name: str) -> int:
    seed = _NAME_SEEDS.get(name)
    if seed is None:
        seed = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
        _NAME_SEEDS[name] = seed
    return seed


class ParamStore:
    """Named float64 tensors with per-tensor Adam moments and a step counter."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.values: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step = 0

    def create(self, name: str, shape: tuple[int, ...], init: str = "fan_in") -> np.ndarray:
        """Create a tensor; ``fan_in`` draws N(0, 1/fan_in), ``zeros`` is zeros."""
        if name in self.values:
            raise DiffnetError(f"parameter {name!r} already exists")
        if init == "zeros":
            value = np.zeros(shape)
        elif init == "ones":
            value = np.ones(shape)
        elif init == "fan_in":
            rng = np.random.default_rng([self.seed, _name_seed(name)])
            fan_in = shape[-1]
            value = rng.standard_normal(shape) / np.sqrt(fan_in)
        else:
            raise DiffnetError(f"unknown init {init!r}")
        self.values[name] = value
        self.adam_m[name] = np.zeros(shape)
        self.adam_v[name] = np.zeros(shape)
        return value

    def names(self) -> list[str]:
        return sorted(self.values)

    def wrap(self, tape: Tape) -> dict[str, Node]:
        return {name: tape.param(name, self.values[name]) for name in self.names()}

    def wrap_constants(self, tape: Tape) -> dict[str, Node]:
        return {name: tape.constant(self.values[name]) for name in self.names()}

    def num_coords(self) -> int:
        return sum(v.size for v in self.values.values())

    def clone(self) -> "ParamStore":
        other = ParamStore(self.seed)
        other.step = self.step
        other.values = {k: v.copy() for k, v in self.values.items()}
        other.adam_m = {k: v.copy() for k, v in self.adam_m.items()}
        other.adam_v = {k: v.copy() for k, v in self.adam_v.items()}
        return other

    def state_hash(self) -> str:
        digest = hashlib.sha256()
        for name in self.names():
            digest.update(name.encode())
            digest.update(self.values[name].tobytes())
        return digest.hexdigest()


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update over all stored tensors."""
    for name, g in grads.items():
        if name not in store.values:
            raise DiffnetError(f"gradient for unknown parameter {name!r}")
        if g.shape != store.values[name].shape:
            raise DiffnetError(f"gradient shape {g.shape} != parameter shape {store.values[name].shape}")
    t = store.step + 1
    for name, g in grads.items():
        m = store.adam_m[name]
        v = store.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        store.values[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    store.step = t


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------


def fd_check(fn, store: ParamStore, h: float = 1e-5, num_coords: int = 220, seed: int = 0) -> float:
    """Max guarded relative error between analytic and central-difference gradients.

    ``fn()`` must deterministically return ``(loss, grads)`` for the store's
    current values. A sampled subset of at least ``num_coords`` coordinates is
    perturbed by +-h. The error denominator is floored at one thousandth of
    the largest analytic gradient magnitude so near-zero coordinates compare
    on an absolute scale instead of amplifying roundoff.
    """
    _, grads = fn()
    coords: list[tuple[str, int]] = []
    for name in store.names():
        coords.extend((name, i) for i in range(store.values[name].size))
    rng = np.random.default_rng(seed)
    if len(coords) > num_coords:
        picked = [coords[i] for i in rng.choice(len(coords), size=num_coords, replace=False)]
    else:
        picked = coords
    g_max = max((float(np.max(np.abs(g))) for g in grads.values()), default=0.0)
    floor = max(1e-8, 1e-3 * g_max)
    worst = 0.0
    for name, idx in picked:
        arr = store.values[name]
        orig = arr.flat[idx]
        arr.flat[idx] = orig + h
        loss_plus, _ = fn()
        arr.flat[idx] = orig - h
        loss_minus, _ = fn()
        arr.flat[idx] = orig
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        analytic = grads[name].flat[idx]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoint format: checkpoint.json + checkpoint.f64
# ---------------------------------------------------------------------------


def save_checkpoint(store: ParamStore, directory: str | Path, config: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = store.names()
    manifest = {
        "names": names,
        "shapes": {n: list(store.values[n].shape) for n in names},
        "step": store.step,
        "seed": store.seed,
        "config": config,
    }
    payload = b"".join(
        store.values[n].astype("<f8").tobytes()
        + store.adam_m[n].astype("<f8").tobytes()
        + store.adam_v[n].astype("<f8").tobytes()
        for n in names
    )
    (directory / "checkpoint.json").write_text(json.dumps(manifest, sort_keys=True, separators=(",", ":")))
    (directory / "checkpoint.f64").write_bytes(payload)
    return directory


def load_checkpoint(directory: str | Path) -> tuple[ParamStore, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "checkpoint.json").read_text())
    raw = np.frombuffer((directory / "checkpoint.f64").read_bytes(), dtype="<f8")
    store = ParamStore(seed=manifest["seed"])
    store.step = int(manifest["step"])
    offset = 0
    for name in manifest["names"]:
        shape = tuple(manifest["shapes"][name])
        count = int(np.prod(shape)) if shape else 1
        store.values[name] = raw[offset : offset + count].reshape(shape).copy()
        offset += count
        store.adam_m[name] = raw[offset : offset + count].reshape(shape).copy()
        offset += count
        store.adam_v[name] = raw[offset : offset + count].reshape(shape).copy()
        offset += count
    return store, manifest["config"]


def checkpoint_hash(directory: str | Path) -> str:
    directory = Path(directory)
    digest = hashlib.sha256()
    digest.update((directory / "checkpoint.json").read_bytes())
    digest.update((directory / "checkpoint.f64").read_bytes())
    return digest.hexdigest()
