"""Stacked LSTM with exact backpropagation through time.

Gate layout inside every weight matrix is ``[input, forget, output, candidate]``
along the row axis, and the columns are ``[x; h_prev]``.  All arithmetic is
float64.  Parameters and gradients travel as ordered ``name -> array`` dicts so
the optimizer and the gradient checker can treat heads and backbones alike.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit as sigmoid

__all__ = [
    "LstmLayerParams",
    "StackedLstm",
    "LstmState",
    "LayerCache",
    "ForwardResult",
    "AdamConfig",
    "AdamState",
    "GradCheckReport",
    "init_params",
    "forward",
    "backward",
    "clip_gradients",
    "adam_step",
    "grad_check",
]


@dataclass
class LstmLayerParams:
    W: np.ndarray  # (4H, I + H)
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        H4, cols = self.W.shape
        if H4 % 4 or self.b.shape != (H4,) or cols <= H4 // 4:
            raise ValueError(f"inconsistent LSTM layer shapes W{self.W.shape} b{self.b.shape}")

    @property
    def hidden_dim(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.W.shape[1] - self.hidden_dim


@dataclass
class StackedLstm:
    layers: list[LstmLayerParams]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a stacked LSTM needs at least one layer")
        for lo, hi in zip(self.layers, self.layers[1:]):
            if hi.input_dim != lo.hidden_dim:
                raise ValueError(
                    f"layer input_dim {hi.input_dim} does not match lower hidden_dim {lo.hidden_dim}"
                )

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def hidden_dim(self) -> int:
        return self.layers[-1].hidden_dim

    def parameters(self, prefix: str = "lstm") -> dict[str, np.ndarray]:
        """Live views of every tensor, keyed ``<prefix>.<layer>.W`` / ``.b``."""
        out = {}
        for k, layer in enumerate(self.layers):
            out[f"{prefix}.{k}.W"] = layer.W
            out[f"{prefix}.{k}.b"] = layer.b
        return out

    def copy(self) -> "StackedLstm":
        return StackedLstm([LstmLayerParams(l.W.copy(), l.b.copy()) for l in self.layers])


@dataclass
class LstmState:
    h: list[np.ndarray]
    c: list[np.ndarray]


@dataclass
class LayerCache:
    x: np.ndarray  # (T, I) layer input
    h: np.ndarray  # (T + 1, H), row 0 is the zero initial state
    c: np.ndarray  # (T + 1, H)
    gates: np.ndarray  # (T, 4H) post-activation i, f, o, g


@dataclass
class ForwardResult:
    caches: list[LayerCache]
    final_state: LstmState = field(init=False)

    def __post_init__(self):
        self.final_state = LstmState(
            h=[c.h[-1].copy() for c in self.caches], c=[c.c[-1].copy() for c in self.caches]
        )

    @property
    def hidden(self) -> list[np.ndarray]:
        """Per-layer (T, H) hidden outputs h_1..h_T."""
        return [c.h[1:] for c in self.caches]

    @property
    def top(self) -> np.ndarray:
        return self.caches[-1].h[1:]

    @property
    def last(self) -> np.ndarray:
        return self.caches[-1].h[-1]


def init_params(input_dim: int, hidden_dims: list[int] | tuple[int, ...], seed: int) -> StackedLstm:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget bias 1, other biases 0."""
    if input_dim < 1 or not hidden_dims or min(hidden_dims) < 1:
        raise ValueError(f"invalid LSTM dims: input={input_dim} hidden={list(hidden_dims)}")
    rng = np.random.default_rng(seed)
    layers = []
    prev = input_dim
    for H in hidden_dims:
        r = 1.0 / np.sqrt(H)
        W = rng.uniform(-r, r, size=(4 * H, prev + H))
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        layers.append(LstmLayerParams(W, b))
        prev = H
    return StackedLstm(layers)


def _layer_forward(layer: LstmLayerParams, x: np.ndarray) -> LayerCache:
    T = x.shape[0]
    H, I = layer.hidden_dim, layer.input_dim
    Wx, Wh = layer.W[:, :I], layer.W[:, I:]
    # per-row products: a batched gemm may round differently for different T,
    # which would break bit-exact prefix consistency
    Z = np.empty((T, 4 * layer.hidden_dim))
    for t in range(T):
        Z[t] = Wx @ x[t]
    Z += layer.b
    h = np.zeros((T + 1, H))
    c = np.zeros((T + 1, H))
    gates = np.empty((T, 4 * H))
    for t in range(T):
        z = Z[t] + Wh @ h[t]
        a = gates[t]
        a[: 3 * H] = sigmoid(z[: 3 * H])
        a[3 * H :] = np.tanh(z[3 * H :])
        c[t + 1] = a[H : 2 * H] * c[t] + a[:H] * a[3 * H :]
        h[t + 1] = a[2 * H : 3 * H] * np.tanh(c[t + 1])
    return LayerCache(x=x, h=h, c=c, gates=gates)


def forward(net: StackedLstm, inputs) -> ForwardResult:
    """Run the stack over a (T, input_dim) sequence from a zero state."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected a (T, D) sequence with T >= 1, got shape {x.shape}")
    if x.shape[1] != net.input_dim:
        raise ValueError(f"input dim {x.shape[1]} does not match network input_dim {net.input_dim}")
    caches = []
    for layer in net.layers:
        cache = _layer_forward(layer, x)
        caches.append(cache)
        x = cache.h[1:]
    return ForwardResult(caches)


def backward(
    net: StackedLstm,
    fwd: ForwardResult,
    d_hidden: np.ndarray | Mapping[int, np.ndarray],
    prefix: str = "lstm",
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Reverse-mode gradients given dLoss/dh for selected layers.

    ``d_hidden`` is either a (T, H) array for the top layer or a mapping
    ``layer_index -> (T, H_l)``.  Returns ``(param_grads, d_inputs)``.
    """
    if len(fwd.caches) != net.depth:
        raise ValueError("forward cache depth does not match network")
    T = fwd.caches[0].x.shape[0]
    if not isinstance(d_hidden, Mapping):
        d_hidden = {net.depth - 1: d_hidden}
    upstream = {}
    for k, g in d_hidden.items():
        g = np.asarray(g, dtype=np.float64)
        if not 0 <= k < net.depth or g.shape != (T, net.layers[k].hidden_dim):
            raise ValueError(f"upstream gradient for layer {k} has shape {g.shape}")
        upstream[k] = g

    grads: dict[str, np.ndarray] = {}
    d_below = None
    for k in range(net.depth - 1, -1, -1):
        layer, cache = net.layers[k], fwd.caches[k]
        if cache.x.shape[1] != layer.input_dim or cache.h.shape[1] != layer.hidden_dim:
            raise ValueError(f"cache for layer {k} does not match its parameters")
        H, I = layer.hidden_dim, layer.input_dim
        dH = np.zeros((T, H))
        if k in upstream:
            dH += upstream[k]
        if d_below is not None:
            dH += d_below
        Wh = layer.W[:, I:]
        gt = cache.gates
        i, f, o, g = gt[:, :H], gt[:, H : 2 * H], gt[:, 2 * H : 3 * H], gt[:, 3 * H :]
        tc = np.tanh(cache.c[1:])
        # local derivatives that do not depend on the backward recursion
        dc_from_h = o * (1.0 - tc * tc)
        dzo_from_h = tc * o * (1.0 - o)
        dzi_from_c = g * i * (1.0 - i)
        dzf_from_c = cache.c[:-1] * f * (1.0 - f)
        dzg_from_c = i * (1.0 - g * g)
        dZ = np.empty((T, 4 * H))
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        for t in range(T - 1, -1, -1):
            dh = dH[t] + dh_next
            dc = dc_next + dh * dc_from_h[t]
            dz = dZ[t]
            dz[:H] = dc * dzi_from_c[t]
            dz[H : 2 * H] = dc * dzf_from_c[t]
            dz[2 * H : 3 * H] = dh * dzo_from_h[t]
            dz[3 * H :] = dc * dzg_from_c[t]
            dc_next = dc * f[t]
            dh_next = dz @ Wh
        grads[f"{prefix}.{k}.W"] = np.concatenate([dZ.T @ cache.x, dZ.T @ cache.h[:-1]], axis=1)
        grads[f"{prefix}.{k}.b"] = dZ.sum(axis=0)
        d_below = dZ @ layer.W[:, :I]
    ordered = {name: grads[name] for name in net.parameters(prefix)}
    return ordered, d_below


# -- optimisation ----------------------------------------------------------


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.lr <= 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError(f"invalid Adam hyperparameters {self}")
        if self.eps <= 0 or self.clip_norm <= 0:
            raise ValueError(f"invalid Adam hyperparameters {self}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))


def clip_gradients(grads: Mapping[str, np.ndarray], clip_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Rescale so the global L2 norm is at most ``clip_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    scale = clip_norm / norm if norm > clip_norm else 1.0
    return {k: g * scale for k, g in grads.items()}, norm


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    hyper: AdamConfig,
) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if set(params) != set(grads):
        raise ValueError(f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}")
    for k in params:
        if params[k].shape != np.shape(grads[k]):
            raise ValueError(f"gradient shape {np.shape(grads[k])} != parameter shape {params[k].shape} for {k}")
    clipped, _ = clip_gradients(grads, hyper.clip_norm)
    if not all(np.all(np.isfinite(g)) for g in clipped.values()):
        raise FloatingPointError("non-finite gradient after clipping; aborting update")
    t = state.t + 1
    c1 = 1.0 - hyper.beta1**t
    c2 = 1.0 - hyper.beta2**t
    for k, p in params.items():
        g = clipped[k]
        m = state.m.get(k)
        v = state.v.get(k)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
        p -= hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        state.m[k] = m
        state.v[k] = v
    state.t = t
    return state


# -- finite-difference verification ------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    worst: list[tuple[str, tuple[int, ...], float, float, float]]  # name, index, analytic, numeric, rel


def rel_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    params: Mapping[str, np.ndarray],
    loss_and_grad: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
    eps: float = 1e-5,
    tol: float = 1e-4,
    n_worst: int = 5,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare analytic gradients with central differences over every coordinate.

    ``loss_and_grad`` must read the live arrays in ``params``; they are
    perturbed in place and restored.  It is called once for the analytic
    gradient and twice per coordinate for the loss alone.
    """
    _, analytic = loss_and_grad()
    analytic = {k: np.array(v, copy=True) for k, v in analytic.items()}
    rows = []
    for name, p in params.items():
        g = analytic[name].reshape(-1)
        flat = p.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_and_grad()[0]
            flat[j] = orig - eps
            down = loss_and_grad()[0]
            flat[j] = orig
            num = (up - down) / (2.0 * eps)
            a = float(g[j])
            r = rel_error(a, num, floor)
            rows.append((name, np.unravel_index(j, p.shape), a, num, r if np.isfinite(r) else np.inf))
    rows.sort(key=lambda r: -r[4])
    max_rel = rows[0][4] if rows else 0.0
    worst = [(n, tuple(int(i) for i in idx), a, num, r) for n, idx, a, num, r in rows[:n_worst]]
    return GradCheckReport(max_rel_err=max_rel, passed=bool(max_rel <= tol), n_checked=len(rows), worst=worst)


def stacked_from_tensors(tensors: Mapping[str, np.ndarray], prefix: str = "lstm") -> StackedLstm:
    """Rebuild a stack from ``<prefix>.<k>.W`` / ``.b`` entries."""
    layers = []
    k = 0
    while f"{prefix}.{k}.W" in tensors:
        layers.append(LstmLayerParams(tensors[f"{prefix}.{k}.W"].copy(), tensors[f"{prefix}.{k}.b"].copy()))
        k += 1
    return StackedLstm(layers)
