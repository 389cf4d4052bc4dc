"""Partially input-convex potentials over a scalar transported variable.

A potential ``F(y, h)`` is convex in the scalar ``y`` for every context ``h``.
The context first passes through a small MLP (``u_0 = phi(h)``), then a tanh
context path ``u_{k+1} = tanh(A_k u_k + a_k)`` gates the convex path

    z_{k+1} = softplus(Wz_k (z_k * relu(B_k u_k + b_k))
                       + wy_k * y * (C_k . u_k + c_k) + D_k u_k + d_k)

with ``Wz_k >= 0`` and ``z_0 = 0``; the last layer is scalar and linear.
Because ``z_0 = 0`` the first layer carries no ``Wz``/gate parameters.

Derivatives are exact: the forward pass carries the tangent ``dz/dy`` next to
``z``, and :func:`backward` runs reverse mode through both, so losses that
contain ``dF/dy`` get exact parameter gradients (mixed second derivatives
included).
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from otcalib.rng import Xoshiro256
from otcalib.special import sigmoid, softplus


class PicnnError(ArithmeticError):
    """Non-finite value inside a potential evaluation."""


@dataclass
class PicnnConfig:
    input_dim: int
    hidden_dim_context: int = 32
    hidden_dim_convex: int = 32
    num_layers: int = 3
    embed_dims: tuple[int, ...] = (64, 32)
    activation_convex: str = "softplus"
    activation_context: str = "tanh"

    def __post_init__(self):
        self.embed_dims = tuple(int(w) for w in self.embed_dims)
        self.validate()

    def validate(self) -> None:
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        widths = (self.input_dim, self.hidden_dim_context, self.hidden_dim_convex)
        if min(widths) < 1 or not self.embed_dims or min(self.embed_dims) < 1:
            raise ValueError("all widths must be >= 1 and embed_dims non-empty")
        if self.activation_convex != "softplus":
            raise ValueError(f"unsupported convex activation {self.activation_convex!r}")
        if self.activation_context != "tanh":
            raise ValueError(f"unsupported context activation {self.activation_context!r}")

    def context_widths(self) -> list[int]:
        return [self.embed_dims[-1]] + [self.hidden_dim_context] * (self.num_layers - 1)

    def convex_widths(self) -> list[int]:
        return [self.hidden_dim_convex] * (self.num_layers - 1) + [1]

    def to_json(self) -> dict:
        d = asdict(self)
        d["embed_dims"] = list(self.embed_dims)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "PicnnConfig":
        return cls(**obj)


def parameter_shapes(config: PicnnConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes; the order is the canonical one."""
    shapes: dict[str, tuple[int, ...]] = {}
    prev = config.input_dim
    for j, width in enumerate(config.embed_dims):
        shapes[f"embed.{j}.weight"] = (width, prev)
        shapes[f"embed.{j}.bias"] = (width,)
        prev = width
    ctx = config.context_widths()
    for k in range(config.num_layers - 1):
        shapes[f"ctx.{k}.weight"] = (ctx[k + 1], ctx[k])
        shapes[f"ctx.{k}.bias"] = (ctx[k + 1],)
    out = config.convex_widths()
    for k in range(config.num_layers):
        if k > 0:
            shapes[f"cvx.{k}.wz"] = (out[k], out[k - 1])
            shapes[f"cvx.{k}.gate_weight"] = (out[k - 1], ctx[k])
            shapes[f"cvx.{k}.gate_bias"] = (out[k - 1],)
        shapes[f"cvx.{k}.wy"] = (out[k],)
        shapes[f"cvx.{k}.y_weight"] = (ctx[k],)
        shapes[f"cvx.{k}.y_bias"] = (1,)
        shapes[f"cvx.{k}.u_weight"] = (out[k], ctx[k])
        shapes[f"cvx.{k}.bias"] = (out[k],)
    return shapes


def is_bias(name: str) -> bool:
    return name.endswith("bias")


def is_nonnegative(name: str) -> bool:
    return name.endswith(".wz")


def _fans(name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 2:
        return shape[1], shape[0]
    if name.endswith(".wy"):
        return 1, shape[0]
    return shape[0], 1  # y_weight acts as a (1, ctx) row


@dataclass
class PicnnPotential:
    config: PicnnConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "PicnnPotential":
        return PicnnPotential(copy.deepcopy(self.config),
                              {k: v.copy() for k, v in self.params.items()})

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def value(self, y, hidden) -> np.ndarray:
        return forward(self, y, hidden)[0]

    def dy(self, y, hidden) -> np.ndarray:
        return forward(self, y, hidden)[1]

    def value_and_dy(self, y, hidden) -> tuple[np.ndarray, np.ndarray]:
        v, d, _ = forward(self, y, hidden)
        return v, d


def init_potential(config: PicnnConfig, seed: int) -> PicnnPotential:
    """Glorot-uniform weights, zero biases, nonnegative ``wz``."""
    config.validate()
    rng = Xoshiro256(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if is_bias(name):
            params[name] = np.zeros(shape)
            continue
        fan_in, fan_out = _fans(name, shape)
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        size = int(np.prod(shape))
        w = np.array([bound * (2.0 * rng.random() - 1.0) for _ in range(size)]).reshape(shape)
        if is_nonnegative(name):
            w = np.abs(w)
        params[name] = w
    return PicnnPotential(config, params)


def _check(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise PicnnError(f"non-finite value at {where}")


def _as_batch(y, hidden, input_dim: int) -> tuple[np.ndarray, np.ndarray]:
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    h = np.asarray(hidden, dtype=np.float64)
    if h.ndim == 1:
        h = np.broadcast_to(h, (y.shape[0], h.shape[0]))
    if h.shape[-1] != input_dim:
        raise ValueError(f"context dimension {h.shape[-1]} != expected {input_dim}")
    if y.shape[0] != h.shape[0]:
        if y.shape[0] == 1:
            y = np.broadcast_to(y, (h.shape[0],))
        else:
            raise ValueError("y and hidden batch sizes differ")
    return y, h


def embed_batch(pot: PicnnPotential, hidden: np.ndarray) -> tuple[np.ndarray, list]:
    p = pot.params
    n = len(pot.config.embed_dims)
    acts = [hidden]
    u = hidden
    for j in range(n):
        u = u @ p[f"embed.{j}.weight"].T + p[f"embed.{j}.bias"]
        if j < n - 1:
            u = np.tanh(u)
        acts.append(u)
    return u, acts


def embed_context(pot: PicnnPotential, h) -> np.ndarray:
    """``u_0`` for a single context vector."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1 or h.shape[0] != pot.config.input_dim:
        raise ValueError(f"context dimension {h.shape} != ({pot.config.input_dim},)")
    return embed_batch(pot, h[None, :])[0][0]


def forward(pot: PicnnPotential, y, hidden):
    """Batched evaluation. Returns ``(value, dvalue/dy, cache)``."""
    cfg = pot.config
    p = pot.params
    y, h = _as_batch(y, hidden, cfg.input_dim)
    u0, embed_acts = embed_batch(pot, h)
    us = [u0]
    for k in range(cfg.num_layers - 1):
        us.append(np.tanh(us[-1] @ p[f"ctx.{k}.weight"].T + p[f"ctx.{k}.bias"]))
    layers = []
    z = zt = None
    for k in range(cfg.num_layers):
        u = us[k]
        s = u @ p[f"cvx.{k}.y_weight"] + p[f"cvx.{k}.y_bias"][0]
        wy = p[f"cvx.{k}.wy"]
        pre = np.outer(y * s, wy) + u @ p[f"cvx.{k}.u_weight"].T + p[f"cvx.{k}.bias"]
        pre_t = np.outer(s, wy)
        rec = {"s": s, "z": z, "zt": zt}
        if k > 0:
            q = u @ p[f"cvx.{k}.gate_weight"].T + p[f"cvx.{k}.gate_bias"]
            gate = np.maximum(q, 0.0)
            wz = p[f"cvx.{k}.wz"]
            pre = pre + (z * gate) @ wz.T
            pre_t = pre_t + (zt * gate) @ wz.T
            rec["q"] = q
            rec["gate"] = gate
        rec["pre"] = pre
        rec["pre_t"] = pre_t
        _check(pre, f"layer {k}")
        _check(pre_t, f"layer {k} (derivative)")
        layers.append(rec)
        if k < cfg.num_layers - 1:
            sg = sigmoid(pre)
            z = softplus(pre)
            zt = sg * pre_t
            rec["sig"] = sg
    cache = {"y": y, "embed_acts": embed_acts, "us": us, "layers": layers}
    return layers[-1]["pre"][:, 0], layers[-1]["pre_t"][:, 0], cache


def backward(pot: PicnnPotential, cache, bar_value, bar_dy):
    """Reverse-mode pass for ``sum(bar_value * F + bar_dy * dF/dy)``.

    Returns ``(grads, bar_y)`` with one gradient array per parameter and the
    adjoint with respect to the transported inputs.
    """
    cfg = pot.config
    p = pot.params
    y = cache["y"]
    us = cache["us"]
    layers = cache["layers"]
    n = y.shape[0]
    grads: dict[str, np.ndarray] = {}
    bar_y = np.zeros(n)
    bar_us = [np.zeros_like(u) for u in us]

    P = np.broadcast_to(np.asarray(bar_value, dtype=np.float64), (n,))[:, None]
    Pt = np.broadcast_to(np.asarray(bar_dy, dtype=np.float64), (n,))[:, None]
    for k in range(cfg.num_layers - 1, -1, -1):
        rec = layers[k]
        u = us[k]
        s = rec["s"]
        wy = p[f"cvx.{k}.wy"]
        Pw = P @ wy
        Ptw = Pt @ wy
        grads[f"cvx.{k}.wy"] = (P * (y * s)[:, None]).sum(0) + (Pt * s[:, None]).sum(0)
        bar_s = Pw * y + Ptw
        bar_y += Pw * s
        grads[f"cvx.{k}.y_weight"] = bar_s @ u
        grads[f"cvx.{k}.y_bias"] = np.array([bar_s.sum()])
        grads[f"cvx.{k}.u_weight"] = P.T @ u
        grads[f"cvx.{k}.bias"] = P.sum(0)
        bar_u = np.outer(bar_s, p[f"cvx.{k}.y_weight"]) + P @ p[f"cvx.{k}.u_weight"]
        if k > 0:
            z, zt, gate = rec["z"], rec["zt"], rec["gate"]
            wz = p[f"cvx.{k}.wz"]
            grads[f"cvx.{k}.wz"] = P.T @ (z * gate) + Pt.T @ (zt * gate)
            bar_m = P @ wz
            bar_mt = Pt @ wz
            bar_q = (bar_m * z + bar_mt * zt) * (rec["q"] > 0)
            grads[f"cvx.{k}.gate_weight"] = bar_q.T @ u
            grads[f"cvx.{k}.gate_bias"] = bar_q.sum(0)
            bar_u += bar_q @ p[f"cvx.{k}.gate_weight"]
            bar_z = bar_m * gate
            bar_zt = bar_mt * gate
            below = layers[k - 1]
            sg = below["sig"]
            P = bar_z * sg + bar_zt * sg * (1.0 - sg) * below["pre_t"]
            Pt = bar_zt * sg
        bar_us[k] += bar_u

    for k in range(cfg.num_layers - 2, -1, -1):
        t = bar_us[k + 1] * (1.0 - us[k + 1] ** 2)
        grads[f"ctx.{k}.weight"] = t.T @ us[k]
        grads[f"ctx.{k}.bias"] = t.sum(0)
        bar_us[k] += t @ p[f"ctx.{k}.weight"]

    acts = cache["embed_acts"]
    n_embed = len(cfg.embed_dims)
    bar_out = bar_us[0]
    for j in range(n_embed - 1, -1, -1):
        bar_pre = bar_out if j == n_embed - 1 else bar_out * (1.0 - acts[j + 1] ** 2)
        grads[f"embed.{j}.weight"] = bar_pre.T @ acts[j]
        grads[f"embed.{j}.bias"] = bar_pre.sum(0)
        bar_out = bar_pre @ p[f"embed.{j}.weight"]

    ordered = {name: grads[name] for name in pot.params}
    for name, g in ordered.items():
        _check(g, f"gradient {name}")
    return ordered, bar_y


def potential_value(pot: PicnnPotential, y: float, h) -> float:
    return float(forward(pot, [y], np.asarray(h, dtype=np.float64)[None, :])[0][0])


def potential_dy(pot: PicnnPotential, y: float, h) -> float:
    return float(forward(pot, [y], np.asarray(h, dtype=np.float64)[None, :])[1][0])


def project_nonnegative(pot: PicnnPotential) -> None:
    """Clamp every ``wz`` entry at zero in place; other parameters untouched."""
    for name, w in pot.params.items():
        if is_nonnegative(name):
            w[w < 0.0] = 0.0


def dual_losses(pot_g, pot_f, x, y, hidden):
    """Loss values of the alternating dual objective.

    ``x`` are source samples and ``y`` target samples sharing contexts::

        loss_g = -mean[y * g'(y) - f(g'(y))]
        loss_f =  mean[f(x)] - mean[f(g'(y))]

    Works with any object exposing ``value_and_dy(y, hidden)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _, gd = pot_g.value_and_dy(y, hidden)
    f_at_gd, _ = pot_f.value_and_dy(gd, hidden)
    f_at_x, _ = pot_f.value_and_dy(x, hidden)
    loss_g = -float(np.mean(y * gd - f_at_gd))
    loss_f = float(np.mean(f_at_x) - np.mean(f_at_gd))
    return loss_f, loss_g


def loss_gradients(pot_g: PicnnPotential, pot_f: PicnnPotential, x, y, hidden, which: str):
    """Loss and exact parameter gradients for one player.

    ``which="loss_g"`` differentiates through ``g'(y)`` (second-order terms
    included) with respect to every parameter of ``g``; ``which="loss_f"``
    differentiates with respect to ``f`` only.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    hidden = np.asarray(hidden, dtype=np.float64)
    n = y.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    _, gd, g_cache = forward(pot_g, y, hidden)
    if which == "loss_g":
        f_at_gd, fd_at_gd, _ = forward(pot_f, gd, hidden)
        loss = -float(np.mean(y * gd - f_at_gd))
        grads, _ = backward(pot_g, g_cache, 0.0, -(y - fd_at_gd) / n)
    elif which == "loss_f":
        both = np.concatenate([x, gd])
        hh = np.concatenate([hidden, hidden]) if hidden.ndim == 2 else hidden
        fv, _, f_cache = forward(pot_f, both, hh)
        loss = float(np.mean(fv[:n]) - np.mean(fv[n:]))
        weights = np.concatenate([np.full(n, 1.0 / n), np.full(n, -1.0 / n)])
        grads, _ = backward(pot_f, f_cache, weights, 0.0)
    else:
        raise ValueError(f"which must be 'loss_f' or 'loss_g', got {which!r}")
    if not math.isfinite(loss):
        raise PicnnError(f"non-finite {which}")
    return loss, grads
