"""Non-local enhanced policy/value network.

Tensors are laid out as (batch, features, intersections). A "ConvNet" is
a stack of 1x1 convolutions, i.e. one affine map shared by every
intersection. A Dense Communication Layer (DCL) mixes features across
intersections: column i of the output is ``h_i + sum_j W[i, j] h_j``
with ``W = W_a @ W_b``.

Activation convention: embedding and local-branch outputs are ReLU'd;
residual branches (process ConvNets) and the final head are linear
except for the ReLU between stacked layers.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autograd as ag
from .autograd import Tensor

MIXING_MODES = ("learned", "softmax", "fixed", "none")


class ShapeError(ValueError):
    pass


def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


def convnet_forward(layers: list[tuple[Tensor, Tensor]], x: Tensor, out_activation: bool = False) -> Tensor:
    """Stacked 1x1 convolutions over (B, F, I) input, ReLU between layers."""
    x = ag.as_tensor(x)
    for k, (w, b) in enumerate(layers):
        if x.shape[-2] != w.shape[1]:
            raise ShapeError(f"layer {k} expects {w.shape[1]} input features, got {x.shape[-2]}")
        x = ag.matmul(w, x) + b
        if k < len(layers) - 1 or out_activation:
            x = ag.relu(x)
    return x


def dcl_forward(h: Tensor, w_a: Tensor | None, w_b: Tensor | None = None, mode: str = "learned",
                fixed_w: Tensor | np.ndarray | None = None) -> Tensor:
    """Residual cross-intersection mixing ``h + h @ W.T``."""
    h = ag.as_tensor(h)
    if mode == "none":
        return h
    w = effective_weights(w_a, w_b, mode, fixed_w)
    n = h.shape[-1]
    if w.shape != (n, n):
        raise ShapeError(f"mixing matrix has shape {w.shape}, expected ({n}, {n})")
    return h + ag.matmul(h, ag.transpose(w))


def effective_weights(w_a, w_b, mode: str = "learned", fixed_w=None) -> Tensor:
    if mode == "fixed":
        if fixed_w is None:
            raise ValueError("fixed mixing needs a weight matrix")
        return ag.as_tensor(fixed_w)
    if mode not in ("learned", "softmax"):
        raise ValueError(f"unknown mixing mode {mode!r}")
    w_a, w_b = ag.as_tensor(w_a), ag.as_tensor(w_b)
    if w_a.shape[1] != w_b.shape[0]:
        raise ShapeError(f"W_a {w_a.shape} and W_b {w_b.shape} do not chain")
    w = ag.matmul(w_a, w_b)
    return ag.softmax(w, axis=-1) if mode == "softmax" else w


def softmax_weight_mode(w_a, w_b) -> Tensor:
    return effective_weights(w_a, w_b, "softmax")


def build_fixed_hop_weights(network, n_hop: int) -> np.ndarray:
    """Row-normalised indicator of intersections within ``n_hop`` grid hops (self included)."""
    if n_hop not in (1, 2):
        raise ValueError("n_hop must be 1 or 2")
    n = network.n_intersections
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if network.hop_distance(i, j) <= n_hop:
                w[i, j] = 1.0
    return w / w.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class NetConfig:
    n_intersections: int
    in_dim: int = 72
    hidden: int = 64
    out_dim: int = 4
    m: int | None = None  # inner rank of W_a @ W_b; defaults to n_intersections
    mixing: str = "learned"
    rounds: int = 2
    final_gain: float = 0.01

    def __post_init__(self):
        if self.mixing not in MIXING_MODES:
            raise ValueError(f"mixing must be one of {MIXING_MODES}")
        if self.n_intersections < 1:
            raise ValueError("need at least one intersection")

    @property
    def rank(self) -> int:
        return self.n_intersections if self.m is None else self.m


class NLTSC:
    """Policy (out_dim = phases) or value (out_dim = 1) estimator."""

    def __init__(self, config: NetConfig, rng: np.random.Generator | int | None = None,
                 fixed_w: np.ndarray | None = None):
        self.config = config
        rng = np.random.default_rng(rng)
        c = config
        relu_gain = np.sqrt(2.0)
        self.params: dict[str, Tensor] = {}

        def linear(name: str, fan_in: int, fan_out: int, gain: float):
            self.params[f"{name}.weight"] = Tensor(orthogonal((fan_out, fan_in), gain, rng), True, f"{name}.weight")
            self.params[f"{name}.bias"] = Tensor(np.zeros((fan_out, 1)), True, f"{name}.bias")

        linear("embed.0", c.in_dim, c.hidden, relu_gain)
        for r in range(c.rounds):
            if c.mixing in ("learned", "softmax"):
                self.params[f"round{r}.dcl.W_a"] = Tensor(np.zeros((c.n_intersections, c.rank)), True, f"round{r}.dcl.W_a")
                self.params[f"round{r}.dcl.W_b"] = Tensor(
                    orthogonal((c.rank, c.n_intersections), 1.0, rng), True, f"round{r}.dcl.W_b")
            linear(f"round{r}.process.0", c.hidden, c.hidden, relu_gain)
            linear(f"round{r}.process.1", c.hidden, c.hidden, relu_gain)
        linear("local.0", c.in_dim, c.hidden, relu_gain)
        linear("local.1", c.hidden, c.hidden, relu_gain)
        linear("final.0", 2 * c.hidden, c.out_dim, c.final_gain)

        if c.mixing == "fixed":
            if fixed_w is None or np.shape(fixed_w) != (c.n_intersections, c.n_intersections):
                raise ShapeError("fixed mixing needs an (n, n) weight matrix")
            self.fixed_w = np.asarray(fixed_w, dtype=np.float64)
        else:
            self.fixed_w = None

    def _layers(self, prefix: str, n: int) -> list[tuple[Tensor, Tensor]]:
        return [(self.params[f"{prefix}.{k}.weight"], self.params[f"{prefix}.{k}.bias"]) for k in range(n)]

    def mixing_matrix(self, r: int) -> np.ndarray:
        c = self.config
        if c.mixing == "none":
            return np.zeros((c.n_intersections, c.n_intersections))
        if c.mixing == "fixed":
            return self.fixed_w.copy()
        return effective_weights(self.params[f"round{r}.dcl.W_a"].data,
                                 self.params[f"round{r}.dcl.W_b"].data, c.mixing).data

    def forward(self, obs) -> Tensor:
        """``obs`` is (F, I) or (B, F, I); returns (out_dim, I) or (B, out_dim, I)."""
        x = ag.as_tensor(obs)
        c = self.config
        if x.data.ndim not in (2, 3) or x.shape[-2:] != (c.in_dim, c.n_intersections):
            raise ShapeError(f"expected (..., {c.in_dim}, {c.n_intersections}) input, got {x.shape}")
        h = convnet_forward(self._layers("embed", 1), x, out_activation=True)
        for r in range(c.rounds):
            w_a = self.params.get(f"round{r}.dcl.W_a")
            w_b = self.params.get(f"round{r}.dcl.W_b")
            h2 = dcl_forward(h, w_a, w_b, c.mixing, self.fixed_w)
            h = h2 + convnet_forward(self._layers(f"round{r}.process", 2), h2)
        h_local = convnet_forward(self._layers("local", 2), x, out_activation=True)
        fused = ag.concat([h, h_local], axis=-2)
        return convnet_forward(self._layers("final", 1), fused)

    __call__ = forward

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (np.zeros_like(p.data) if p.grad is None else p.grad) for k, p in self.params.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            if state[k].shape != p.data.shape:
                raise ShapeError(f"{k}: checkpoint shape {state[k].shape} != model shape {p.data.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def manifest(self) -> dict:
        return {"config": asdict(self.config),
                "shapes": {k: list(p.data.shape) for k, p in self.params.items()}}
