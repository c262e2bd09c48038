"""Small networks built on :mod:`mmgsim.autodiff`: dense layers, an MLP and the
Mixed-Attention regressor used for device curves and centralized critics."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor


def _act(name: str):
    return {"tanh": ad.tanh, "relu": ad.relu, "sigmoid": ad.sigmoid, None: None}[name]


class Linear:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, rng: np.random.Generator,
                 scale: Optional[float] = None):
        bound = scale if scale is not None else np.sqrt(6.0 / (n_in + n_out))
        self.W = store.add(f"{name}.W", rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.b = store.add(f"{name}.b", np.zeros(n_out))
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.W), self.b)


class MLP:
    """Dense stack; ``sizes`` includes input and output widths."""

    def __init__(self, store: ParamStore, name: str, sizes: Sequence[int], rng: np.random.Generator,
                 act: str = "tanh", out_scale: Optional[float] = None):
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            self.layers.append(Linear(store, f"{name}.l{i}", a, b, rng,
                                      scale=out_scale if last else None))
        self.act = _act(act)
        self.sizes = list(sizes)

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.act(x)
        return x


class MixedAttentionNet:
    """Gated regressor: head(gate(x) * x).

    The gate fuses three views of the input feature vector: a dense branch, a
    1-D convolution branch over neighbouring features, and the raw input.  The
    three are stacked as channels, mixed by a 1x1 convolution and squashed by a
    sigmoid, giving one weight per input feature.
    """

    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, rng: np.random.Generator,
                 hidden: int = 64, depth: int = 2, act: str = "tanh", out_scale: Optional[float] = None):
        self.n_in = n_in
        self.fc = Linear(store, f"{name}.att_fc", n_in, n_in, rng)
        self.conv_w = store.add(f"{name}.att_conv.w", rng.uniform(-0.5, 0.5, size=(1, 1, 3)))
        self.conv_b = store.add(f"{name}.att_conv.b", np.zeros(1))
        self.fuse_w = store.add(f"{name}.att_fuse.w", rng.uniform(-0.5, 0.5, size=(1, 3, 1)))
        self.fuse_b = store.add(f"{name}.att_fuse.b", np.zeros(1))
        self.head = MLP(store, f"{name}.head", [n_in] + [hidden] * depth + [n_out], rng, act=act,
                        out_scale=out_scale)

    def gate(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        d = self.n_in
        fc = ad.tanh(self.fc(x))                                            # (N, D)
        xc = ad.reshape(x, (n, 1, d))
        conv = ad.tanh(ad.conv1d(xc, self.conv_w, self.conv_b, padding=1))  # (N, 1, D)
        stacked = ad.concat([ad.reshape(fc, (n, 1, d)), conv, xc], axis=1)  # (N, 3, D)
        fused = ad.conv1d(stacked, self.fuse_w, self.fuse_b)                # (N, 1, D)
        return ad.sigmoid(ad.reshape(fused, (n, d)))

    def __call__(self, x: Tensor, gate_override=None) -> Tensor:
        g = self.gate(x) if gate_override is None else ad.as_tensor(gate_override)
        return self.head(ad.mul(g, x))


def build_net(kind: str, store: ParamStore, name: str, n_in: int, n_out: int, rng: np.random.Generator,
              hidden: int = 64, depth: int = 2, act: str = "tanh"):
    if kind == "mixed":
        return MixedAttentionNet(store, name, n_in, n_out, rng, hidden=hidden, depth=depth, act=act)
    if kind == "mlp":
        return MLP(store, name, [n_in] + [hidden] * depth + [n_out], rng, act=act)
    raise ValueError(f"unknown net kind {kind!r}; expected 'mixed' or 'mlp'")
