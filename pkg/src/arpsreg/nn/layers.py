"""Parameter store, MLPs and multi-head attention built on :mod:`arpsreg.nn.tensor`."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import ShapeError, Tensor


class ParamStore:
    """Ordered mapping of parameter name -> leaf Tensor."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self._params.items())

    def load_state_dict(self, state) -> None:
        for k, v in state.items():
            if k not in self._params:
                raise KeyError(f"unexpected parameter {k!r}")
            if self._params[k].shape != np.shape(v):
                raise ShapeError(f"{k}: expected {self._params[k].shape}, got {np.shape(v)}")
            self._params[k].data = np.array(v, dtype=self.dtype)

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for k, v in self._params.items():
            out.add(k, v.data)
        return out


def kaiming_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_linear(store: ParamStore, name: str, d_in: int, d_out: int, rng, gain: float = 1.0) -> None:
    store.add(f"{name}.W", gain * kaiming_uniform(rng, d_in, (d_in, d_out)) / np.sqrt(2.0))
    store.add(f"{name}.b", np.zeros(d_out))


def linear(x: Tensor, store: ParamStore, name: str) -> Tensor:
    W = store[f"{name}.W"]
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"{name}: input feature dim {x.shape[-1]} != weight rows {W.shape[0]} ({x.shape} @ {W.shape})")
    return x @ W + store[f"{name}.b"]


def init_mlp(store: ParamStore, name: str, dims, rng) -> None:
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        init_linear(store, f"{name}.{i}", a, b, rng, gain=np.sqrt(2.0) if i < len(dims) - 2 else 1.0)


def mlp_forward(x: Tensor, store: ParamStore, name: str) -> Tensor:
    """Affine + ReLU layers; the last layer is affine only."""
    n_layers = 0
    while f"{name}.{n_layers}.W" in store:
        n_layers += 1
    if n_layers == 0:
        raise KeyError(f"no MLP named {name!r}")
    h = x
    for i in range(n_layers):
        h = linear(h, store, f"{name}.{i}")
        if i < n_layers - 1:
            h = tn.relu(h)
    return h


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int = 128
    n_heads: int = 4
    ffn_mult: int = 2
    residual_norm: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


def init_mha(store: ParamStore, name: str, cfg: AttentionConfig, rng) -> None:
    d, h, dk = cfg.d_model, cfg.n_heads, cfg.d_k
    # per-head W^Q, W^K, W^V stacked as (h, d_m, d_k)
    for proj in ("Wq", "Wk", "Wv"):
        store.add(f"{name}.{proj}", kaiming_uniform(rng, d, (h, d, dk)) / np.sqrt(2.0))
    store.add(f"{name}.Wo", kaiming_uniform(rng, h * dk, (h * dk, d)) / np.sqrt(2.0))
    init_mlp(store, f"{name}.ffn", [d, cfg.ffn_mult * d, d], rng)
    if cfg.residual_norm:
        for ln in ("ln1", "ln2"):
            store.add(f"{name}.{ln}.g", np.ones(d))
            store.add(f"{name}.{ln}.b", np.zeros(d))


def attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """softmax(q k^T / sqrt(d_k)) v over the last two axes."""
    dk = q.shape[-1]
    logits = (q @ k.T) * (1.0 / np.sqrt(dk))
    w = tn.softmax(logits, axis=-1)
    out = w @ v
    return (out, w) if return_weights else out


def heads_forward(X: Tensor, Y: Tensor, Z: Tensor, store: ParamStore, name: str, return_weights: bool = False):
    """Concatenated head outputs projected by W^O, shape (..., N, d_m)."""
    if not (X.shape[-1] == Y.shape[-1] == Z.shape[-1]):
        raise ShapeError(f"{name}: feature dims differ: {X.shape}, {Y.shape}, {Z.shape}")
    if Y.shape[-2] != Z.shape[-2]:
        raise ShapeError(f"{name}: key/value lengths differ: {Y.shape} vs {Z.shape}")
    Wq, Wk, Wv = store[f"{name}.Wq"], store[f"{name}.Wk"], store[f"{name}.Wv"]
    h, dm, dk = Wq.shape
    if X.shape[-1] != dm:
        raise ShapeError(f"{name}: inputs have d_m={X.shape[-1]}, weights expect {dm}")

    def split(T, W):
        # (..., N, d_m) -> (..., 1, N, d_m) @ (h, d_m, d_k) -> (..., h, N, d_k)
        return tn.reshape(T, T.shape[:-2] + (1,) + T.shape[-2:]) @ W

    out, weights = attention(split(X, Wq), split(Y, Wk), split(Z, Wv), return_weights=True)
    # (..., h, N, d_k) -> (..., N, h * d_k)
    out = tn.swapaxes(out, -3, -2)
    out = tn.reshape(out, out.shape[:-2] + (h * dk,))
    proj = out @ store[f"{name}.Wo"]
    return (proj, weights) if return_weights else proj


def mha_forward(X: Tensor, Y: Tensor, Z: Tensor, store: ParamStore, name: str, residual_norm: bool = True) -> Tensor:
    """Multi-head attention block followed by a position-wise FFN.

    With ``residual_norm`` both sub-blocks are wrapped as ``LN(x + f(x))``;
    the residual stream is the query input ``X``.
    """
    a = heads_forward(X, Y, Z, store, name)
    if residual_norm:
        a = tn.layer_norm(X + a, store[f"{name}.ln1.g"], store[f"{name}.ln1.b"])
        return tn.layer_norm(a + mlp_forward(a, store, f"{name}.ffn"), store[f"{name}.ln2.g"], store[f"{name}.ln2.b"])
    return mlp_forward(a, store, f"{name}.ffn")
