"""Subgraph-attention and GIN layers on the autodiff tape."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import DimensionError
from .numcore import Value
from .paths import EpochSample


@dataclass
class SubGattParams:
    # One (W, a) pair per head; W is K_h x (T*D_in), a is K_h x 1.
    W: list[Value]
    a: list[Value]

    @property
    def heads(self) -> int:
        return len(self.W)

    @property
    def out_dim(self) -> int:
        return sum(w.shape[0] for w in self.W)

    def named(self, prefix: str) -> dict[str, Value]:
        out = {}
        for h, (w, a) in enumerate(zip(self.W, self.a)):
            out[f"{prefix}.head{h}.W"] = w
            out[f"{prefix}.head{h}.a"] = a
        return out


@dataclass
class GinParams:
    eps: Value
    W1: Value
    b1: Value
    W2: Value
    b2: Value

    @property
    def out_dim(self) -> int:
        return self.W2.shape[1]

    def named(self, prefix: str) -> dict[str, Value]:
        return {f"{prefix}.{k}": getattr(self, k) for k in ("eps", "W1", "b1", "W2", "b2")}


def init_subgatt(rng: np.random.Generator, in_dim: int, T: int, out_dim: int, heads: int = 1,
                 dtype=nc.DEFAULT_DTYPE) -> SubGattParams:
    if out_dim % heads:
        raise DimensionError(f"output dim {out_dim} not divisible by {heads} heads")
    k = out_dim // heads
    W = [nc.parameter(nc.glorot(rng, k, T * in_dim, dtype)) for _ in range(heads)]
    a = [nc.parameter(rng.uniform(-0.1, 0.1, size=(k, 1)).astype(dtype)) for _ in range(heads)]
    return SubGattParams(W, a)


def init_gin(rng: np.random.Generator, in_dim: int, hidden: int, out_dim: int,
             dtype=nc.DEFAULT_DTYPE) -> GinParams:
    return GinParams(
        eps=nc.parameter(np.zeros((1, 1), dtype=dtype)),
        W1=nc.parameter(nc.glorot(rng, in_dim, hidden, dtype)),
        b1=nc.parameter(np.zeros((1, hidden), dtype=dtype)),
        W2=nc.parameter(nc.glorot(rng, hidden, out_dim, dtype)),
        b2=nc.parameter(np.zeros((1, out_dim), dtype=dtype)),
    )


class SamplePlan:
    """Constant matrices that turn node features into path features for one sample.

    ``select[t]`` picks the t-th node of every path (zero row past the path's
    end), and ``mask`` is 0 where column p is one of row v's own paths and a
    large negative number elsewhere, so a row softmax of ``scores + mask``
    normalizes each node over exactly its own paths.
    """

    def __init__(self, sample: EpochSample, T: int, dtype=nc.DEFAULT_DTYPE):
        owners, flat = sample.flat()
        n, p = sample.n, len(flat)
        self.n, self.T, self.owners, self.paths = n, T, owners, flat
        self.select = []
        for t in range(T):
            s = np.zeros((p, n), dtype=dtype)
            for i, path in enumerate(flat):
                if t < len(path):
                    s[i, path[t]] = 1.0
            self.select.append(s)
        self.mask = np.full((n, p), nc.MASK_VALUE, dtype=dtype)
        self.mask[owners, np.arange(p)] = 0.0

    def path_features(self, x) -> Value:
        if isinstance(x, Value) and x.requires_grad:
            return nc.hconcat([nc.matmul(s, x) for s in self.select])
        xv = x.value if isinstance(x, Value) else np.asarray(x)
        return Value(np.hstack([s @ xv for s in self.select]))


def subgatt_forward(x, plan: SamplePlan, params: SubGattParams, activate_output: bool = True):
    """Attention over each node's sampled paths; returns (n x K_out, per-head n x P weights).

    Weights for node v live in the columns where ``plan.owners == v``.
    """
    xhat = plan.path_features(x)
    heads, alphas = [], []
    for W, a in zip(params.W, params.a):
        if W.shape[1] != xhat.shape[1]:
            raise DimensionError(f"subgatt: W expects {W.shape[1]} path inputs, got {xhat.shape[1]}")
        wx = nc.matmul(xhat, nc.transpose(W))
        scores = nc.leaky_relu(nc.matmul(wx, a))
        alpha = nc.row_softmax(nc.add(nc.transpose(scores), plan.mask))
        h = nc.matmul(alpha, wx)
        heads.append(nc.leaky_relu(h) if activate_output else h)
        alphas.append(alpha.value)
    out = heads[0] if len(heads) == 1 else nc.hconcat(heads)
    return out, alphas


def node_attention(plan: SamplePlan, alpha: np.ndarray, node: int):
    """(path, weight) pairs for one node from a per-head weight matrix."""
    cols = np.flatnonzero(plan.owners == node)
    return [(plan.paths[c], float(alpha[node, c])) for c in cols]


def gin_forward(a, x, params: GinParams) -> Value:
    """MLP((1 + eps) x_v + sum_u A[v, u] x_u), with leaky-ReLU inside the MLP."""
    a, x = nc.as_value(a), nc.as_value(x)
    if a.shape[0] != a.shape[1] or a.shape[1] != x.shape[0]:
        raise DimensionError(f"gin: adjacency {a.shape} incompatible with features {x.shape}")
    if params.W1.shape[0] != x.shape[1]:
        raise DimensionError(f"gin: MLP expects {params.W1.shape[0]} inputs, got {x.shape[1]}")
    agg = nc.add(nc.mul(x, nc.add(params.eps, 1.0)), nc.matmul(a, x))
    hidden = nc.leaky_relu(nc.add(nc.matmul(agg, params.W1), params.b1))
    return nc.add(nc.matmul(hidden, params.W2), params.b2)
