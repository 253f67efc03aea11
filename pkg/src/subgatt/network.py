"""The hierarchical network: level graphs, intra/inter-level attention, classifier."""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .errors import ConfigError, ContractError, DimensionError
from .graphdata import Graph
from .layers import (GinParams, SamplePlan, SubGattParams, gin_forward, init_gin, init_subgatt,
                     subgatt_forward)
from .numcore import Value
from .paths import DEFAULT_PATH_BOUND, exhaustive_sample, sample_epoch

CHECKPOINT_VERSION = 1
MODES = ("train", "eval", "exhaustive")
# Epoch index reserved for evaluation-time sampling so it never collides with training epochs.
EVAL_EPOCH = 2**31 - 1


@dataclass
class NetworkConfig:
    R: int = 3
    gamma: float = 0.5
    T: int = 3
    L: int = 12
    K: int = 128
    heads: int = 1
    subgatt_layers: int = 1
    dropout: float = 0.1
    seed: int = 0
    # Ablations: "gin" swaps the level-1 SubGatt layers for GIN; level_attention=False
    # drops intra/inter-level attention and reads out from a single-node last level.
    level1: str = "subgatt"
    level_attention: bool = True
    l2_normalize: bool = True
    dtype: str = "float64"
    path_bound: int = DEFAULT_PATH_BOUND

    def __post_init__(self):
        if self.R < 2:
            raise ConfigError(f"R must be >= 2, got {self.R}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.T < 1 or self.L < 1 or self.K < 1 or self.heads < 1 or self.subgatt_layers < 1:
            raise ConfigError("T, L, K, heads and subgatt_layers must all be positive")
        if self.K % self.heads:
            raise ConfigError(f"K={self.K} is not divisible by heads={self.heads}")
        if self.level1 not in ("subgatt", "gin"):
            raise ConfigError(f"level1 must be 'subgatt' or 'gin', got {self.level1!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def derive_level_sizes(config: NetworkConfig, max_nodes: int) -> list[int]:
    """Node counts N_2..N_R, anchored to the largest graph in the dataset."""
    sizes = [max(2, _round_half_up(config.gamma * max_nodes))]
    for _ in range(config.R - 2):
        nxt = max(1, _round_half_up(config.gamma * sizes[-1]))
        if nxt >= sizes[-1]:
            nxt = sizes[-1] - 1
        sizes.append(nxt)
    if not config.level_attention:
        sizes[-1] = 1
    if any(s < 1 for s in sizes) or any(a <= b for a, b in zip(sizes, sizes[1:])):
        raise ConfigError(f"derived level sizes {sizes} are not positive and strictly decreasing")
    return sizes


def build_next_level(a, z, p):
    """Coarsen with an assignment matrix: (P^T A P, P^T Z)."""
    a, z, p = nc.as_value(a), nc.as_value(z), nc.as_value(p)
    if a.shape[0] != p.shape[0] or z.shape[0] != p.shape[0]:
        raise DimensionError(f"build_next_level: A {a.shape}, Z {z.shape}, P {p.shape}")
    pt = nc.transpose(p)
    return nc.matmul(nc.matmul(pt, a), p), nc.matmul(pt, z)


def intra_level_attention(a, x, theta):
    """Node importance within one level graph; returns (level vector K x 1, weights N x 1)."""
    a, x = nc.as_value(a), nc.as_value(x)
    if x.shape[1] != theta.shape[0]:
        raise DimensionError(f"intra-level attention: features {x.shape}, theta {theta.shape}")
    e = nc.col_softmax(nc.matmul(nc.sym_norm_adj(a), nc.matvec(x, theta)))
    return nc.matvec(nc.transpose(x), e), e


def inter_level_attention(x_inter, theta_tilde):
    """Level importance; ``x_inter`` is (R-1) x K. Returns (graph vector K x 1, weights)."""
    x_inter = nc.as_value(x_inter)
    if x_inter.shape[1] != theta_tilde.shape[0]:
        raise DimensionError(f"inter-level attention: levels {x_inter.shape}, theta {theta_tilde.shape}")
    e = nc.col_softmax(nc.matvec(x_inter, theta_tilde))
    return nc.matvec(nc.transpose(x_inter), e), e


@dataclass
class ForwardResult:
    logits: Value
    graph_vector: Value
    diagnostics: dict | None = None


@dataclass
class Diagnostics:
    plan: SamplePlan | None
    alphas: list[np.ndarray]
    assignments: list[np.ndarray] = field(default_factory=list)
    adjacencies: list[np.ndarray] = field(default_factory=list)
    level_weights: list[np.ndarray] = field(default_factory=list)
    inter_weights: np.ndarray | None = None


class SubGattPool:
    """Trainable parameters plus the forward pass for one dataset's shapes."""

    def __init__(self, config: NetworkConfig, feature_dim: int, num_classes: int, level_sizes: list[int]):
        if len(level_sizes) != config.R - 1:
            raise ConfigError(f"need {config.R - 1} level sizes, got {level_sizes}")
        self.config = config
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.level_sizes = list(level_sizes)
        rng = np.random.default_rng(config.seed)
        dt = config.np_dtype
        K, T, H, D = config.K, config.T, config.heads, feature_dim

        if config.level1 == "subgatt":
            dims = [D] + [K] * config.subgatt_layers
            self.embed1 = [init_subgatt(rng, dims[i], T, K, H, dt) for i in range(config.subgatt_layers)]
            self.pool1 = [init_subgatt(rng, dims[i], T, K, H, dt) for i in range(config.subgatt_layers - 1)]
            # The final pooling layer emits one logit per next-level node; heads would split it unevenly.
            self.pool1.append(init_subgatt(rng, dims[config.subgatt_layers - 1], T, level_sizes[0], 1, dt))
        else:
            self.embed1 = [init_gin(rng, D, K, K, dt)]
            self.pool1 = [init_gin(rng, D, K, level_sizes[0], dt)]
        self.gin_embed = [init_gin(rng, K, K, K, dt) for _ in level_sizes[:-1]]
        self.gin_pool = [init_gin(rng, K, K, n, dt) for n in level_sizes[1:]]
        self.theta = nc.parameter(rng.uniform(-0.1, 0.1, size=(K, 1)).astype(dt))
        self.theta_tilde = nc.parameter(rng.uniform(-0.1, 0.1, size=(K, 1)).astype(dt))
        self.W_out = nc.parameter(nc.glorot(rng, K, num_classes, dt))
        self.b_out = nc.parameter(np.zeros((1, num_classes), dtype=dt))
        self._exhaustive_plans: "weakref.WeakKeyDictionary[Graph, SamplePlan]" = weakref.WeakKeyDictionary()

    # -- parameters ---------------------------------------------------------

    @property
    def params(self) -> dict[str, Value]:
        out = {}
        for i, p in enumerate(self.embed1):
            out.update(p.named(f"level1_embed.{i}"))
        for i, p in enumerate(self.pool1):
            out.update(p.named(f"level1_pool.{i}"))
        for r, p in enumerate(self.gin_embed, start=2):
            out.update(p.named(f"gin{r}_embed"))
        for r, p in enumerate(self.gin_pool, start=2):
            out.update(p.named(f"gin{r}_pool"))
        out["theta"] = self.theta
        out["theta_tilde"] = self.theta_tilde
        out["classifier.W"] = self.W_out
        out["classifier.b"] = self.b_out
        return out

    def get_state(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.params
        if set(state) != set(params):
            raise ContractError("parameter names do not match this network")
        for k, v in state.items():
            if params[k].shape != np.shape(v):
                raise DimensionError(f"{k}: expected {params[k].shape}, got {np.shape(v)}")
            params[k].value[...] = v

    # -- forward ------------------------------------------------------------

    def plan_for(self, graph: Graph, mode: str, epoch: int = 0, stream: int = 0) -> SamplePlan | None:
        cfg = self.config
        if cfg.level1 != "subgatt":
            return None
        if mode == "exhaustive":
            plan = self._exhaustive_plans.get(graph)
            if plan is None:
                plan = SamplePlan(exhaustive_sample(graph, cfg.T, cfg.path_bound), cfg.T, cfg.np_dtype)
                self._exhaustive_plans[graph] = plan
            return plan
        ep = epoch if mode == "train" else EVAL_EPOCH
        return SamplePlan(sample_epoch(graph, cfg.T, cfg.L, ep, cfg.seed, stream), cfg.T, cfg.np_dtype)

    def forward(self, graph: Graph, mode: str = "eval", epoch: int = 0, stream: int = 0,
                rng: np.random.Generator | None = None, diagnostics: bool = False,
                check: bool = False, plan: SamplePlan | None = None) -> ForwardResult:
        """Class logits (1 x C) for one graph.

        ``mode`` is "train" (fresh per-epoch sample, dropout on), "eval" (fixed
        evaluation sample) or "exhaustive" (all candidate paths, fully
        deterministic). ``check`` verifies the stochasticity contracts.
        """
        if mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
        cfg = self.config
        if graph.features.shape[1] != self.feature_dim:
            raise DimensionError(f"graph has {graph.features.shape[1]} features, network expects {self.feature_dim}")
        dt = cfg.np_dtype
        a1 = Value(graph.adjacency.astype(dt))
        x1 = Value(graph.features.astype(dt))
        norm = nc.l2_normalize_rows if cfg.l2_normalize else (lambda v: v)

        alphas = []
        if cfg.level1 == "subgatt":
            if plan is None:
                plan = self.plan_for(graph, mode, epoch, stream)
            z = x1
            for layer in self.embed1:
                z, al = subgatt_forward(z, plan, layer)
                z = norm(z)
                alphas.append(al)
            s = x1
            for layer in self.pool1[:-1]:
                s, _ = subgatt_forward(s, plan, layer)
                s = norm(s)
            s, _ = subgatt_forward(s, plan, self.pool1[-1])
        else:
            plan = None
            z = norm(gin_forward(a1, x1, self.embed1[0]))
            s = gin_forward(a1, x1, self.pool1[0])
        p = nc.row_softmax(s)

        assignments, adjs = [p], [a1]
        a, x = build_next_level(a1, z, p)
        levels = [(a, x)]
        adjs.append(a)
        for emb, pool in zip(self.gin_embed, self.gin_pool):
            z = norm(gin_forward(a, x, emb))
            p = nc.row_softmax(gin_forward(a, x, pool))
            assignments.append(p)
            a, x = build_next_level(a, z, p)
            levels.append((a, x))
            adjs.append(a)

        level_weights, inter = [], None
        if cfg.level_attention:
            vecs = []
            for a_r, x_r in levels:
                v, e = intra_level_attention(a_r, x_r, self.theta)
                vecs.append(v)
                level_weights.append(e.value)
            x_inter = nc.transpose(nc.hconcat(vecs))
            xg, e_t = inter_level_attention(x_inter, self.theta_tilde)
            inter = e_t.value
        else:
            xg = nc.transpose(levels[-1][1])

        h = nc.dropout(xg, cfg.dropout, rng, training=(mode == "train"))
        logits = nc.add(nc.matmul(nc.transpose(h), self.W_out), self.b_out)

        diag = None
        if diagnostics or check:
            diag = Diagnostics(plan, alphas, [q.value for q in assignments], [m.value for m in adjs],
                               level_weights, inter)
            if check:
                verify_contracts(diag)
        return ForwardResult(logits, xg, diag if diagnostics else None)


def _is_probability(v: np.ndarray, axis: int, tol: float) -> bool:
    return bool(np.all(v >= 0) and np.all(np.abs(v.sum(axis=axis) - 1.0) <= tol))


def verify_contracts(diag: Diagnostics, tol: float = 1e-9, mass_tol: float = 1e-6) -> None:
    """Raise ContractError unless every assignment and attention vector is stochastic."""
    for r, p in enumerate(diag.assignments, start=1):
        if not _is_probability(p, 1, tol):
            raise ContractError(f"P_{r} is not row-stochastic")
    for r, (a, b) in enumerate(zip(diag.adjacencies, diag.adjacencies[1:]), start=1):
        if abs(a.sum() - b.sum()) > mass_tol:
            raise ContractError(f"adjacency mass changed between levels {r} and {r + 1}")
        if not np.allclose(b, b.T, rtol=0, atol=tol) or np.any(b < -1e-12):
            raise ContractError(f"A_{r + 1} is not symmetric and non-negative")
    if diag.plan is not None:
        for layer in diag.alphas:
            for alpha in layer:
                if not _is_probability(alpha, 1, tol):
                    raise ContractError("subgraph attention weights are not normalized")
    for r, e in enumerate(diag.level_weights, start=2):
        if not _is_probability(e, 0, tol):
            raise ContractError(f"intra-level weights of level {r} are not normalized")
    if diag.inter_weights is not None and not _is_probability(diag.inter_weights, 0, tol):
        raise ContractError("inter-level weights are not normalized")


def parameter_count(model: SubGattPool) -> tuple[int, dict[str, int]]:
    """Total trainable scalars and a per-component breakdown."""
    breakdown: dict[str, int] = {}
    for name, v in model.params.items():
        component = name.split(".")[0]
        breakdown[component] = breakdown.get(component, 0) + int(v.value.size)
    return sum(breakdown.values()), breakdown


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(path, model: SubGattPool, seed: int, epoch: int) -> Path:
    path = Path(path)
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": {**asdict(model.config), "feature_dim": model.feature_dim,
                   "num_classes": model.num_classes, "level_sizes": model.level_sizes},
        "params": {k: {"shape": list(v.shape), "data": v.value.ravel().tolist()}
                   for k, v in model.params.items()},
        "seed": seed,
        "epoch": epoch,
    }
    path.write_text(json.dumps(payload) + "\n")
    return path


def load_checkpoint(path) -> tuple[SubGattPool, dict]:
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {payload.get('version')!r}")
    cfg = dict(payload["config"])
    feature_dim = cfg.pop("feature_dim")
    num_classes = cfg.pop("num_classes")
    level_sizes = cfg.pop("level_sizes")
    model = SubGattPool(NetworkConfig(**cfg), feature_dim, num_classes, level_sizes)
    dt = model.config.np_dtype
    model.set_state({k: np.array(v["data"], dtype=dt).reshape(v["shape"]) for k, v in payload["params"].items()})
    return model, {"seed": payload["seed"], "epoch": payload["epoch"]}
