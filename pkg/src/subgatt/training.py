"""Training, cross-validation, embedding export, k-means++ and clustering accuracy."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import numcore as nc
from .errors import ContractError, NumericalError
from .graphdata import GraphDataset, stratified_kfold
from .layers import node_attention
from .network import NetworkConfig, SubGattPool, derive_level_sizes

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 0.001
    patience: int = 50
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ContractError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


@dataclass
class TrainResult:
    model: SubGattPool
    curves: list[dict]
    initial_loss: float
    best_epoch: int
    epochs_ran: int


@dataclass
class CvResult:
    accuracies: list[float]
    epochs_ran: list[int]
    curves: list[list[dict]] = field(default_factory=list)
    # Per fold: (trained model, test indices); only filled when requested.
    models: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        # Population standard deviation over folds.
        return float(np.std(self.accuracies))


def _predict(model: SubGattPool, dataset: GraphDataset, indices, mode="eval"):
    losses, correct = [], 0
    for i in indices:
        g = dataset.graphs[i]
        logits = model.forward(g, mode=mode, stream=int(i)).logits
        losses.append(nc.softmax_cross_entropy(logits, [g.label]).value[0, 0])
        correct += int(np.argmax(logits.value[0]) == g.label)
    n = max(len(indices), 1)
    return float(np.sum(losses) / n), correct / n


def _holdout(labels, indices, fraction, rng):
    """Split ``indices`` into (train, validation), taking ``fraction`` of each class."""
    if fraction <= 0:
        return np.asarray(indices), np.array([], dtype=int)
    val = []
    for cls in np.unique(labels[indices]):
        members = rng.permutation([i for i in indices if labels[i] == cls])
        take = int(round(fraction * len(members)))
        val.extend(members[:take].tolist())
    val_set = set(val)
    return np.array([i for i in indices if i not in val_set]), np.array(sorted(val))


def train(dataset: GraphDataset, net_config: NetworkConfig, train_config: TrainConfig,
          train_idx=None, level_sizes=None) -> TrainResult:
    """Minimize mean cross-entropy with Adam; returns the best-validation parameters.

    ``level_sizes`` defaults to sizes derived from ``dataset``; pass the
    full dataset's sizes when training on a fold.
    """
    labels = dataset.labels
    if np.any(labels == None):  # noqa: E711 - object array comparison
        raise ContractError("training needs every graph labelled")
    rng = np.random.default_rng(train_config.seed)
    indices = np.arange(len(dataset)) if train_idx is None else np.asarray(train_idx)
    fit_idx, val_idx = _holdout(labels, indices, train_config.val_fraction, rng)
    sizes = level_sizes or derive_level_sizes(net_config, dataset.max_nodes)
    model = SubGattPool(net_config, dataset.feature_dim, dataset.num_classes, sizes)
    params = model.params
    names = {id(v): k for k, v in params.items()}
    state = nc.AdamState(lr=train_config.lr)

    initial_loss, _ = _predict(model, dataset, fit_idx)
    best = (-1.0, math.inf)
    best_state, best_epoch, stale = model.get_state(), 0, 0
    curves = []
    epoch = 0
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(fit_idx)
        epoch_loss = 0.0
        for start in range(0, len(order), train_config.batch_size):
            batch = order[start:start + train_config.batch_size]
            acc: dict[str, np.ndarray] = {}
            for i in batch:
                g = dataset.graphs[i]
                out = model.forward(g, mode="train", epoch=epoch, stream=int(i), rng=rng)
                loss = nc.softmax_cross_entropy(out.logits, [g.label])
                value = loss.value[0, 0]
                if not np.isfinite(value):
                    raise NumericalError(f"non-finite loss at epoch {epoch}")
                epoch_loss += value
                for leaf, grad in nc.backward(loss).items():
                    name = names[id(leaf)]
                    acc[name] = acc[name] + grad if name in acc else grad
            nc.adam_step(params, {k: v / len(batch) for k, v in acc.items()}, state)
        row = {"epoch": epoch, "train_loss": epoch_loss / len(fit_idx)}
        if len(val_idx):
            val_loss, val_acc = _predict(model, dataset, val_idx)
            row.update(val_loss=val_loss, val_acc=val_acc)
            if (val_acc, -val_loss) > (best[0], -best[1]):
                best, best_state, best_epoch, stale = (val_acc, val_loss), model.get_state(), epoch, 0
            else:
                stale += 1
        curves.append(row)
        log.debug("epoch %d %s", epoch, row)
        if len(val_idx) and stale >= train_config.patience:
            break
    if len(val_idx):
        model.set_state(best_state)
    else:
        best_epoch = epoch
    return TrainResult(model, curves, initial_loss, best_epoch, epoch)


def evaluate(model: SubGattPool, dataset: GraphDataset, indices, mode: str = "eval") -> float:
    return _predict(model, dataset, indices, mode)[1]


def _run_fold(args):
    dataset, net_config, train_config, split, fold, sizes, keep = args
    cfg = replace(net_config, seed=net_config.seed + fold)
    tcfg = replace(train_config, seed=train_config.seed + fold)
    result = train(dataset, cfg, tcfg, split.train_indices(fold), sizes)
    acc = evaluate(result.model, dataset, split.test_indices(fold))
    model = (result.model, split.test_indices(fold)) if keep else None
    return acc, result.epochs_ran, result.curves, model


def cross_validate(dataset: GraphDataset, net_config: NetworkConfig, train_config: TrainConfig,
                   folds: int = 10, jobs: int = 1, keep_models: bool = False) -> CvResult:
    """Stratified k-fold: train on k-1 folds, report test accuracy on the held-out one."""
    split = stratified_kfold(dataset, folds, train_config.seed)
    sizes = derive_level_sizes(net_config, dataset.max_nodes)
    tasks = [(dataset, net_config, train_config, split, f, sizes, keep_models) for f in range(folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_fold, tasks))
    else:
        outcomes = []
        for f, task in enumerate(tasks):
            try:
                outcomes.append(_run_fold(task))
            except NumericalError as exc:
                raise NumericalError(f"fold {f}: {exc}") from exc
            log.info("fold %d accuracy %.4f", f, outcomes[-1][0])
    models = [o[3] for o in outcomes] if keep_models else []
    return CvResult([o[0] for o in outcomes], [o[1] for o in outcomes], [o[2] for o in outcomes], models)


def embed_graphs(dataset: GraphDataset, model: SubGattPool, mode: str = "eval") -> np.ndarray:
    """M x K matrix of graph vectors (dropout off)."""
    rows = [model.forward(g, mode=mode, stream=i).graph_vector.value[:, 0] for i, g in enumerate(dataset.graphs)]
    return np.vstack(rows)


# -- clustering ------------------------------------------------------------


def _kmeanspp_seed(x, k, rng):
    centers = [x[rng.integers(len(x))]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(len(x), p=d2 / total) if total > 0 else int(rng.integers(len(x)))
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(x, centers, max_iter=100, tol=1e-8):
    for _ in range(max_iter):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = dist.argmin(axis=1)
        new = centers.copy()
        for j in range(len(centers)):
            members = x[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol:
            break
    dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = dist.argmin(axis=1)
    return assign, float(dist[np.arange(len(x)), assign].sum())


def kmeanspp_cluster(embeddings, k: int, restarts: int = 10, seed: int = 0, normalize: bool = False) -> np.ndarray:
    """k-means++ seeding plus Lloyd iterations, best of ``restarts`` by inertia.

    ``normalize`` scales each row to unit length first, so clusters form by
    direction. Pooled graph vectors grow with graph size, and without this
    their magnitude can dominate the distances.
    """
    x = np.asarray(embeddings, dtype=float)
    if normalize:
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        x = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    if not 1 <= k <= len(x):
        raise ContractError(f"k={k} must be between 1 and the number of points ({len(x)})")
    rng = np.random.default_rng(seed)
    best, best_inertia = None, math.inf
    for _ in range(restarts):
        assign, inertia = _lloyd(x, _kmeanspp_seed(x, k, rng))
        if inertia < best_inertia:
            best, best_inertia = assign, inertia
    return best


def clustering_accuracy(assignments, labels) -> float:
    """Best agreement over one-to-one matchings of cluster ids to class labels."""
    pred, true = np.asarray(assignments), np.asarray(labels)
    if pred.shape != true.shape:
        raise ContractError(f"{len(pred)} assignments for {len(true)} labels")
    if len(true) == 0:
        return 1.0
    clusters, pi = np.unique(pred, return_inverse=True)
    classes, ti = np.unique(true, return_inverse=True)
    confusion = np.zeros((len(clusters), len(classes)), dtype=int)
    np.add.at(confusion, (pi, ti), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return float(confusion[rows, cols].sum() / len(true))


# -- attention inspection --------------------------------------------------


def attention_report(graph, model: SubGattPool, node: int, mode: str = "exhaustive",
                     epoch: int = 0, stream: int = 0) -> list[list[tuple[tuple, float]]]:
    """Per head, (path, weight) rows for ``node`` sorted by descending weight.

    Reports the first level-1 embedding layer. ``mode="train"`` with an epoch
    reproduces that epoch's sample.
    """
    if not 0 <= node < graph.n:
        raise ContractError(f"node {node} outside graph of {graph.n} nodes")
    if model.config.level1 != "subgatt":
        raise ContractError("attention reports need subgraph attention at level 1")
    plan = model.plan_for(graph, mode, epoch, stream)
    diag = model.forward(graph, mode="eval", plan=plan, diagnostics=True).diagnostics
    tables = []
    for alpha in diag.alphas[0]:
        rows = node_attention(plan, alpha, node)
        tables.append(sorted(rows, key=lambda r: (-r[1], r[0])))
    return tables
