"""Graphs, TU-format ingestion, synthetic clique data, and fold splitting."""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, IngestionError, ParseError, SplitError

DEFAULT_DEGREE_CAP = 136
_TOKEN_SPLIT = re.compile(r"[,\s]+")


@dataclass(frozen=True, eq=False)
class Graph:
    adjacency: np.ndarray
    features: np.ndarray
    label: int | None = None

    def __post_init__(self):
        a, x = self.adjacency, self.features
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ContractError(f"adjacency must be square, got {a.shape}")
        if x.ndim != 2 or x.shape[0] != a.shape[0]:
            raise ContractError(f"features have {x.shape[0]} rows for {a.shape[0]} nodes")

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[v])

    def degrees(self) -> np.ndarray:
        return (self.adjacency != 0).sum(axis=1)

    def permuted(self, perm) -> "Graph":
        """Relabel nodes so that new node ``i`` is old node ``perm[i]`` (i.e. P A P^T, P X)."""
        perm = np.asarray(perm)
        return Graph(self.adjacency[np.ix_(perm, perm)], self.features[perm], self.label)


@dataclass
class GraphDataset:
    graphs: list[Graph]
    num_classes: int
    name: str = "dataset"
    # Original label value for each class index, used when writing files back out.
    label_values: list[int] = field(default_factory=list)

    def __post_init__(self):
        dims = {g.features.shape[1] for g in self.graphs}
        if len(dims) > 1:
            raise ContractError(f"graphs disagree on feature dimension: {sorted(dims)}")
        for i, g in enumerate(self.graphs):
            if g.label is not None and not 0 <= g.label < self.num_classes:
                raise ContractError(f"graph {i} has label {g.label} outside [0, {self.num_classes})")
        if not self.label_values:
            self.label_values = list(range(self.num_classes))

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].features.shape[1] if self.graphs else 0

    @property
    def max_nodes(self) -> int:
        return max(g.n for g in self.graphs)

    @property
    def avg_nodes(self) -> float:
        return float(np.mean([g.n for g in self.graphs]))

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs])

    def subset(self, indices) -> "GraphDataset":
        return GraphDataset([self.graphs[i] for i in indices], self.num_classes, self.name, self.label_values)


# -- TU format -------------------------------------------------------------


def _read_rows(path: Path, kind=int):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = [t for t in _TOKEN_SPLIT.split(line) if t]
            try:
                rows.append([kind(t) for t in tokens])
            except ValueError:
                raise ParseError(f"{path.name}:{lineno}: non-numeric token in {line!r}") from None
    return rows


def _required(directory: Path, name: str, suffix: str) -> Path:
    path = directory / f"{name}_{suffix}.txt"
    if not path.is_file():
        raise IngestionError(f"missing mandatory file {path.name} in {directory}")
    return path


def load_tu_dataset(path, name: str | None = None, degree_cap: int = DEFAULT_DEGREE_CAP) -> GraphDataset:
    """Load a dataset in the TU Dortmund text format.

    Features come from ``_node_attributes.txt`` when present, else a one-hot of
    ``_node_labels.txt``, else one-hot node degrees.
    """
    directory = Path(path)
    name = name or directory.name
    indicator = [r[0] for r in _read_rows(_required(directory, name, "graph_indicator"))]
    graph_labels = [r[0] for r in _read_rows(_required(directory, name, "graph_labels"))]
    edge_path = _required(directory, name, "A")

    num_nodes = len(indicator)
    graph_ids = sorted(set(indicator))
    if graph_ids != list(range(1, len(graph_labels) + 1)):
        raise FormatError(f"{name}_graph_indicator.txt: graph ids do not match the {len(graph_labels)} labels")
    node_graph = np.array(indicator) - 1
    counts = np.bincount(node_graph, minlength=len(graph_labels))
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    if np.any(np.diff(node_graph) < 0):
        raise FormatError(f"{name}_graph_indicator.txt: nodes are not grouped by graph")

    adjs = [np.zeros((c, c)) for c in counts]
    with open(edge_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = [t for t in _TOKEN_SPLIT.split(line) if t]
            try:
                i, j = (int(t) - 1 for t in tokens)
            except ValueError:
                raise ParseError(f"{edge_path.name}:{lineno}: expected two integer node ids, got {line!r}") from None
            if not (0 <= i < num_nodes and 0 <= j < num_nodes):
                raise FormatError(f"{edge_path.name}:{lineno}: node id outside 1..{num_nodes}")
            g = node_graph[i]
            if node_graph[j] != g:
                raise FormatError(f"{edge_path.name}:{lineno}: edge ({i + 1}, {j + 1}) crosses graphs")
            if i != j:
                a, b = i - starts[g], j - starts[g]
                adjs[g][a, b] = adjs[g][b, a] = 1.0

    attr_path = directory / f"{name}_node_attributes.txt"
    label_path = directory / f"{name}_node_labels.txt"
    if attr_path.is_file():
        feats = np.array(_read_rows(attr_path, float), dtype=float)
    elif label_path.is_file():
        node_labels = [r[0] for r in _read_rows(label_path)]
        values = sorted(set(node_labels))
        lookup = {v: k for k, v in enumerate(values)}
        feats = np.zeros((len(node_labels), len(values)))
        feats[np.arange(len(node_labels)), [lookup[v] for v in node_labels]] = 1.0
    else:
        feats = None
    if feats is not None and feats.shape[0] != num_nodes:
        raise FormatError(f"{name}: {feats.shape[0]} feature rows for {num_nodes} nodes")

    values = sorted(set(graph_labels))
    lookup = {v: k for k, v in enumerate(values)}
    graphs = []
    for g, (start, c) in enumerate(zip(starts, counts)):
        x = feats[start:start + c] if feats is not None else np.zeros((c, 0))
        graphs.append(Graph(adjs[g], x, lookup[graph_labels[g]]))
    dataset = GraphDataset(graphs, len(values), name, values)
    if feats is None:
        dataset = synthesize_features(dataset, degree_cap)
    return dataset


def save_tu_dataset(dataset: GraphDataset, path, name: str | None = None, meta: dict | None = None) -> Path:
    """Write ``dataset`` in TU format; features always go to ``_node_attributes.txt``."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    name = name or dataset.name
    edges, indicator, attrs = [], [], []
    offset = 0
    for gi, g in enumerate(dataset.graphs, start=1):
        for i, j in zip(*np.nonzero(g.adjacency)):
            edges.append(f"{i + offset + 1}, {j + offset + 1}")
        indicator.extend([str(gi)] * g.n)
        attrs.extend(", ".join(repr(float(v)) for v in row) for row in g.features)
        offset += g.n
    labels = [str(dataset.label_values[g.label]) for g in dataset.graphs]
    for suffix, lines in (("A", edges), ("graph_indicator", indicator),
                          ("graph_labels", labels), ("node_attributes", attrs)):
        (directory / f"{name}_{suffix}.txt").write_text("".join(line + "\n" for line in lines))
    if meta is not None:
        (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return directory


# -- features and adjacency -------------------------------------------------


def synthesize_features(dataset: GraphDataset, max_degree_cap: int = DEFAULT_DEGREE_CAP) -> GraphDataset:
    """Replace node features with one-hot degree vectors, clipping degrees at the cap."""
    max_deg = max((int(g.degrees().max()) if g.n else 0) for g in dataset.graphs)
    dim = min(max_deg, max_degree_cap) + 1
    graphs = []
    for g in dataset.graphs:
        x = np.zeros((g.n, dim))
        x[np.arange(g.n), np.minimum(g.degrees(), max_degree_cap)] = 1.0
        graphs.append(Graph(g.adjacency, x, g.label))
    return GraphDataset(graphs, dataset.num_classes, dataset.name, dataset.label_values)


def normalized_adjacency(a: np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 for a non-negative square matrix."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"adjacency must be square, got {a.shape}")
    if np.any(a < 0):
        raise ContractError("adjacency has negative entries")
    at = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(at.sum(axis=1))
    return d[:, None] * at * d[None, :]


# -- synthetic clique dataset ----------------------------------------------

_PAIRS4 = list(itertools.combinations(range(4), 2))


def _connected(n, edges):
    reach, frontier = {0}, [0]
    while frontier:
        v = frontier.pop()
        for a, b in edges:
            for s, t in ((a, b), (b, a)):
                if s == v and t not in reach:
                    reach.add(t)
                    frontier.append(t)
    return len(reach) == n


# Connected graphs on 4 labelled nodes with 3 to 5 edges: every non-clique option.
_NON_CLIQUES = [e for k in (3, 4, 5) for e in itertools.combinations(_PAIRS4, k) if _connected(4, e)]


def generate_clique_dataset(seed: int, num_graphs: int = 50, positives: int = 25) -> GraphDataset:
    """Two 4-node communities joined by one edge; class 1 iff one community is a 4-clique."""
    rng = np.random.default_rng(seed)
    is_pos = np.zeros(num_graphs, dtype=bool)
    is_pos[:positives] = True
    rng.shuffle(is_pos)
    graphs = []
    for pos in is_pos:
        a = np.zeros((8, 8))
        clique_side = int(rng.integers(2)) if pos else -1
        for side in (0, 1):
            if side == clique_side:
                edges = _PAIRS4
            else:
                edges = _NON_CLIQUES[int(rng.integers(len(_NON_CLIQUES)))]
            for i, j in edges:
                a[4 * side + i, 4 * side + j] = a[4 * side + j, 4 * side + i] = 1.0
        u, v = int(rng.integers(4)), 4 + int(rng.integers(4))
        a[u, v] = a[v, u] = 1.0
        perm = rng.permutation(8)
        a = a[np.ix_(perm, perm)]
        graphs.append(Graph(a, np.zeros((8, 0)), int(pos)))
    dataset = GraphDataset(graphs, 2, f"clique-{seed}", [-1, 1])
    return synthesize_features(dataset)


def has_k_clique(adjacency: np.ndarray, k: int = 4) -> bool:
    """Brute force over all k-subsets."""
    n = adjacency.shape[0]
    for nodes in itertools.combinations(range(n), k):
        if all(adjacency[i, j] for i, j in itertools.combinations(nodes, 2)):
            return True
    return False


# -- folds -----------------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    fold_count: int
    assignments: np.ndarray

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def stratified_kfold(labels, k: int = 10, seed: int = 0) -> FoldSplit:
    """Shuffle each class, then deal graphs to folds round-robin across classes.

    ``labels`` may be a :class:`GraphDataset` or a label sequence.
    """
    if isinstance(labels, GraphDataset):
        labels = labels.labels
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    assignments = np.empty(len(labels), dtype=int)
    position = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) < k:
            raise SplitError(f"class {cls} has {len(members)} members, fewer than k={k}")
        for idx in rng.permutation(members):
            assignments[idx] = position % k
            position += 1
    return FoldSplit(k, assignments)
