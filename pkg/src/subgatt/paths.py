"""Rooted simple paths: enumeration, per-epoch sampling, and path features.

A rooted path is a tuple of distinct node ids whose first element is the
root and whose consecutive elements are adjacent.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ResourceError
from .graphdata import Graph

RootedPath = tuple  # tuple[int, ...]
DEFAULT_PATH_BOUND = 10_000


def enumerate_rooted_paths(graph: Graph, root: int, T: int) -> list[RootedPath]:
    """All simple paths from ``root`` with 1..T nodes, DFS pre-order, neighbors ascending."""
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    if not 0 <= root < graph.n:
        raise ContractError(f"root {root} outside graph of {graph.n} nodes")
    nbrs = [graph.neighbors(v).tolist() for v in range(graph.n)]
    out = []

    def walk(path):
        out.append(tuple(path))
        if len(path) == T:
            return
        for u in nbrs[path[-1]]:
            if u not in path:
                path.append(u)
                walk(path)
                path.pop()

    walk([root])
    return out


def count_rooted_paths(graph: Graph, root: int, T: int = 4) -> int:
    """Closed-form growth estimate for T=4, evaluated exactly as the nested sum reads.

    d(i) * sum_j [ (d(j) - 1) * sum_{k in N(j) - {i}} |N(k) - {i, j}| ]

    For other T the number of enumerated paths with exactly T nodes is returned.
    This is diagnostic; see :func:`path_count_report`.
    """
    if T != 4:
        return sum(1 for p in enumerate_rooted_paths(graph, root, T) if len(p) == T)
    nb = [set(graph.neighbors(v).tolist()) for v in range(graph.n)]
    i = root
    total = 0
    for j in nb[i]:
        inner = sum(len(nb[k] - {i, j}) for k in nb[j] - {i})
        total += (len(nb[j]) - 1) * inner
    return len(nb[i]) * total


def path_count_report(graph: Graph, T: int = 4) -> list[dict]:
    """Per-node formula value versus the enumerated count of T-node paths."""
    rows = []
    for v in range(graph.n):
        enumerated = sum(1 for p in enumerate_rooted_paths(graph, v, T) if len(p) == T)
        formula = count_rooted_paths(graph, v, T)
        rows.append({"node": v, "formula": formula, "enumerated": enumerated,
                     "agrees": formula == enumerated})
    return rows


@dataclass
class EpochSample:
    """Per-node lists of sampled paths (a multiset per node)."""

    paths: list[list[RootedPath]]
    epoch: int
    seed: int

    @property
    def n(self) -> int:
        return len(self.paths)

    def flat(self):
        """(owner node per path, list of all paths) in node order."""
        owners, flat = [], []
        for v, ps in enumerate(self.paths):
            owners.extend([v] * len(ps))
            flat.extend(ps)
        return np.array(owners, dtype=int), flat


_candidates: "weakref.WeakKeyDictionary[Graph, dict]" = weakref.WeakKeyDictionary()


def candidate_paths(graph: Graph, T: int) -> list[list[RootedPath]]:
    """Enumerated candidates for every node, memoized per graph object."""
    per_graph = _candidates.setdefault(graph, {})
    if T not in per_graph:
        per_graph[T] = [enumerate_rooted_paths(graph, v, T) for v in range(graph.n)]
    return per_graph[T]


def node_rng(seed: int, epoch: int, node: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, stream, node])


def sample_epoch(graph: Graph, T: int, L: int, epoch: int, seed: int, stream: int = 0) -> EpochSample:
    """Draw L paths per node for one epoch.

    With at least L candidates a node gets L distinct paths drawn uniformly
    without replacement. With fewer, its candidates are shuffled once and
    cycled from the start until L are taken. ``stream`` separates graphs that
    share a seed and epoch.
    """
    if L < 1:
        raise ContractError(f"L must be >= 1, got {L}")
    out = []
    for v, cands in enumerate(candidate_paths(graph, T)):
        rng = node_rng(seed, epoch, v, stream)
        c = len(cands)
        if c >= L:
            idx = rng.choice(c, size=L, replace=False)
        else:
            order = rng.permutation(c)
            idx = order[np.arange(L) % c]
        out.append([cands[i] for i in idx])
    return EpochSample(out, epoch, seed)


def exhaustive_sample(graph: Graph, T: int, bound: int = DEFAULT_PATH_BOUND) -> EpochSample:
    """Every candidate path for every node, in enumeration order."""
    cands = candidate_paths(graph, T)
    for v, cs in enumerate(cands):
        if len(cs) > bound:
            raise ResourceError(f"node {v} has {len(cs)} candidate paths, above the bound {bound}")
    return EpochSample([list(cs) for cs in cands], epoch=-1, seed=-1)


def path_feature(path: RootedPath, features: np.ndarray, T: int) -> np.ndarray:
    """Concatenate the rows of ``features`` along the path, zero-padded to T*D."""
    if len(path) > T:
        raise ContractError(f"path of {len(path)} nodes exceeds T={T}")
    d = features.shape[1]
    out = np.zeros(T * d, dtype=features.dtype)
    for t, v in enumerate(path):
        out[t * d:(t + 1) * d] = features[v]
    return out
