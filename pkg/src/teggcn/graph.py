"""Graph data model and structural statistics.

A :class:`Graph` is immutable once built. Everything downstream (normalized
adjacency, relative degrees, heterophily) is a pure function of it.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Raised when a graph cannot be constructed from the given inputs."""


class LabelSource(str, Enum):
    FULL_LABELS = "full_labels"
    TRAIN_PLUS_PREDICTIONS = "train_plus_predictions"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph with node features, labels and split masks.

    ``edges`` is an ``(2, 2M)`` integer array holding every undirected edge in
    both directions, sorted lexicographically by (source, target). Labels
    use ``-1`` for "unknown".
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    degrees: np.ndarray
    name: str = ""

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return self.edges.shape[1] // 2

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        known = self.labels[self.labels >= 0]
        return int(known.max()) + 1 if known.size else 0

    @property
    def src(self) -> np.ndarray:
        return self.edges[0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[1]

    @property
    def indptr(self) -> np.ndarray:
        """CSR row pointer matching the sorted edge list."""
        return np.concatenate(([0], np.cumsum(self.degrees)))

    def neighbors(self, i: int) -> np.ndarray:
        ptr = self.indptr
        return self.dst[ptr[i]:ptr[i + 1]]

    def adjacency(self, dtype=np.float64) -> sp.csr_matrix:
        n = self.num_nodes
        data = np.ones(self.edges.shape[1], dtype=dtype)
        return sp.csr_matrix((data, self.dst, self.indptr), shape=(n, n))

    def with_masks(self, train, val, test) -> "Graph":
        return build_graph(self.edges.T, self.num_nodes, self.features,
                           self.labels, (train, val, test), name=self.name)

    def same_as(self, other: "Graph") -> bool:
        """Bitwise equality of all contents."""
        if self.num_nodes != other.num_nodes:
            return False
        pairs = [(self.edges, other.edges), (self.features, other.features),
                 (self.labels, other.labels), (self.train_mask, other.train_mask),
                 (self.val_mask, other.val_mask), (self.test_mask, other.test_mask)]
        return all(a.shape == b.shape and a.dtype == b.dtype and np.array_equal(a, b)
                   for a, b in pairs)


def build_graph(edge_list, num_nodes: int, features=None, labels=None,
                masks: Optional[Sequence] = None, name: str = "") -> Graph:
    """Build an immutable :class:`Graph`.

    ``edge_list`` is any iterable of ``(u, v)`` pairs or an ``(M, 2)`` array.
    Edges are symmetrized and deduplicated, so the result does not depend on
    the order or multiplicity of the input pairs. Self-loops are rejected.
    """
    n = int(num_nodes)
    if n < 0:
        raise GraphError(f"num_nodes must be non-negative, got {n}")
    e = np.asarray(list(edge_list) if not isinstance(edge_list, np.ndarray) else edge_list,
                   dtype=np.int64)
    if e.size == 0:
        e = e.reshape(0, 2)
    if e.ndim != 2 or e.shape[1] != 2:
        raise GraphError(f"edge list must have shape (M, 2), got {e.shape}")
    bad = (e < 0) | (e >= n)
    if bad.any():
        row = int(np.argwhere(bad.any(axis=1))[0, 0])
        raise GraphError(f"edge {tuple(e[row])} has an endpoint outside [0, {n})")
    loops = e[:, 0] == e[:, 1]
    if loops.any():
        row = int(np.argwhere(loops)[0, 0])
        raise GraphError(f"self-loop {tuple(e[row])} in input; self-loops are added "
                         "only during normalization")

    both = np.concatenate([e, e[:, ::-1]], axis=0)
    both = np.unique(both, axis=0) if both.size else both
    edges = np.ascontiguousarray(both.T)
    degrees = np.bincount(edges[0], minlength=n).astype(np.int64)

    if features is None:
        features = np.zeros((n, 0))
    features = np.asarray(features)
    features = np.array(features, dtype=features.dtype if features.dtype.kind == "f"
                        else np.float64, copy=True)
    if features.ndim != 2 or features.shape[0] != n:
        raise GraphError(f"features must have {n} rows, got shape {features.shape}")

    labels = (np.full(n, -1, dtype=np.int64) if labels is None
              else np.array(labels, dtype=np.int64, copy=True))
    if labels.shape != (n,):
        raise GraphError(f"labels must have shape ({n},), got {labels.shape}")

    if masks is None:
        masks = (np.zeros(n, bool), np.zeros(n, bool), np.zeros(n, bool))
    train, val, test = (np.array(m, dtype=bool, copy=True) for m in masks)
    for m in (train, val, test):
        if m.shape != (n,):
            raise GraphError(f"masks must have shape ({n},), got {m.shape}")
    if (train & val).any() or (train & test).any() or (val & test).any():
        raise GraphError("train/val/test masks overlap")

    return Graph(n, _frozen(edges), _frozen(features), _frozen(labels), _frozen(train),
                 _frozen(val), _frozen(test), _frozen(degrees), name)


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """Symmetrically normalized adjacency ``D^-1/2 (A + I) D^-1/2``.

    ``edge_values`` holds the off-diagonal entries aligned with
    ``graph.edges``; ``diagonal`` holds ``1 / (d_i + 1)``. ``values`` is the
    assembled sparse matrix.
    """

    values: sp.csr_matrix
    edge_values: np.ndarray
    diagonal: np.ndarray
    variant: str = "with_self_loops"

    def dense(self) -> np.ndarray:
        return self.values.toarray()


def normalize_adjacency(g: Graph, self_loops: bool = True) -> NormalizedAdjacency:
    d = g.degrees.astype(np.float64) + (1.0 if self_loops else 0.0)
    inv_sqrt = np.zeros_like(d)
    nz = d > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(d[nz])
    edge_values = inv_sqrt[g.src] * inv_sqrt[g.dst]
    diagonal = inv_sqrt ** 2 if self_loops else np.zeros(g.num_nodes)
    off = sp.csr_matrix((edge_values, g.dst, g.indptr), shape=(g.num_nodes,) * 2)
    values = (off + sp.diags(diagonal)).tocsr() if self_loops else off
    values.sort_indices()
    variant = "with_self_loops" if self_loops else "plain"
    return NormalizedAdjacency(values, _frozen(edge_values), _frozen(diagonal), variant)


def relative_degrees(g: Graph) -> np.ndarray:
    """Mean over neighbors of ``sqrt((d_i + 1) / (d_j + 1))``.

    Isolated nodes get 1. On a regular graph every entry is exactly 1.
    """
    d1 = g.degrees.astype(np.float64) + 1.0
    r = np.sqrt(d1[g.src] / d1[g.dst])
    sums = np.bincount(g.src, weights=r, minlength=g.num_nodes)
    out = np.ones(g.num_nodes)
    nz = g.degrees > 0
    out[nz] = sums[nz] / g.degrees[nz]
    return out


@dataclass(frozen=True, eq=False)
class HeterophilyStats:
    per_node: np.ndarray
    homophily_level: float
    label_source: LabelSource


def node_heterophily(g: Graph, labels_view=None,
                     label_source: LabelSource | str = LabelSource.FULL_LABELS,
                     nodes=None) -> HeterophilyStats:
    """Fraction of each node's neighbors that carry a different label.

    ``labels_view`` defaults to ``g.labels``. Every node that is scored or is
    a neighbor of a scored node must have a label (``>= 0``). ``nodes``
    restricts scoring to a subset; unscored nodes get 0.
    """
    label_source = LabelSource(label_source)
    labels = np.asarray(g.labels if labels_view is None else labels_view, dtype=np.int64)
    if labels.shape != (g.num_nodes,):
        raise GraphError(f"labels_view must have shape ({g.num_nodes},)")
    scored = np.ones(g.num_nodes, bool)
    if nodes is not None:
        scored[:] = False
        scored[np.asarray(nodes, dtype=np.int64)] = True
    emask = scored[g.src]
    src, dst = g.src[emask], g.dst[emask]
    needed = np.zeros(g.num_nodes, bool)
    needed[src] = True
    needed[dst] = True
    missing = needed & (labels < 0)
    if missing.any():
        raise GraphError(f"missing label for node {int(np.flatnonzero(missing)[0])} "
                         f"under {label_source.value}")
    diff = (labels[src] != labels[dst]).astype(np.float64)
    counts = np.bincount(src, weights=diff, minlength=g.num_nodes)
    per_node = np.zeros(g.num_nodes)
    nz = (g.degrees > 0) & scored
    per_node[nz] = counts[nz] / g.degrees[nz]
    level = 1.0 - float(per_node[nz].mean()) if nz.any() else 1.0
    return HeterophilyStats(_frozen(per_node), level, label_source)


def edge_homophily(g: Graph, labels_view=None) -> float:
    """Fraction of edges joining same-label endpoints (alternative definition)."""
    labels = np.asarray(g.labels if labels_view is None else labels_view)
    if g.edges.shape[1] == 0:
        return 1.0
    return float(np.mean(labels[g.src] == labels[g.dst]))
