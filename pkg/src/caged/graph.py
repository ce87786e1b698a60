"""Bipartite interaction graph and the sparse aggregation matrix.

Nodes live in one index space: users ``0..M-1`` followed by items ``M..M+N-1``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .data import IndexedDataset


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    num_users: int
    num_items: int
    indptr: np.ndarray  # CSR row offsets over the unified node space
    indices: np.ndarray  # sorted neighbor lists

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    def item_node(self, i: int) -> int:
        return self.num_users + i

    @cached_property
    def item_degrees(self) -> np.ndarray:
        return self.degrees[self.num_users:]

    @cached_property
    def edge_rows(self) -> np.ndarray:
        """Row (center) index of each stored directed edge, aligned with ``indices``."""
        return np.repeat(np.arange(self.num_nodes), self.degrees)

    def user_item_sets(self) -> list[set[int]]:
        """Train items of every user, as item indices (not node indices)."""
        return [set((self.neighbors(u) - self.num_users).tolist()) for u in range(self.num_users)]


@dataclass(frozen=True, eq=False)
class AggregationMatrix:
    """Edge weights stored on the adjacency pattern of an ``InteractionGraph``."""

    num_users: int
    num_items: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        if len(self.data) != len(self.indices):
            raise ValueError("data and indices lengths differ")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("aggregation weights must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        n = self.num_users + self.num_items
        return n, n

    @property
    def nnz(self) -> int:
        return len(self.data)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    @cached_property
    def csr_t(self) -> sp.csr_matrix:
        return self.csr.T.tocsr()

    def with_data(self, data: np.ndarray) -> "AggregationMatrix":
        return AggregationMatrix(self.num_users, self.num_items, self.indptr, self.indices,
                                 np.ascontiguousarray(data, dtype=np.float64))

    def same_pattern(self, other: "AggregationMatrix") -> bool:
        return (self.shape == other.shape and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def get(self, v: int, x: int) -> float:
        lo, hi = self.indptr[v], self.indptr[v + 1]
        k = lo + np.searchsorted(self.indices[lo:hi], x)
        if k < hi and self.indices[k] == x:
            return float(self.data[k])
        return 0.0

    def row_sums(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))
        return np.bincount(rows, weights=self.data, minlength=self.shape[0])

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def save(self, path) -> None:
        """Binary snapshot: int64 LE header (M, N, nnz), indptr, indices, float64 values."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<qqq", self.num_users, self.num_items, self.nnz))
            fh.write(self.indptr.astype("<i8").tobytes())
            fh.write(self.indices.astype("<i8").tobytes())
            fh.write(self.data.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "AggregationMatrix":
        with open(path, "rb") as fh:
            m, n, nnz = struct.unpack("<qqq", fh.read(24))
            indptr = np.frombuffer(fh.read(8 * (m + n + 1)), dtype="<i8").astype(np.int64)
            indices = np.frombuffer(fh.read(8 * nnz), dtype="<i8").astype(np.int64)
            data = np.frombuffer(fh.read(8 * nnz), dtype="<f8").astype(np.float64)
        if len(data) != nnz or len(indptr) != m + n + 1:
            raise ValueError(f"truncated aggregation snapshot {path}")
        return cls(m, n, indptr, indices, data)


def graph_from_edges(num_users: int, num_items: int, edges) -> InteractionGraph:
    """Build the graph from (user, item) pairs; duplicates collapse to one edge."""
    e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if len(e) and (e[:, 0].min() < 0 or e[:, 0].max() >= num_users
                   or e[:, 1].min() < 0 or e[:, 1].max() >= num_items):
        raise ValueError("edge index out of range")
    rows = np.concatenate([e[:, 0], e[:, 1] + num_users])
    cols = np.concatenate([e[:, 1] + num_users, e[:, 0]])
    n = num_users + num_items
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    adj.sum_duplicates()
    adj.sort_indices()
    return InteractionGraph(num_users, num_items, adj.indptr.astype(np.int64),
                            adj.indices.astype(np.int64))


def build_graph(dataset: IndexedDataset) -> InteractionGraph:
    """Graph structure from the train split only."""
    return graph_from_edges(dataset.num_users, dataset.num_items, dataset.train)


def normalized_adjacency(graph: InteractionGraph) -> AggregationMatrix:
    """Symmetric normalization: weight 1/sqrt(deg(v) deg(x)) on every edge."""
    deg = graph.degrees.astype(np.float64)
    data = 1.0 / np.sqrt(deg[graph.edge_rows] * deg[graph.indices])
    return AggregationMatrix(graph.num_users, graph.num_items, graph.indptr, graph.indices, data)


def _require_degree(graph: InteractionGraph, v: int) -> None:
    if graph.degree(v) < 1:
        raise ValueError(f"node {v} has zero degree; normalizer and likelihood are undefined")


def normalizer(graph: InteractionGraph, v: int) -> float:
    """F(v) = sum over neighbors x of 1/sqrt(deg(v) deg(x))."""
    _require_degree(graph, v)
    nb_deg = graph.degrees[graph.neighbors(v)].astype(np.float64)
    return float(np.sum(1.0 / np.sqrt(graph.degree(v) * nb_deg)))


def normalizers(graph: InteractionGraph) -> np.ndarray:
    """F for every node; zero-degree nodes get NaN."""
    deg = graph.degrees.astype(np.float64)
    contrib = 1.0 / np.sqrt(deg[graph.indices])
    sums = np.zeros(graph.num_nodes)
    np.add.at(sums, graph.edge_rows, contrib)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = sums / np.sqrt(deg)
    out[deg == 0] = np.nan
    return out


def history_likelihood(graph: InteractionGraph, center: int, neighbor: int) -> float:
    """p(x|v): neighbor's inverse-sqrt degree normalized over the center's neighborhood."""
    _require_degree(graph, center)
    nbrs = graph.neighbors(center)
    k = np.searchsorted(nbrs, neighbor)
    if k >= len(nbrs) or nbrs[k] != neighbor:
        raise ValueError(f"node {neighbor} is not a neighbor of {center}")
    inv = 1.0 / np.sqrt(graph.degrees[nbrs].astype(np.float64))
    return float(inv[k] / inv.sum())


def history_likelihoods(graph: InteractionGraph) -> np.ndarray:
    """p(x|v) for every stored directed edge, aligned with ``graph.indices``."""
    inv = 1.0 / np.sqrt(graph.degrees[graph.indices].astype(np.float64))
    totals = np.zeros(graph.num_nodes)
    np.add.at(totals, graph.edge_rows, inv)
    return inv / totals[graph.edge_rows]


def spmm(weights: AggregationMatrix, embeddings: np.ndarray) -> np.ndarray:
    if embeddings.ndim != 2 or embeddings.shape[0] != weights.shape[1]:
        raise ValueError(f"shape mismatch: {weights.shape} @ {embeddings.shape}")
    return np.asarray(weights.csr @ embeddings)


def spmm_t(weights: AggregationMatrix, grads: np.ndarray) -> np.ndarray:
    """Transpose product used by backpropagation through a propagation layer."""
    if grads.ndim != 2 or grads.shape[0] != weights.shape[0]:
        raise ValueError(f"shape mismatch: {weights.shape}^T @ {grads.shape}")
    return np.asarray(weights.csr_t @ grads)
