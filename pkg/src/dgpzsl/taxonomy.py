"""Class hierarchy handling and the k-hop ancestor/descendant decomposition.

Edges point from child to parent. Nodes are indexed in order of first
appearance in the edge stream, and every matrix built here uses that order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import sparse
from .errors import ValidationError
from .sparse import SparseMatrix

ANCESTOR = "ancestor"
DESCENDANT = "descendant"
BOTH = "both"


@dataclass(frozen=True)
class TaxonomyDag:
    node_ids: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]  # (child_index, parent_index)
    parents: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    children: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.node_ids)
        if len(set(self.node_ids)) != n:
            raise ValidationError("node ids must be distinct")
        if len(set(self.edges)) != len(self.edges):
            raise ValidationError("duplicate edge")
        parents = [[] for _ in range(n)]
        children = [[] for _ in range(n)]
        for c, p in self.edges:
            if not (0 <= c < n and 0 <= p < n):
                raise ValidationError(f"edge ({c}, {p}) refers to a missing node")
            if c == p:
                raise ValidationError(f"self-edge on {self.node_ids[c]!r}")
            parents[c].append(p)
            children[p].append(c)
        object.__setattr__(self, "parents", tuple(tuple(sorted(x)) for x in parents))
        object.__setattr__(self, "children", tuple(tuple(sorted(x)) for x in children))
        cycle = _find_cycle(self.parents)
        if cycle is not None:
            names = " -> ".join(self.node_ids[i] for i in cycle)
            raise ValidationError(f"cycle detected: {names}")

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.node_ids)}

    def roots(self) -> list[int]:
        return [i for i, p in enumerate(self.parents) if not p]

    def leaves(self) -> list[int]:
        return [i for i, c in enumerate(self.children) if not c]

    def adjacency(self) -> SparseMatrix:
        """Symmetric hierarchy adjacency with self-loops (the plain GCN graph)."""
        n = self.n_nodes
        trip = [(i, i, 1.0) for i in range(n)]
        for c, p in self.edges:
            trip.append((c, p, 1.0))
            trip.append((p, c, 1.0))
        return sparse.binarize(sparse.csr_from_triplets(n, n, trip))


def _find_cycle(parents: Sequence[Sequence[int]]) -> list[int] | None:
    """Iterative DFS over parent links; returns one cycle as a node list."""
    n = len(parents)
    state = [0] * n  # 0 unvisited, 1 on stack, 2 done
    for start in range(n):
        if state[start]:
            continue
        stack = [(start, 0)]
        path = [start]
        state[start] = 1
        while stack:
            node, i = stack[-1]
            if i < len(parents[node]):
                stack[-1] = (node, i + 1)
                nxt = parents[node][i]
                if state[nxt] == 1:
                    return path[path.index(nxt):] + [nxt]
                if state[nxt] == 0:
                    state[nxt] = 1
                    stack.append((nxt, 0))
                    path.append(nxt)
            else:
                state[node] = 2
                stack.pop()
                path.pop()
    return None


def build_dag(edge_pairs: Iterable[tuple[str, str]], extra_nodes: Iterable[str] = ()) -> TaxonomyDag:
    """Build a validated DAG from ``(child_id, parent_id)`` pairs.

    Duplicate edges are dropped. ``extra_nodes`` appends isolated classes
    (or fixes the position of ones not yet seen) after the edge-derived order.
    """
    index: dict[str, int] = {}
    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()

    def intern(name: str) -> int:
        if not isinstance(name, str) or not name or any(ch.isspace() for ch in name):
            raise ValidationError(f"invalid node id {name!r}")
        if name not in index:
            index[name] = len(index)
        return index[name]

    for pos, (child, parent) in enumerate(edge_pairs):
        if child == parent:
            raise ValidationError(f"self-edge at edge #{pos}: {child!r}")
        e = (intern(child), intern(parent))
        if e not in seen:
            seen.add(e)
            edges.append(e)
    for name in extra_nodes:
        intern(name)
    return TaxonomyDag(tuple(index), tuple(edges))


@dataclass(frozen=True)
class KHopAdjacency:
    direction: str
    K: int
    buckets: tuple[SparseMatrix, ...]

    @property
    def n_nodes(self) -> int:
        return self.buckets[0].n_rows

    @cached_property
    def normalized_buckets(self) -> tuple[SparseMatrix, ...]:
        """D_k^-1 A_k for every bucket; empty rows stay empty."""
        return tuple(sparse.row_normalize(b) for b in self.buckets)

    @cached_property
    def normalized_union(self) -> SparseMatrix:
        return sparse.row_normalize(dense_union(self))


def hop_distances(dag: TaxonomyDag, source: int, direction: str) -> dict[int, int]:
    """Shortest hop count from ``source`` to every node reachable along parent
    links (ancestor) or child links (descendant)."""
    links = dag.parents if direction == ANCESTOR else dag.children
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in links[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def khop_decompose(dag: TaxonomyDag, K: int, direction: str) -> KHopAdjacency:
    """Split the reachability relation into hop buckets 0..K.

    Bucket 0 holds the self-loops, bucket k the pairs at shortest distance
    exactly k, and bucket K every pair at distance K or more. Empty buckets
    are kept as all-zero matrices.
    """
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    if direction not in (ANCESTOR, DESCENDANT):
        raise ValidationError(f"direction must be {ANCESTOR!r} or {DESCENDANT!r}, got {direction!r}")
    n = dag.n_nodes
    trips: list[list[tuple[int, int, float]]] = [[] for _ in range(K + 1)]
    for i in range(n):
        for j, d in hop_distances(dag, i, direction).items():
            trips[min(d, K)].append((i, j, 1.0))
    buckets = tuple(sparse.csr_from_triplets(n, n, t) for t in trips)
    return KHopAdjacency(direction, K, buckets)


def merge_directions(kh_a: KHopAdjacency, kh_d: KHopAdjacency) -> KHopAdjacency:
    """Undirected buckets: bucket k = ancestors at k plus descendants at k.

    Used for the single-adjacency ablation where the ancestor/descendant split
    is removed. In a DAG the two directions only share the diagonal.
    """
    if kh_a.K != kh_d.K or kh_a.n_nodes != kh_d.n_nodes:
        raise ValidationError("cannot merge decompositions of different size")
    buckets = [kh_a.buckets[0]]
    for a, d in zip(kh_a.buckets[1:], kh_d.buckets[1:]):
        buckets.append(sparse.binarize(sparse.add(a, d)))
    return KHopAdjacency(BOTH, kh_a.K, tuple(buckets))


def dense_union(kh: KHopAdjacency) -> SparseMatrix:
    """All buckets collapsed into one 0/1 matrix (self-loops included)."""
    return sparse.binarize(sparse.add(*kh.buckets))


@dataclass(frozen=True)
class GraphStats:
    n_nodes: int
    n_edges: int
    hierarchy_density: float
    dense_density: float

    @property
    def density_ratio(self) -> float:
        return self.dense_density / self.hierarchy_density if self.hierarchy_density else float("nan")

    def as_dict(self) -> dict:
        return {
            "nodes": self.n_nodes,
            "edges": self.n_edges,
            "hierarchy_density": self.hierarchy_density,
            "dense_density": self.dense_density,
            "ratio": self.density_ratio,
        }


def graph_stats(dag: TaxonomyDag, kh_a: KHopAdjacency) -> GraphStats:
    """Density of the symmetric hierarchy adjacency vs. the dense
    ancestor+descendant adjacency, both with self-loops."""
    n = dag.n_nodes
    cells = float(n * n) if n else 1.0
    hier = dag.adjacency()
    anc = dense_union(kh_a)
    dense = sparse.binarize(sparse.add(anc, sparse.transpose(anc)))
    return GraphStats(n, dag.n_edges, hier.nnz / cells, dense.nnz / cells)
