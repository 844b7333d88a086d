from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from helpers.errors import ContractError, EmptyGraphError
from helpers.logging_helper import get_logger

logger = get_logger(__name__)

# Upper bound on floats held by one block of pairwise differences
DISTANCE_BLOCK_FLOATS = 1 << 24


@dataclass
class PatchGraph:
    """
    Directed graph over one patient's patches.

    Edges are (src, dst) rows; messages flow src -> dst. `node_origin` maps
    every node back to its row in the original bag so pooled graphs can be
    traced to patches.
    """
    num_nodes: int
    features: np.ndarray
    edges: np.ndarray
    slide_tag: List[str] = field(default_factory=list)
    node_origin: Optional[np.ndarray] = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.features = np.asarray(self.features, dtype=np.float64)
        if not self.slide_tag:
            self.slide_tag = [''] * self.num_nodes
        if self.node_origin is None:
            self.node_origin = np.arange(self.num_nodes, dtype=np.int64)
        if self.features.shape[0] != self.num_nodes or len(self.slide_tag) != self.num_nodes:
            raise ContractError("features and slide tags must have one row per node")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= self.num_nodes):
            raise ContractError("edge references a node outside the graph")

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def src(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[:, 1]

    def edge_set(self) -> set:
        return {(int(s), int(d)) for s, d in self.edges}

    def has_all_self_loops(self) -> bool:
        loops = self.edges[self.edges[:, 0] == self.edges[:, 1], 0]
        return np.unique(loops).size == self.num_nodes


@dataclass
class NormalizedAdjacency:
    """Symmetric edge list with self-loops, weighted 1/sqrt(d_u * d_v)"""
    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    def dense(self) -> np.ndarray:
        matrix = np.zeros((self.num_nodes, self.num_nodes))
        matrix[self.dst, self.src] = self.weight
        return matrix


@dataclass
class GraphStats:
    num_nodes: int
    num_edges: int
    components: int
    mixing_fraction: float
    weakly_connected: bool
    mean_out_degree: float


def _pairwise_sq_distances(queries: np.ndarray, features: np.ndarray) -> np.ndarray:
    diff = queries[:, None, :] - features[None, :, :]
    return (diff * diff).sum(axis=-1)


def build_knn_graph(features: np.ndarray,
                    k: int,
                    slide_tag: Optional[Sequence[str]] = None) -> PatchGraph:
    """
    Build the directed k-nearest-neighbour graph of a bag of embeddings

    Args:
        features (np.ndarray): [N×F] patch embeddings
        k (int): Neighbours per node
        slide_tag (Sequence[str]): Slide identifier per node

    Returns:
        PatchGraph with an edge p -> q for each of p's k nearest other nodes
        (Euclidean distance, ties broken by lower node index)
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise EmptyGraphError("cannot build a graph from an empty bag")
    if k < 1 or features.shape[1] < 1:
        raise ContractError(f"k and feature dimension must be >= 1 (k={k}, F={features.shape[1]})")

    n = features.shape[0]
    neighbours = min(k, n - 1)
    rows = []
    block = max(1, DISTANCE_BLOCK_FLOATS // (n * features.shape[1]))
    for start in range(0, n, block):
        stop = min(start + block, n)
        with np.errstate(over='ignore'):
            dist = _pairwise_sq_distances(features[start:stop], features)
        # Stable sort keeps equal distances in ascending node order
        order = np.argsort(dist, axis=1, kind='stable')
        # Drop each row's own index; overflowed distances can tie with it
        own = np.arange(start, stop)[:, None]
        order = order[order != own].reshape(stop - start, n - 1)[:, :neighbours]
        for offset, targets in enumerate(order):
            src = np.full(neighbours, start + offset, dtype=np.int64)
            rows.append(np.stack([src, targets], axis=1))

    edges = np.concatenate(rows) if neighbours else np.zeros((0, 2), dtype=np.int64)
    logger.debug(f"Built k-NNG with N={n}, k={k}, E={edges.shape[0]}")
    return PatchGraph(
        num_nodes=n,
        features=features,
        edges=edges,
        slide_tag=list(slide_tag) if slide_tag is not None else [],
    )


def add_self_loops(g: PatchGraph) -> PatchGraph:
    """Return a copy of g with a self-loop on every node that lacks one"""
    existing = set(g.edges[g.edges[:, 0] == g.edges[:, 1], 0].tolist())
    missing = np.array([u for u in range(g.num_nodes) if u not in existing], dtype=np.int64)
    loops = np.stack([missing, missing], axis=1)
    return PatchGraph(
        num_nodes=g.num_nodes,
        features=g.features,
        edges=np.concatenate([g.edges, loops]),
        slide_tag=g.slide_tag,
        node_origin=g.node_origin,
    )


class _DisjointSet:
    def __init__(self, size: int):
        self.parents = list(range(size))
        self.rank = [0] * size

    def find(self, i: int) -> int:
        root = i
        while self.parents[root] != root:
            root = self.parents[root]
        while i != root:
            self.parents[i], i = root, self.parents[i]
        return root

    def merge(self, i: int, j: int) -> None:
        i, j = self.find(i), self.find(j)
        if i == j:
            return
        if self.rank[i] < self.rank[j]:
            i, j = j, i
        self.parents[j] = i
        if self.rank[i] == self.rank[j]:
            self.rank[i] += 1


def weakly_connected_components(g: PatchGraph) -> List[List[int]]:
    """Components of the undirected support, each sorted, ordered by smallest node"""
    components = _DisjointSet(g.num_nodes)
    for src, dst in g.edges:
        components.merge(int(src), int(dst))

    groups = {}
    for node in range(g.num_nodes):
        groups.setdefault(components.find(node), []).append(node)
    return sorted(groups.values(), key=lambda members: members[0])


def component_labels(g: PatchGraph) -> np.ndarray:
    labels = np.zeros(g.num_nodes, dtype=np.int64)
    for index, members in enumerate(weakly_connected_components(g)):
        labels[members] = index
    return labels


def normalized_adjacency(g: PatchGraph) -> NormalizedAdjacency:
    """Symmetrize edges, add self-loops and weight by D^-1/2 (A+I) D^-1/2"""
    n = g.num_nodes
    off_diagonal = g.edges[g.edges[:, 0] != g.edges[:, 1]]
    both_ways = np.concatenate([off_diagonal, off_diagonal[:, ::-1]])
    loops = np.stack([np.arange(n), np.arange(n)], axis=1)
    pairs = np.unique(np.concatenate([both_ways, loops]), axis=0)

    degree = np.bincount(pairs[:, 1], minlength=n).astype(np.float64)
    weight = 1.0 / np.sqrt(degree[pairs[:, 0]] * degree[pairs[:, 1]])
    return NormalizedAdjacency(num_nodes=n, src=pairs[:, 0], dst=pairs[:, 1], weight=weight)


def induced_subgraph(g: PatchGraph, kept: Sequence[int]) -> PatchGraph:
    """
    Keep the listed nodes (reindexed densely in list order) and the edges
    whose endpoints are both kept
    """
    kept = np.asarray(kept, dtype=np.int64).reshape(-1)
    if kept.size == 0:
        raise EmptyGraphError("induced subgraph needs at least one kept node")
    if np.unique(kept).size != kept.size or kept.min() < 0 or kept.max() >= g.num_nodes:
        raise ContractError("kept indices must be distinct valid node ids")

    remap = np.full(g.num_nodes, -1, dtype=np.int64)
    remap[kept] = np.arange(kept.size)
    mapped = remap[g.edges] if g.num_edges else np.zeros((0, 2), dtype=np.int64)
    survivors = mapped[(mapped >= 0).all(axis=1)]

    return PatchGraph(
        num_nodes=int(kept.size),
        features=g.features[kept],
        edges=survivors,
        slide_tag=[g.slide_tag[i] for i in kept],
        node_origin=g.node_origin[kept],
    )


def graph_stats(g: PatchGraph) -> GraphStats:
    """Size, connectivity and cross-slide edge fraction of a graph"""
    components = len(weakly_connected_components(g))
    if g.num_edges:
        tags = np.asarray(g.slide_tag, dtype=object)
        mixing = float(np.mean(tags[g.src] != tags[g.dst]))
    else:
        mixing = 0.0
    return GraphStats(
        num_nodes=g.num_nodes,
        num_edges=g.num_edges,
        components=components,
        mixing_fraction=mixing,
        weakly_connected=components == 1,
        mean_out_degree=g.num_edges / g.num_nodes if g.num_nodes else 0.0,
    )
