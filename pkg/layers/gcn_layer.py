from typing import List

import numpy as np

from autodiff import Parameter, SegmentIndex, Value, constant, gather_rows, matmul, scale_rows, segment_sum
from graphs.knn_graph import NormalizedAdjacency, PatchGraph, normalized_adjacency
from helpers.errors import DimensionError
from layers.base_layer import GraphConvolution, glorot_uniform


def propagate(adj: NormalizedAdjacency, x: Value) -> Value:
    """Sparse product D^-1/2 (A+I) D^-1/2 · x"""
    if x.shape[0] != adj.num_nodes:
        raise DimensionError(f"features with {x.shape[0]} rows do not fit {adj.num_nodes} nodes")
    weighted = scale_rows(gather_rows(x, adj.src), constant(adj.weight))
    return segment_sum(weighted, SegmentIndex(adj.dst, adj.num_nodes))


def gcn_forward(adj: NormalizedAdjacency, x: Value, w: Value) -> Value:
    """Weighted sparse aggregation followed by the linear map; activation left to the caller"""
    if x.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"features {x.shape} do not fit weight {w.shape}")
    return matmul(propagate(adj, x), w)


class GCNConv(GraphConvolution):
    def __init__(self, name: str, weight: Parameter):
        super().__init__(name)
        self.weight = weight

    @classmethod
    def initialize(cls, name: str, in_dim: int, out_dim: int, heads: int,
                   rng: np.random.Generator, slope: float = 0.0) -> 'GCNConv':
        # heads and slope only apply to attention layers
        return cls(name, glorot_uniform(rng, (in_dim, out_dim), f"{name}.W"))

    def forward(self, g: PatchGraph, x: Value) -> Value:
        return gcn_forward(normalized_adjacency(g), x, self.weight)

    def parameters(self) -> List[Parameter]:
        return [self.weight]
