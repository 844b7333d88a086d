from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from autodiff import Parameter, Value, activation, gather_rows, matmul, reshape, scale_rows
from graphs.knn_graph import PatchGraph, induced_subgraph, normalized_adjacency
from helpers.errors import ContractError, DimensionError, EmptyGraphError
from layers.base_layer import GraphPooling, glorot_uniform, top_rank
from layers.gcn_layer import propagate


@dataclass
class SagPoolParams:
    theta: Parameter
    ratio: float

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ContractError(f"pooling ratio must lie in (0, 1], got {self.ratio}")


def sagpool_scores(g: PatchGraph, x: Value, theta: Value) -> Value:
    """Z = tanh(D^-1/2 (A+I) D^-1/2 X Theta), one score per node in [-1, 1]"""
    if x.shape[1] != theta.shape[0]:
        raise DimensionError(f"features {x.shape} do not fit Theta_att {theta.shape}")
    projected = matmul(x, reshape(theta, (theta.shape[0], 1)))
    aggregated = propagate(normalized_adjacency(g), projected)
    return activation(reshape(aggregated, (g.num_nodes,)), 'tanh')


def sagpool(g: PatchGraph, x: Value, params: SagPoolParams) -> Tuple[PatchGraph, Value, np.ndarray]:
    """
    Self-attention graph pooling

    Args:
        g (PatchGraph): Graph to pool
        x (Value): [N×F] node features
        params (SagPoolParams): Score vector and pooling ratio

    Returns:
        Tuple of (induced subgraph on kept nodes, kept features gated by
        their scores, kept node ids in ascending order)
    """
    if g.num_nodes == 0:
        raise EmptyGraphError("cannot pool an empty graph")
    scores = sagpool_scores(g, x, params.theta)
    kept = top_rank(scores.data, params.ratio)
    gated = scale_rows(gather_rows(x, kept), gather_rows(scores, kept))
    return induced_subgraph(g, kept), gated, kept


class SAGPool(GraphPooling):
    def __init__(self, name: str, params: SagPoolParams):
        super().__init__(name, params.ratio)
        self.params = params

    @classmethod
    def initialize(cls, name: str, dim: int, ratio: float, rng: np.random.Generator) -> 'SAGPool':
        return cls(name, SagPoolParams(glorot_uniform(rng, (dim,), f"{name}.theta"), ratio))

    def forward(self, g: PatchGraph, x: Value) -> Tuple[PatchGraph, Value, np.ndarray]:
        return sagpool(g, x, self.params)

    def parameters(self) -> List[Parameter]:
        return [self.params.theta]
