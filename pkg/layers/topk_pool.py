from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from autodiff import Parameter, Value, activation, div_scalar, gather_rows, l2_norm, matmul, reshape, scale_rows
from graphs.knn_graph import PatchGraph, induced_subgraph
from helpers.errors import ContractError, DegenerateProjectionError, DimensionError, EmptyGraphError
from layers.base_layer import GraphPooling, glorot_uniform, top_rank


@dataclass
class TopKPoolParams:
    projection: Parameter
    ratio: float

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ContractError(f"pooling ratio must lie in (0, 1], got {self.ratio}")


def topk_pool(g: PatchGraph, x: Value, params: TopKPoolParams) -> Tuple[PatchGraph, Value, np.ndarray]:
    """Projection-score pooling: y = X p / |p|, keep the top ratio, gate by sigmoid(y)"""
    if g.num_nodes == 0:
        raise EmptyGraphError("cannot pool an empty graph")
    p = params.projection
    if x.shape[1] != p.shape[0]:
        raise DimensionError(f"features {x.shape} do not fit projection {p.shape}")
    norm = l2_norm(p)
    if norm.item() == 0.0:
        raise DegenerateProjectionError("TopK projection vector has zero norm")

    scores = div_scalar(reshape(matmul(x, reshape(p, (p.shape[0], 1))), (g.num_nodes,)), norm)
    kept = top_rank(scores.data, params.ratio)
    gate = activation(gather_rows(scores, kept), 'sigmoid')
    return induced_subgraph(g, kept), scale_rows(gather_rows(x, kept), gate), kept


class TopKPool(GraphPooling):
    def __init__(self, name: str, params: TopKPoolParams):
        super().__init__(name, params.ratio)
        self.params = params

    @classmethod
    def initialize(cls, name: str, dim: int, ratio: float, rng: np.random.Generator) -> 'TopKPool':
        return cls(name, TopKPoolParams(glorot_uniform(rng, (dim,), f"{name}.p"), ratio))

    def forward(self, g: PatchGraph, x: Value) -> Tuple[PatchGraph, Value, np.ndarray]:
        return topk_pool(g, x, self.params)

    def parameters(self) -> List[Parameter]:
        return [self.params.projection]
