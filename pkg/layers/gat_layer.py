from dataclasses import dataclass
from typing import List

import numpy as np

from autodiff import (
    Parameter,
    SegmentIndex,
    Value,
    activation,
    add,
    concat,
    gather_rows,
    matmul,
    reshape,
    scale,
    scale_rows,
    segment_softmax,
    segment_sum,
)
from autodiff.ops import DEFAULT_LEAKY_SLOPE
from graphs.knn_graph import PatchGraph
from helpers.errors import ContractError, DimensionError
from layers.base_layer import GraphConvolution, glorot_uniform


@dataclass
class GatLayerParams:
    """One weight matrix W [F_in×F_out] and attention vector a [2·F_out] per head"""
    weights: List[Parameter]
    attention: List[Parameter]

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.attention):
            raise ContractError("GAT layer needs at least one head with matching W and a")
        shape = self.weights[0].shape
        for w, a in zip(self.weights, self.attention):
            if w.shape != shape or a.shape != (2 * shape[1],):
                raise DimensionError("GAT head shapes disagree")

    @property
    def heads(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[0].shape[1]


def gat_attention_head(g: PatchGraph, x: Value, w: Parameter, a: Parameter,
                       slope: float = DEFAULT_LEAKY_SLOPE):
    """
    Single attention head.

    For each edge v -> u the score is LeakyReLU(a . [W h_u ++ W h_v]),
    normalized over u's in-neighbourhood; u aggregates alpha_uv * W h_v.

    Returns:
        Tuple of (head output [N×F_out], attention coefficients [E])
    """
    projected = matmul(x, w)
    dst_rows = gather_rows(projected, g.dst)
    src_rows = gather_rows(projected, g.src)
    pair = concat([dst_rows, src_rows], axis=1)
    scores = reshape(matmul(pair, reshape(a, (a.shape[0], 1))), (g.num_edges,))
    scores = activation(scores, 'leaky_relu', slope)

    neighbourhoods = SegmentIndex(g.dst, g.num_nodes)
    alpha = segment_softmax(scores, neighbourhoods)
    messages = scale_rows(src_rows, alpha)
    return segment_sum(messages, neighbourhoods), alpha


def gat_forward(g: PatchGraph, x: Value, params: GatLayerParams,
                slope: float = DEFAULT_LEAKY_SLOPE) -> Value:
    """
    Multi-head graph attention layer, heads averaged elementwise

    Args:
        g (PatchGraph): Graph with a self-loop on every node
        x (Value): [N×F_in] node features
        params (GatLayerParams): Per-head weights and attention vectors
        slope (float): LeakyReLU negative slope inside the attention score

    Returns:
        [N×F_out] aggregated features
    """
    if not g.has_all_self_loops():
        raise ContractError("gat_forward requires a self-loop on every node")
    if x.shape != (g.num_nodes, params.in_dim):
        raise DimensionError(f"features {x.shape} do not fit graph N={g.num_nodes}, F_in={params.in_dim}")

    outputs = [gat_attention_head(g, x, w, a, slope)[0]
               for w, a in zip(params.weights, params.attention)]
    if len(outputs) == 1:
        return outputs[0]
    combined = outputs[0]
    for head in outputs[1:]:
        combined = add(combined, head)
    return scale(combined, 1.0 / len(outputs))


class GATConv(GraphConvolution):
    def __init__(self, name: str, params: GatLayerParams, slope: float = DEFAULT_LEAKY_SLOPE):
        super().__init__(name)
        self.params = params
        self.slope = slope

    @classmethod
    def initialize(cls, name: str, in_dim: int, out_dim: int, heads: int,
                   rng: np.random.Generator, slope: float = DEFAULT_LEAKY_SLOPE) -> 'GATConv':
        weights = [glorot_uniform(rng, (in_dim, out_dim), f"{name}.head{h}.W") for h in range(heads)]
        attention = [glorot_uniform(rng, (2 * out_dim,), f"{name}.head{h}.a") for h in range(heads)]
        return cls(name, GatLayerParams(weights, attention), slope)

    def forward(self, g: PatchGraph, x: Value) -> Value:
        return gat_forward(g, x, self.params, self.slope)

    def parameters(self) -> List[Parameter]:
        params = []
        for w, a in zip(self.params.weights, self.params.attention):
            params.extend([w, a])
        return params
