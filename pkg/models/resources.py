from dataclasses import asdict, dataclass
from typing import Dict

from helpers.errors import ContractError
from helpers.settings import ModelConfig
from layers.base_layer import pooled_size

BYTES_PER_FLOAT = 8


@dataclass
class ResourceEstimate:
    flops: int
    edge_flops: int
    dense_flops: int
    peak_bytes: int

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)


def param_count(cfg: ModelConfig) -> int:
    hidden = cfg.hidden_dim
    count = 0
    for index in range(cfg.num_blocks):
        in_dim = cfg.input_dim if index == 0 else hidden
        if cfg.conv_kind == 'gat':
            count += cfg.heads * (in_dim * hidden + 2 * hidden)
        else:
            count += in_dim * hidden
        count += hidden
    dims = cfg.mlp_dims
    count += sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    return count


def resource_estimate(num_nodes: int, k: int, cfg: ModelConfig) -> ResourceEstimate:
    """
    Analytic FLOP and memory count of one forward pass on a k-NN graph

    Edges per block are estimated as n_b * min(k, n_b - 1) directed edges
    (exact before the first pooling and whenever the ratio is 1), and the
    symmetrized operator used by GCN/SAGPool as twice that.

    Args:
        num_nodes (int): Nodes in the input bag
        k (int): Neighbours per node
        cfg (ModelConfig): Architecture

    Returns:
        ResourceEstimate with total FLOPs, the edge-proportional part, the
        dense feature-transform part and peak bytes (values plus gradients)
    """
    if num_nodes < 1 or k < 1:
        raise ContractError(f"resource estimate needs N >= 1 and k >= 1 (N={num_nodes}, k={k})")

    hidden = cfg.hidden_dim
    heads = cfg.heads if cfg.conv_kind == 'gat' else 1
    edge_flops = 0
    dense_flops = 0
    other_flops = 0
    floats = 0

    n = num_nodes
    for index in range(cfg.num_blocks):
        in_dim = cfg.input_dim if index == 0 else hidden
        edges = n * min(k, n - 1)
        sym_edges = 2 * edges
        kept = pooled_size(n, cfg.pooling_ratio)

        if cfg.conv_kind == 'gat':
            per_edge = 6 * hidden + 5
            edge_flops += heads * edges * per_edge
            dense_flops += heads * 2 * n * in_dim * hidden
            other_flops += heads * n * per_edge
            if heads > 1:
                other_flops += heads * n * hidden
            edge_rows = edges + n
            floats += heads * (2 * n * hidden + 5 * edge_rows * hidden + 4 * edge_rows)
        else:
            edge_flops += 2 * sym_edges * in_dim
            dense_flops += 2 * n * in_dim * hidden
            other_flops += 2 * n * in_dim
            edge_rows = sym_edges + n
            floats += 2 * edge_rows * in_dim + 2 * n * hidden
        other_flops += n * hidden
        floats += n * in_dim + n * hidden

        if cfg.pool_kind == 'sag':
            edge_flops += 2 * sym_edges
            other_flops += 2 * n * hidden + 3 * n + kept * hidden
            floats += 2 * (sym_edges + n) + 3 * n
        else:
            other_flops += 2 * hidden + 2 * n * hidden + n + kept + kept * hidden
            floats += 2 * n + kept
        other_flops += 2 * kept * hidden
        floats += 2 * kept * hidden + 2 * hidden
        n = kept

    dims = cfg.mlp_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        other_flops += 2 * fan_in * fan_out + fan_out
        floats += 2 * fan_out
    other_flops += sum(dims[1:-1])

    # Every intermediate holds a same-size gradient buffer after backward
    peak_bytes = BYTES_PER_FLOAT * 2 * (floats + param_count(cfg))
    return ResourceEstimate(
        flops=edge_flops + dense_flops + other_flops,
        edge_flops=edge_flops,
        dense_flops=dense_flops,
        peak_bytes=peak_bytes,
    )
