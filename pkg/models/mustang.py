from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from autodiff import Parameter, Value, activation, concat, constant
from graphs.knn_graph import PatchGraph, add_self_loops
from helpers.errors import DimensionError, EmptyGraphError
from helpers.logging_helper import get_logger
from helpers.settings import ModelConfig
from layers.base_layer import GraphConvolution, GraphPooling, glorot_uniform
from layers.gat_layer import GATConv
from layers.gcn_layer import GCNConv
from layers.readout import mlp_forward, readout
from layers.sag_pool import SAGPool
from layers.topk_pool import TopKPool

logger = get_logger(__name__)

CONV_LAYERS = {
    'gat': GATConv,
    'gcn': GCNConv,
}

POOL_LAYERS = {
    'sag': SAGPool,
    'topk': TopKPool,
}


@dataclass
class Block:
    conv: GraphConvolution
    pool: GraphPooling


@dataclass
class ModelParams:
    """Full weight set: one conv + pool per block, then the MLP head"""
    blocks: List[Block]
    mlp: List[Tuple[Parameter, Parameter]]

    def parameters(self) -> List[Parameter]:
        params = []
        for block in self.blocks:
            params.extend(block.conv.parameters())
            params.extend(block.pool.parameters())
        for w, b in self.mlp:
            params.extend([w, b])
        return params

    def named_parameters(self) -> Dict[str, Parameter]:
        return {param.name: param for param in self.parameters()}

    @property
    def total_param_count(self) -> int:
        return sum(param.size for param in self.parameters())


def create_conv(kind: str, name: str, in_dim: int, cfg: ModelConfig,
                rng: np.random.Generator) -> GraphConvolution:
    """Create the message-passing layer for a conv kind"""
    conv_class = CONV_LAYERS.get(kind)
    if not conv_class:
        raise ValueError(f"Unknown conv kind: {kind}")
    return conv_class.initialize(name, in_dim, cfg.hidden_dim, cfg.heads, rng, cfg.leaky_slope)


def create_pool(kind: str, name: str, cfg: ModelConfig, rng: np.random.Generator) -> GraphPooling:
    """Create the pooling layer for a pool kind"""
    pool_class = POOL_LAYERS.get(kind)
    if not pool_class:
        raise ValueError(f"Unknown pool kind: {kind}")
    return pool_class.initialize(name, cfg.hidden_dim, cfg.pooling_ratio, rng)


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """
    Glorot-uniform weights, zero biases, fully determined by the seed

    Args:
        cfg (ModelConfig): Architecture
        seed (int): Seed of the numpy generator

    Returns:
        ModelParams with shapes implied by cfg
    """
    rng = np.random.default_rng(seed)
    blocks = []
    for index in range(cfg.num_blocks):
        in_dim = cfg.input_dim if index == 0 else cfg.hidden_dim
        blocks.append(Block(
            conv=create_conv(cfg.conv_kind, f"block{index}.conv", in_dim, cfg, rng),
            pool=create_pool(cfg.pool_kind, f"block{index}.pool", cfg, rng),
        ))

    dims = cfg.mlp_dims
    mlp = []
    for index, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        mlp.append((
            glorot_uniform(rng, (fan_in, fan_out), f"mlp{index}.W"),
            Parameter(np.zeros(fan_out), name=f"mlp{index}.b"),
        ))

    params = ModelParams(blocks=blocks, mlp=mlp)
    logger.debug(f"Initialized {cfg.conv_kind}/{cfg.pool_kind} model with {params.total_param_count} parameters")
    return params


def mustang_forward(bag: PatchGraph, params: ModelParams,
                    cfg: ModelConfig) -> Tuple[Value, List[PatchGraph]]:
    """
    Patient-level forward pass

    Each block runs conv -> activation -> pool -> readout on the current graph;
    the per-block readouts are concatenated and classified by the MLP head.

    Args:
        bag (PatchGraph): k-NN graph of the patient's patches
        params (ModelParams): Weights
        cfg (ModelConfig): Architecture

    Returns:
        Tuple of (two logits, pooled graph after every block)
    """
    if bag.num_nodes == 0:
        raise EmptyGraphError("cannot classify an empty bag")
    if bag.features.shape[1] != cfg.input_dim:
        raise DimensionError(f"bag features have dimension {bag.features.shape[1]}, model expects {cfg.input_dim}")

    g = bag
    x = constant(bag.features)
    readouts = []
    block_graphs = []
    for block in params.blocks:
        x = activation(block.conv.forward(add_self_loops(g), x), cfg.conv_activation, cfg.leaky_slope)
        g, x, _ = block.pool.forward(g, x)
        readouts.append(readout(x))
        block_graphs.append(g)

    logits = mlp_forward(concat(readouts, axis=0), params.mlp, cfg.mlp_activation)
    return logits, block_graphs
