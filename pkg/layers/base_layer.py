import math
from abc import ABC, abstractmethod
from typing import Dict, List, Tuple

import numpy as np

from autodiff import Parameter, Value
from graphs.knn_graph import PatchGraph


def glorot_uniform(rng: np.random.Generator, shape: Tuple[int, ...], name: str) -> Parameter:
    """Glorot-uniform parameter; vectors use fan_in = length, fan_out = 1"""
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-bound, bound, size=shape), name=name)


def pooled_size(num_nodes: int, ratio: float) -> int:
    """ceil(ratio * N), robust to binary rounding of the ratio (never below 1)"""
    return max(1, math.ceil(round(ratio * num_nodes, 9)))


class GraphConvolution(ABC):
    def __init__(self, name: str):
        """
        Base class for message-passing layers

        Args:
            name (str): Prefix of every parameter name owned by the layer
        """
        self.name = name

    @abstractmethod
    def forward(self, g: PatchGraph, x: Value) -> Value:
        """
        Propagate node features over the graph

        Args:
            g (PatchGraph): Graph whose nodes index the rows of x
            x (Value): [N×F_in] node features

        Returns:
            [N×F_out] node features, before the inter-block activation
        """
        pass

    @abstractmethod
    def parameters(self) -> List[Parameter]:
        pass

    def named_parameters(self) -> Dict[str, Parameter]:
        return {param.name: param for param in self.parameters()}


class GraphPooling(ABC):
    def __init__(self, name: str, ratio: float):
        """
        Base class for top-rank node selection layers

        Args:
            name (str): Prefix of every parameter name owned by the layer
            ratio (float): Fraction of nodes kept, in (0, 1]
        """
        self.name = name
        self.ratio = ratio

    @abstractmethod
    def forward(self, g: PatchGraph, x: Value) -> Tuple[PatchGraph, Value, np.ndarray]:
        """
        Score nodes, keep the top ceil(ratio*N) and gate their features

        Returns:
            Tuple of (pooled graph, pooled features, kept node ids ascending)
        """
        pass

    @abstractmethod
    def parameters(self) -> List[Parameter]:
        pass


def top_rank(scores: np.ndarray, ratio: float) -> np.ndarray:
    """Indices of the top ceil(ratio*N) scores, ties to the lower index, returned ascending"""
    count = pooled_size(scores.shape[0], ratio)
    # Stable sort of the negated scores keeps equal scores in index order
    order = np.argsort(-scores, kind='stable')
    return np.sort(order[:count])
