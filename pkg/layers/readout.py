from typing import List, Tuple

from autodiff import Value, activation, add_bias, concat, matmul, reduce, reshape
from helpers.errors import DimensionError, EmptyGraphError


def readout(x: Value) -> Value:
    """Column-wise mean concatenated with column-wise max: [N×F] -> [2F]"""
    if x.shape[0] == 0:
        raise EmptyGraphError("readout of an empty graph")
    return concat([reduce(x, 'mean'), reduce(x, 'max')], axis=0)


def mlp_forward(s: Value, layers: List[Tuple[Value, Value]], kind: str = 'relu') -> Value:
    """
    Affine layers with an activation between them and none after the last

    Args:
        s (Value): [d] graph representation
        layers (List[Tuple[Value, Value]]): (W [d_in×d_out], b [d_out]) per layer
        kind (str): Activation between layers

    Returns:
        Output vector of the last layer (two logits in the default model)
    """
    if s.data.ndim != 1:
        raise DimensionError(f"MLP input must be a vector, got {s.shape}")
    hidden = reshape(s, (1, s.shape[0]))
    for index, (w, b) in enumerate(layers):
        hidden = add_bias(matmul(hidden, w), b)
        if index < len(layers) - 1:
            hidden = activation(hidden, kind)
    return reshape(hidden, (hidden.shape[1],))
