import numpy as np

from autodiff import Value, gather_rows, log_softmax, reshape, scale
from helpers.errors import ContractError


def cross_entropy(logits: Value, label: int) -> Value:
    """-log softmax(logits)[label], stable for large logits"""
    if label not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {label}")
    picked = gather_rows(log_softmax(logits), [label])
    return reshape(scale(picked, -1.0), ())


def positive_probability(logits: Value) -> float:
    """Softmax component 1 of a two-logit output"""
    shifted = logits.data - logits.data.max()
    exp = np.exp(shifted)
    return float(exp[1] / exp.sum())
