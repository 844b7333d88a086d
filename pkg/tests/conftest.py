from typing import Callable, List

import numpy as np
import pytest

from autodiff import Parameter
from data_io.bags import EmbeddingBag
from data_io.synthetic import SyntheticConfig, generate_synthetic
from helpers.settings import ModelConfig


def numerical_gradient(loss_fn: Callable[[], float], param: Parameter, h: float = 1e-5) -> np.ndarray:
    """Central differences of loss_fn with respect to every entry of param"""
    base = param.data.copy()
    grad = np.zeros_like(base)
    for index in np.ndindex(base.shape):
        plus = base.copy()
        plus[index] += h
        param.data = plus
        f_plus = loss_fn()
        minus = base.copy()
        minus[index] -= h
        param.data = minus
        f_minus = loss_fn()
        grad[index] = (f_plus - f_minus) / (2 * h)
    param.data = base
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.linalg.norm(analytic - numeric) /
                 max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12))


def gradients_agree(analytic: np.ndarray, numeric: np.ndarray, tolerance: float = 1e-4) -> bool:
    # Entries that are zero up to round-off have no meaningful relative error
    return relative_error(analytic, numeric) < tolerance or np.linalg.norm(analytic - numeric) < 1e-8


def make_bag(rng: np.random.Generator, rows: int, dim: int, label: int = 1,
             patient_id: str = 'p000', slides: int = 2) -> EmbeddingBag:
    slide_ids = [f"{patient_id}_slide{i % slides}" for i in range(rows)]
    stains = ['H&E' if i % slides == 0 else 'CD20' for i in range(rows)]
    return EmbeddingBag(patient_id, label, rng.normal(size=(rows, dim)), slide_ids, stains)


def small_model_config(**changes) -> ModelConfig:
    values = dict(input_dim=6, hidden_dim=8, num_blocks=4, heads=2, mlp_hidden=[16, 8])
    values.update(changes)
    return ModelConfig(**values)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cohort(rng) -> List[EmbeddingBag]:
    """Ten patients, five per class, eight to twelve rows of width 6"""
    bags = []
    for index in range(10):
        rows = int(rng.integers(8, 13))
        bags.append(make_bag(rng, rows, 6, label=index % 2, patient_id=f"patient_{index:03d}"))
    return bags


@pytest.fixture
def synthetic_manifest(tmp_path):
    cfg = SyntheticConfig(num_patients=12, feature_dim=8, patches_per_slide=(5, 8),
                          slides_per_patient=(1, 2), seed=3)
    return generate_synthetic(tmp_path / 'dataset', cfg)
