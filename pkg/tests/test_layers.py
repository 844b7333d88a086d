from fractions import Fraction
import math

import numpy as np
import pytest

from autodiff import Parameter, backward, constant, mul, total
from conftest import gradients_agree, numerical_gradient
from graphs.knn_graph import add_self_loops, build_knn_graph, normalized_adjacency
from helpers.errors import ContractError, DegenerateProjectionError, DimensionError
from layers.base_layer import pooled_size, top_rank
from layers.gat_layer import GATConv, GatLayerParams, gat_forward
from layers.gcn_layer import GCNConv, gcn_forward
from layers.readout import mlp_forward, readout
from layers.sag_pool import SagPoolParams, sagpool, sagpool_scores
from layers.topk_pool import TopKPoolParams, topk_pool


def dense_gat(features, edges, weights, attention, slope=0.2):
    """Masked dense attention: row u attends over every v with an edge v -> u"""
    n = features.shape[0]
    mask = np.zeros((n, n), dtype=bool)
    mask[edges[:, 1], edges[:, 0]] = True
    heads = []
    for w, a in zip(weights, attention):
        h = features @ w
        f_out = w.shape[1]
        raw = (h @ a[:f_out])[:, None] + (h @ a[f_out:])[None, :]
        raw = np.where(raw >= 0, raw, slope * raw)
        raw = np.where(mask, raw, -np.inf)
        raw = raw - raw.max(axis=1, keepdims=True)
        alpha = np.exp(raw)
        alpha /= alpha.sum(axis=1, keepdims=True)
        heads.append(alpha @ h)
    return np.mean(heads, axis=0)


def dense_gcn(features, edges, weight):
    n = features.shape[0]
    a = np.zeros((n, n))
    off = edges[edges[:, 0] != edges[:, 1]]
    a[off[:, 0], off[:, 1]] = 1.0
    a = np.maximum(a, a.T) + np.eye(n)
    degree = a.sum(axis=1)
    return (a / np.sqrt(np.outer(degree, degree))) @ features @ weight


def random_graph(rng, n, f, k):
    return add_self_loops(build_knn_graph(rng.normal(size=(n, f)), k))


class TestGat:
    def test_matches_dense_reference(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n = int(rng.integers(1, 21))
            f_in, f_out, heads = int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 4))
            g = random_graph(rng, n, f_in, int(rng.integers(1, 6)))
            layer = GATConv.initialize('gat', f_in, f_out, heads, rng)
            out = layer.forward(g, constant(g.features)).data
            expected = dense_gat(g.features, g.edges,
                                 [w.data for w in layer.params.weights],
                                 [a.data for a in layer.params.attention])
            np.testing.assert_allclose(out, expected, atol=1e-10, rtol=0)

    def test_requires_self_loops(self, rng):
        g = build_knn_graph(rng.normal(size=(5, 3)), 2)
        layer = GATConv.initialize('gat', 3, 4, 1, rng)
        with pytest.raises(ContractError):
            layer.forward(g, constant(g.features))

    def test_parameter_names_and_shapes(self, rng):
        layer = GATConv.initialize('block0.conv', 3, 4, 2, rng)
        names = {name: p.shape for name, p in layer.named_parameters().items()}
        assert names == {'block0.conv.head0.W': (3, 4), 'block0.conv.head0.a': (8,),
                         'block0.conv.head1.W': (3, 4), 'block0.conv.head1.a': (8,)}

    def test_head_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            GatLayerParams([Parameter(np.ones((3, 4)), 'w')], [Parameter(np.ones(4), 'a')])

    def test_gradients(self, rng):
        g = random_graph(rng, 7, 3, 2)
        layer = GATConv.initialize('gat', 3, 2, 2, rng)
        x = Parameter(g.features, 'x')
        mix = constant(rng.normal(size=(7, 2)))

        def loss():
            return total(mul(gat_forward(g, x, layer.params), mix))

        backward(loss(), [x, *layer.parameters()])
        for param in [x, *layer.parameters()]:
            numeric = numerical_gradient(lambda: loss().item(), param)
            assert gradients_agree(param.grad, numeric), param.name


class TestGcn:
    def test_matches_dense_reference(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            n = int(rng.integers(1, 21))
            f_in, f_out = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            g = build_knn_graph(rng.normal(size=(n, f_in)), int(rng.integers(1, 6)))
            layer = GCNConv.initialize('gcn', f_in, f_out, 1, rng)
            out = layer.forward(g, constant(g.features)).data
            np.testing.assert_allclose(out, dense_gcn(g.features, g.edges, layer.weight.data), atol=1e-10, rtol=0)

    def test_gradients(self, rng):
        g = build_knn_graph(rng.normal(size=(6, 3)), 2)
        w = Parameter(rng.normal(size=(3, 2)), 'w')
        x = Parameter(g.features, 'x')
        mix = constant(rng.normal(size=(6, 2)))
        adj = normalized_adjacency(g)

        def loss():
            return total(mul(gcn_forward(adj, x, w), mix))

        backward(loss(), [x, w])
        for param in (x, w):
            assert gradients_agree(param.grad, numerical_gradient(lambda: loss().item(), param)), param.name


class TestSagPool:
    @pytest.mark.parametrize('ratio', ['0.5', '0.8', '1.0'])
    def test_kept_size_is_ceiling(self, ratio):
        rng = np.random.default_rng(13)
        for n in range(1, 51):
            g = build_knn_graph(rng.normal(size=(n, 4)), 3)
            params = SagPoolParams(Parameter(rng.normal(size=4), 'theta'), float(ratio))
            pooled, x, kept = sagpool(g, constant(g.features), params)
            expected = math.ceil(Fraction(ratio) * n)
            assert kept.size == expected == pooled.num_nodes == x.shape[0]
            assert np.all(np.diff(kept) > 0)

    def test_ratio_one_preserves_graph(self, rng):
        g = build_knn_graph(rng.normal(size=(15, 4)), 3)
        params = SagPoolParams(Parameter(rng.normal(size=4), 'theta'), 1.0)
        pooled, _, kept = sagpool(g, constant(g.features), params)
        np.testing.assert_array_equal(kept, np.arange(15))
        assert pooled.edge_set() == g.edge_set()

    def test_scores_bounded(self, rng):
        g = build_knn_graph(rng.normal(size=(20, 4)) * 100, 3)
        scores = sagpool_scores(g, constant(g.features), Parameter(rng.normal(size=4), 'theta')).data
        assert np.all(np.abs(scores) <= 1.0)

    def test_kept_features_are_gated_by_score(self, rng):
        g = build_knn_graph(rng.normal(size=(10, 3)), 2)
        theta = Parameter(rng.normal(size=3), 'theta')
        x = constant(g.features)
        scores = sagpool_scores(g, x, theta).data
        _, pooled_x, kept = sagpool(g, x, SagPoolParams(theta, 0.5))
        np.testing.assert_allclose(pooled_x.data, g.features[kept] * scores[kept][:, None])
        assert np.all(scores[kept].min() >= np.delete(scores, kept))

    def test_gradients_through_gate(self, rng):
        g = build_knn_graph(rng.normal(size=(8, 3)), 2)
        theta = Parameter(rng.normal(size=3), 'theta')
        x = Parameter(g.features, 'x')
        params = SagPoolParams(theta, 0.5)

        def loss():
            return total(readout(sagpool(g, x, params)[1]))

        backward(loss(), [x, theta])
        for param in (x, theta):
            assert gradients_agree(param.grad, numerical_gradient(lambda: loss().item(), param)), param.name

    def test_invalid_ratio(self):
        with pytest.raises(ContractError):
            SagPoolParams(Parameter(np.ones(2), 'theta'), 0.0)


class TestTopKPool:
    def test_selects_by_projection(self):
        features = np.array([[1.0, 0.0], [3.0, 0.0], [2.0, 0.0], [0.0, 5.0]])
        g = build_knn_graph(features, 1)
        params = TopKPoolParams(Parameter(np.array([2.0, 0.0]), 'p'), 0.5)
        pooled, x, kept = topk_pool(g, constant(features), params)
        np.testing.assert_array_equal(kept, [1, 2])
        gate = 1.0 / (1.0 + np.exp(-np.array([3.0, 2.0])))
        np.testing.assert_allclose(x.data, features[[1, 2]] * gate[:, None])
        assert pooled.num_nodes == 2

    def test_zero_projection(self, rng):
        g = build_knn_graph(rng.normal(size=(4, 2)), 1)
        with pytest.raises(DegenerateProjectionError):
            topk_pool(g, constant(g.features), TopKPoolParams(Parameter(np.zeros(2), 'p'), 0.5))

    def test_gradients(self, rng):
        g = build_knn_graph(rng.normal(size=(8, 3)), 2)
        p = Parameter(rng.normal(size=3), 'p')
        x = Parameter(g.features, 'x')
        params = TopKPoolParams(p, 0.5)

        def loss():
            return total(readout(topk_pool(g, x, params)[1]))

        backward(loss(), [x, p])
        for param in (x, p):
            assert gradients_agree(param.grad, numerical_gradient(lambda: loss().item(), param)), param.name


class TestReadoutAndMlp:
    def test_readout_is_mean_then_max(self):
        x = constant(np.array([[1.0, -2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(readout(x).data, [2.0, 1.0, 3.0, 4.0])

    def test_mlp_shapes(self, rng):
        layers = [(Parameter(rng.normal(size=(4, 3)), 'w0'), Parameter(np.zeros(3), 'b0')),
                  (Parameter(rng.normal(size=(3, 2)), 'w1'), Parameter(np.zeros(2), 'b1'))]
        out = mlp_forward(constant(rng.normal(size=4)), layers)
        assert out.shape == (2,)


class TestHelpers:
    def test_pooled_size(self):
        assert pooled_size(1, 0.5) == 1
        assert pooled_size(10, 0.8) == 8
        assert pooled_size(7, 0.8) == 6
        assert pooled_size(5, 1.0) == 5

    def test_top_rank_ties_prefer_lower_index(self):
        np.testing.assert_array_equal(top_rank(np.array([1.0, 2.0, 2.0, 2.0]), 0.5), [1, 2])
