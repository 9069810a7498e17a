import time

import numpy as np
import pytest

from collective_intent.graph import SceneGraph, normalize_adjacency
from collective_intent.models.functional import DimensionError, softmax
from collective_intent.models.gcn import (GcnParams, gcn_embed_backward, gcn_embed_batch, gcn_forward,
                                          gcn_forward_batch, human_embedding)

from oracles import gcn_dense, numeric_grad, rel_error, star_adjacency_dense


def rand_params(rng, d=6, h=5, e=4):
    p = GcnParams.init(d, h, e, seed=int(rng.integers(1 << 30)))
    p.b1[:] = rng.standard_normal(h) * 0.1
    p.b2[:] = rng.standard_normal(e) * 0.1
    return p


def oracle(A, X, p):
    return gcn_dense(A, X, p.w1, p.b1, p.w2, p.b2, p.head_w, p.head_b)


def test_random_star_graphs_match_dense_oracle():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    for _ in range(100):
        n = int(rng.integers(1, 9))
        p = rand_params(rng)
        w = rng.uniform(0, 300, n - 1)
        A = star_adjacency_dense(w)
        X = rng.standard_normal((n, 6))
        H2, lg = gcn_forward(A, X, p)
        H2o, lgo = oracle(A, X, p)
        assert np.abs(H2 - H2o).max() < 1e-10
        assert np.abs(lg - lgo).max() < 1e-10
    assert time.perf_counter() - t0 < 5.0


def test_single_node_reduces_to_mlp():
    rng = np.random.default_rng(1)
    p = GcnParams.init(4, 4, 3, seed=2)
    p.w1[:] = np.eye(4)
    x = rng.standard_normal((1, 4))
    H2, _ = gcn_forward(np.ones((1, 1)), x, p)
    np.testing.assert_allclose(H2, np.maximum(x @ p.w1, 0) @ p.w2, atol=1e-15)


def test_zero_features_zero_bias_gives_uniform_softmax():
    p = GcnParams.init(6, 5, 4, seed=0)
    A = normalize_adjacency(SceneGraph(["human", "box", "desk"], np.zeros((3, 6)), np.array([3.0, 4.0])))
    H2, lg = gcn_forward(A, np.zeros((3, 6)), p)
    assert not H2.any()
    np.testing.assert_allclose(softmax(lg), 0.25)


def test_human_embedding_is_row_zero_and_permutation_safe():
    H = np.arange(12.0).reshape(3, 4)
    assert human_embedding(H).tolist() == H[0].tolist()
    assert human_embedding(H[[0, 2, 1]]).tolist() == H[0].tolist()
    assert human_embedding(H[:1]).tolist() == H[0].tolist()
    with pytest.raises(DimensionError):
        human_embedding(np.zeros((0, 4)))


def test_object_order_does_not_change_human_row():
    rng = np.random.default_rng(3)
    p = rand_params(rng)
    w = rng.uniform(0, 200, 4)
    X = rng.standard_normal((5, 6))
    H2a, la = gcn_forward(star_adjacency_dense(w), X, p)
    perm = [3, 0, 2, 1]
    H2b, lb = gcn_forward(star_adjacency_dense(w[perm]), X[np.r_[0, np.array(perm) + 1]], p)
    np.testing.assert_allclose(H2a[0], H2b[0], atol=1e-12)
    np.testing.assert_allclose(la, lb, atol=1e-12)


def test_dimension_errors():
    p = GcnParams.init(6, 5, 4)
    with pytest.raises(DimensionError):
        gcn_forward(np.eye(3), np.zeros((2, 6)), p)
    with pytest.raises(DimensionError):
        gcn_forward(np.eye(2), np.zeros((2, 5)), p)


def test_embed_path_equals_full_forward_row_zero():
    rng = np.random.default_rng(4)
    p = rand_params(rng)
    A = np.stack([star_adjacency_dense(rng.uniform(0, 100, 3)) for _ in range(7)])
    X = rng.standard_normal((7, 4, 6))
    H2, lg, _ = gcn_forward_batch(A, X, p)
    emb, lg2, _ = gcn_embed_batch(A, X, p)
    np.testing.assert_allclose(emb, H2[:, 0], atol=1e-12)
    np.testing.assert_allclose(lg, lg2, atol=1e-12)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(5)
    p = rand_params(rng)
    A = np.stack([star_adjacency_dense(rng.uniform(0, 3, 3)) for _ in range(4)])
    X = rng.standard_normal((4, 4, 6))
    gemb = rng.standard_normal((4, 4))
    glog = rng.standard_normal((4, 4))

    def f():
        emb, lg, _ = gcn_embed_batch(A, X, p)
        return float((emb * gemb).sum() + (lg * glog).sum())

    _, _, cache = gcn_embed_batch(A, X, p)
    grads = gcn_embed_backward(cache, gemb, glog, p)
    for name, t in p.tensors().items():
        assert rel_error(grads[name], numeric_grad(f, t)) < 1e-6, name
