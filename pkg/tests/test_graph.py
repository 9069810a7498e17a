import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collective_intent.graph import (MissingHumanError, SceneGraph, build_star_graph, normalize_adjacency,
                                     star_adjacency_batch)
from collective_intent.perception import Detection

from oracles import star_adjacency_dense


def det(kind, center, oid=-1):
    return Detection(kind, (1.0, 0.0), center, (10.0, 10.0), 0, 0, oid)


def feats(n, dim=8):
    return {k: np.full(dim, float(k)) for k in range(n)}


def test_human_plus_three_objects_is_a_star():
    ds = [det("crate", (10, 10), 0), det("human", (0, 0)), det("box", (3, 4), 1), det("desk", (0, 7), 2)]
    g = build_star_graph(ds, feats(4))
    assert g.n_nodes == 4 and g.kinds[0] == "human"
    A = g.adjacency()
    assert np.count_nonzero(A[1:, 1:]) == 0
    assert np.count_nonzero(A[0]) == 3
    # node features follow the reordering (human first)
    assert g.features[0][0] == 1.0


def test_human_alone():
    g = build_star_graph([det("human", (5, 5))], feats(1))
    assert g.n_nodes == 1 and g.weights.size == 0
    assert normalize_adjacency(g).tolist() == [[1.0]]


def test_pixel_offset_three_four_gives_weight_five():
    g = build_star_graph([det("human", (0, 0)), det("box", (3, 4), 0)], feats(2))
    assert g.weights[0] == 5.0


def test_affinity_option():
    g = build_star_graph([det("human", (0, 0)), det("box", (3, 4), 0)], feats(2), edge_affinity=True,
                         affinity_scale=5.0)
    assert g.weights[0] == pytest.approx(np.exp(-1.0))


def test_missing_human():
    with pytest.raises(MissingHumanError):
        build_star_graph([det("box", (3, 4), 0)], feats(1))


def test_unit_weight_pair():
    g = SceneGraph(["human", "box"], np.zeros((2, 4)), np.array([1.0]))
    np.testing.assert_allclose(normalize_adjacency(g), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_zero_weights_give_identity():
    g = SceneGraph(["human"] + ["box"] * 4, np.zeros((5, 4)), np.zeros(4))
    assert np.array_equal(normalize_adjacency(g), np.eye(5))


weights = st.lists(st.floats(0.0, 800.0, allow_nan=False), min_size=0, max_size=7)


@settings(max_examples=200, deadline=None)
@given(weights)
def test_matches_dense_oracle_and_is_symmetric(w):
    w = np.array(w)
    g = SceneGraph(["human"] + ["box"] * len(w), np.zeros((len(w) + 1, 2)), w)
    A = normalize_adjacency(g)
    np.testing.assert_allclose(A, star_adjacency_dense(w), rtol=0, atol=1e-12)
    assert np.abs(A - A.T).max() == 0.0
    assert np.isfinite(A).all()


@settings(max_examples=100, deadline=None)
@given(weights.filter(lambda w: len(w) >= 2), st.randoms(use_true_random=False))
def test_permuting_objects_permutes_adjacency(w, rnd):
    w = np.array(w)
    perm = list(range(len(w)))
    rnd.shuffle(perm)
    mk = lambda ww: normalize_adjacency(SceneGraph(["human"] + ["box"] * len(ww), np.zeros((len(ww) + 1, 2)), ww))
    A, B = mk(w), mk(w[perm])
    P = np.r_[0, np.array(perm) + 1]
    np.testing.assert_allclose(B, A[np.ix_(P, P)], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 500), st.booleans()), min_size=1, max_size=8))
def test_padded_batch_matches_per_graph(slots):
    w = np.array([s[0] for s in slots])
    mask = np.array([s[1] for s in slots])
    A = star_adjacency_batch(w[None], mask[None])[0]
    keep = np.r_[0, np.flatnonzero(mask) + 1]
    np.testing.assert_allclose(A[np.ix_(keep, keep)], star_adjacency_dense(w[mask]), atol=1e-12)
    drop = np.setdiff1d(np.arange(len(w) + 1), keep)
    assert not A[drop].any() and not A[:, drop].any()
