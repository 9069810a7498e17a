import numpy as np
import pytest

from collective_intent.comms import NetworkModel
from collective_intent.harness.dataset import (generate_dataset, load_dataset, neighbor_mean_table, save_dataset,
                                               split_indices, window_indices)
from collective_intent.harness.evaluate import transported_neighbor_means


@pytest.fixture(scope="module")
def tiny():
    return generate_dataset(1, 50, ticks=60, seed=3)


def test_split_arithmetic_and_partition():
    tr, va, te = split_indices(100, 0)
    assert (len(tr), len(va), len(te)) == (60, 20, 20)
    assert sorted(tr + va + te) == list(range(100))
    assert split_indices(100, 0) == (tr, va, te)
    assert split_indices(100, 1) != (tr, va, te)


def test_too_few_episodes():
    with pytest.raises(ValueError):
        generate_dataset(1, 10)


def test_episodes_record_four_robots(tiny):
    ep = tiny.episodes[0]
    assert ep.n_robots == 4 and ep.n_ticks == 60
    assert ep.keypoints.shape == (4, 60, 34)
    # keypoints are zero whenever the human was not detected
    assert not ep.keypoints[~ep.human_seen].any()
    assert len(set(tiny.seeds)) == 50


def test_save_load_round_trip(tiny, tmp_path):
    p = save_dataset(tiny, tmp_path / "d.npz")
    back = load_dataset(p)
    assert (back.train, back.val, back.test) == (tiny.train, tiny.val, tiny.test)
    assert back.perception == tiny.perception
    for a, b in zip(tiny.episodes, back.episodes):
        assert a.config == b.config
        assert np.array_equal(a.detected, b.detected) and np.array_equal(a.keypoints, b.keypoints)


def test_window_indices():
    assert window_indices(10).tolist() == list(range(10))
    assert window_indices(10, 5).tolist() == [0, 2, 4, 7, 9]
    assert window_indices(10, 3).tolist() == [0, 4, 9]
    assert window_indices(10, 10).tolist() == list(range(10))


def test_transport_mean_matches_table_and_oracle():
    rng = np.random.default_rng(0)
    R, T, E = 3, 25, 6
    emb = rng.standard_normal((R, T, E))
    seen = rng.random((R, T)) > 0.3
    got, cnt = transported_neighbor_means(emb, seen, [0, 1, 2], NetworkModel())
    table = neighbor_mean_table(emb, seen, [0, 1, 2])
    for i in range(R):
        for t in range(T):
            others = [emb[j, t] for j in range(R) if j != i and seen[j, t]]
            want = np.mean(others, axis=0) if others else np.zeros(E)
            assert np.array_equal(got[i, t], want)
            assert cnt[i, t] == len(others)
    np.testing.assert_allclose(table, got, atol=1e-12)


def test_dump_hook_sees_every_delivery():
    emb = np.ones((2, 3, 2))
    seen = np.ones((2, 3), dtype=bool)
    log = []
    transported_neighbor_means(emb, seen, [0, 1], NetworkModel(), on_deliver=lambda r, t, m: log.append((r, t)))
    assert sorted(log) == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
