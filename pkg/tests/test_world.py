import dataclasses
import math

import numpy as np
import pytest

from collective_intent.geometry import obstacles_distance, point_in_polygon
from collective_intent.harness.dataset import balanced_anchors, generate_dataset, phase_frequencies
from collective_intent.world import (ConfigError, EpisodeLog, UnreachableStationError, default_config,
                                     generate_episode, generate_world, planner_for, step_world,
                                     validate_config)


def first_leg(ep):
    j = next(i for i, s in enumerate(ep.states) if s.arrived)
    return np.array([s.human_pos for s in ep.states[:j + 1]])


def test_seed_changes_start():
    a = generate_world(default_config(1, seed=7))
    b = generate_world(default_config(1, seed=8))
    assert a.human_pos != b.human_pos


def test_scenario_one_rejects_obstacles():
    cfg = default_config(1).with_(obstacles=default_config(2).obstacles)
    with pytest.raises(ConfigError):
        generate_world(cfg)


def test_unreachable_station():
    box = ((3.0, 10.5), (5.0, 10.5), (5.0, 12.5), (3.0, 12.5))    # covers station 1
    cfg = default_config(2).with_(obstacles=default_config(2).obstacles + (box,))
    with pytest.raises(UnreachableStationError):
        generate_world(cfg)


@pytest.mark.parametrize("bad", [dict(scenario=4), dict(n_robots=5), dict(human_speed=-1.0)])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        validate_config(default_config(1).with_(**bad))


def test_deterministic_episode(tmp_path):
    cfg = default_config(3, seed=11)
    a, b = generate_episode(cfg, 600), generate_episode(cfg, 600)
    assert [s.to_record() for s in a.states] == [s.to_record() for s in b.states]
    a.dump(tmp_path / "ep.jsonl")
    c = EpisodeLog.load(tmp_path / "ep.jsonl")
    assert [s.to_record() for s in c.states] == [s.to_record() for s in a.states]
    assert c.config == cfg


def test_short_episode_rejected():
    with pytest.raises(ValueError):
        generate_episode(default_config(1), 59)


@pytest.mark.parametrize("seed", range(8))
def test_scenario_one_walks_straight(seed):
    cfg = default_config(1, seed=seed)
    ep = generate_episode(cfg, 300)
    P = first_leg(ep)
    goal = np.array(cfg.stations[ep.states[0].goal - 1])
    u = (goal - P[0]) / np.linalg.norm(goal - P[0])
    d = P - P[0]
    assert np.abs(d[:, 0] * u[1] - d[:, 1] * u[0]).max() < 1e-9


def test_scenario_two_detours_around_blocking_obstacle():
    cfg = default_config(2, seed=0)
    # put the human left of the central block and send it to a station straight across it
    start, goal = (8.0, 7.5), (12.0, 7.5)
    cfg = cfg.with_(stations=(cfg.stations[0], goal) + cfg.stations[2:])
    state = dataclasses.replace(generate_world(cfg), human_pos=start, goal=2,
                                path=tuple(planner_for(cfg).plan(start, goal)[1:]))
    assert any(point_in_polygon(p, cfg.obstacles[0]) for p in np.linspace(start, goal, 50))
    P = [start]
    for _ in range(200):
        state = step_world(state, cfg)
        assert obstacles_distance(state.human_pos, cfg.obstacles) > 0
        P.append(state.human_pos)
        if state.arrived:
            break
    assert state.arrived
    P = np.array(P)
    assert np.abs(P[:, 1] - 7.5).max() > 0.5


def test_dwell_holds_position_and_label():
    cfg = default_config(1, seed=3)
    ep = generate_episode(cfg, 300)
    j = next(i for i, s in enumerate(ep.states) if s.arrived)
    st = ep.states[j]
    nxt = ep.states[j + 1]
    assert nxt.phase == "stationary" and nxt.human_pos == st.human_pos
    assert ep.labels[j + 1] == st.goal


@pytest.mark.parametrize("scenario", [1, 2, 3])
def test_safety_and_label_consistency(scenario):
    for seed in range(4):
        cfg = default_config(scenario, seed=seed)
        ep = generate_episode(cfg, 400)
        xmin, ymin, xmax, ymax = cfg.bounds
        arrivals = [i for i, s in enumerate(ep.states) if s.arrived]
        for k, s in enumerate(ep.states):
            x, y = s.human_pos
            assert xmin < x < xmax and ymin < y < ymax
            if cfg.obstacles:
                assert obstacles_distance(s.human_pos, cfg.obstacles) > 0
            dwelling = s.phase == "stationary" and s.dwell_left > 0
            nxt = [j for j in arrivals if j >= k]
            if dwelling:
                # holding at a station: the label is that station
                sx, sy = cfg.stations[ep.labels[k] - 1]
                assert math.hypot(x - sx, y - sy) < 1e-9
            elif nxt:
                assert ep.labels[k] == ep.states[nxt[0]].goal


def test_path_length_grows_with_obstacles():
    def leg(scenario, seed):
        ep = generate_episode(default_config(scenario, seed=seed), 600)
        P = first_leg(ep)
        return np.linalg.norm(np.diff(P, axis=0), axis=1).sum()
    seeds = range(12)
    assert np.mean([leg(2, s) for s in seeds]) >= np.mean([leg(1, s) for s in seeds])


def test_no_human_gets_stuck():
    for scenario in (2, 3):
        for seed in range(12):
            ep = generate_episode(default_config(scenario, seed=seed), 600)
            assert any(s.arrived for s in ep.states), (scenario, seed)


@pytest.mark.slow
def test_balanced_phase_frequencies():
    ds = generate_dataset(1, 60, ticks=300, seed=5)
    anchors = balanced_anchors(ds.episodes, 20, 20, seed=0)
    freq = phase_frequencies(ds.episodes, anchors)
    assert all(0.28 <= f <= 0.39 for f in freq.values())
