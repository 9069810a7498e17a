"""Closed-loop evaluation of a team of robots on recorded test episodes.

Neighbor embeddings travel through the simulated transport and consensus runs
on the prediction messages each robot actually received.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..baselines import InsufficientHistoryError, KalmanTrack, cvm_predict, kalman_step
from ..comms import EmbeddingMsg, NetworkModel, PredictionMsg, Transport, aggregate_embeddings
from ..consensus import VoteInput, decide
from ..models.functional import softmax
from ..models.gru import sequence_forward
from ..models.temporal import IntentModel, collective_inputs
from ..perception import FeatureEncoder, PoseKeypoints, head_position_world
from .dataset import EpisodeRecord, balanced_anchors, embedding_table, window_indices

log = logging.getLogger(__name__)


@dataclass
class TeamPredictions:
    """Per (episode, robot, anchor tick) predictions for one model."""
    samples: np.ndarray                 # (K, 3) episode, robot, tick
    pred: np.ndarray                    # (K, n + 1) StationIds for t .. t+n
    labels: np.ndarray                  # (K, n + 1)
    confidence: np.ndarray              # (K,)
    consensus: dict = field(default_factory=dict)


def eval_samples(episodes, team, obs: int, n: int, seed: int, per_phase: int | None = None):
    """Balanced anchors and, per anchor, every team robot that saw the human in the window."""
    anchors = balanced_anchors(episodes, obs, n, seed, per_phase)
    out = []
    for e, t in anchors:
        seen = episodes[e].human_seen
        out.extend((e, r, t) for r in team if seen[r, t - obs + 1:t + 1].any())
    return anchors, np.array(out, dtype=np.int64).reshape(-1, 3)


def transported_neighbor_means(emb: np.ndarray, seen: np.ndarray, team, network: NetworkModel,
                               episode_key: int = 0, on_deliver=None):
    """Run the embedding exchange tick by tick.

    Returns (neighbor mean (R, T, E), neighbor count (R, T)).
    """
    R, T, E = emb.shape
    net = NetworkModel(network.p_drop, network.latency, hash((network.seed, episode_key)) & 0xFFFFFFFF)
    tr = Transport(team, net, on_deliver)
    nm = np.zeros((R, T, E), dtype=emb.dtype)
    cnt = np.zeros((R, T), dtype=np.int64)
    for t in range(T):
        for j in team:
            if seen[j, t]:
                tr.publish(EmbeddingMsg(int(j), t, emb[j, t]), t)
        for i in team:
            msgs, _ = tr.collect(int(i), t)
            nm[i, t] = aggregate_embeddings(msgs, E)
            cnt[i, t] = len(msgs)
    return nm, cnt


def _last_seen(seen_row: np.ndarray, t: int, obs: int) -> int:
    w = np.flatnonzero(seen_row[t - obs + 1:t + 1])
    return t - obs + 1 + int(w[-1])


def predict_team(model: IntentModel, episodes, samples: np.ndarray, team, encoder: FeatureEncoder,
                 network: NetworkModel | None = None, on_deliver=None, batch: int = 1024) -> TeamPredictions:
    network = network or NetworkModel()
    n = model.n_forecast
    obs = model.obs_frames
    offs = window_indices(obs, model.subsample)
    K = len(samples)
    logits_all = np.zeros((K, n + 1, 4))
    labels = np.zeros((K, n + 1), dtype=np.int64)
    dtype = model.gcn.w1.dtype
    for e in np.unique(samples[:, 0]):
        rows = np.flatnonzero(samples[:, 0] == e)
        ep: EpisodeRecord = episodes[e]
        emb, sp_logits = embedding_table(ep, model.gcn, encoder, model.edge_affinity, dtype)
        for k in rows:
            labels[k] = ep.labels[samples[k, 2]:samples[k, 2] + n + 1]
        if model.kind == "gnn":
            for k in rows:
                _, r, t = samples[k]
                logits_all[k] = sp_logits[r, _last_seen(ep.human_seen[r], t, obs)]
            continue
        if model.kind == "collective":
            nm, cnt = transported_neighbor_means(emb, ep.human_seen, team, network, int(ep.config.seed) & 0xFFFF,
                                                 on_deliver)
        for s in range(0, len(rows), batch):
            kk = rows[s:s + batch]
            r, t = samples[kk, 1], samples[kk, 2]
            ticks = (t - obs + 1)[:, None] + offs[None, :]
            x_emb = emb[r[:, None], ticks]
            x_kp = ep.keypoints[r[:, None], ticks].astype(dtype)
            if model.kind == "ego":
                X = np.concatenate([x_emb, x_kp], axis=-1)
            else:
                X = collective_inputs(x_emb, nm[r[:, None], ticks], x_kp, model.mean_includes_ego,
                                      ep.human_seen[r[:, None], ticks], cnt[r[:, None], ticks])
            lg, _ = sequence_forward(X.astype(dtype), model.gru, n)
            logits_all[kk] = lg
    probs = softmax(logits_all[:, 0] / model.temperature)
    pred = logits_all.argmax(axis=-1) + 1
    conf = probs[np.arange(K), pred[:, 0] - 1]
    return TeamPredictions(samples, pred, labels, conf)


def run_consensus(episodes, anchors: np.ndarray, preds: TeamPredictions, team, obs: int,
                  network: NetworkModel | None = None, alpha: float = 0.5, beta: float = 0.5,
                  on_deliver=None) -> dict:
    """Every active robot publishes its frame-t PredictionMsg and decides from what it holds.

    Scored per evaluated sample: each (episode, robot, tick) row of ``preds``
    is compared with the decision that robot adopted, so consensus and
    individual accuracies cover exactly the same frames. ``decisions`` is
    (K,) StationIds aligned with ``preds.samples``.
    """
    network = network or NetworkModel()
    index = {}
    for k, (e, r, t) in enumerate(preds.samples):
        index.setdefault((int(e), int(t)), []).append(k)
    K = len(preds.samples)
    decisions = np.zeros(K, dtype=np.int64)
    disagree, n_anchor = 0, 0
    lat = network.latency
    for e, t in anchors:
        ks = index.get((int(e), int(t)))
        if not ks:
            continue
        ep = episodes[e]
        counts = ep.counts
        net = NetworkModel(network.p_drop, 0, hash((network.seed, int(ep.config.seed) & 0xFFFF, 1)) & 0xFFFFFFFF)
        tr = Transport(team, net, on_deliver)
        own = {}
        for k in ks:
            r = int(preds.samples[k, 1])
            msg = PredictionMsg(r, int(t), int(preds.pred[k, 0]), float(max(preds.confidence[k], 1e-12)),
                                int(counts[r, t - obs + 1:t + 1].sum()))
            own[r] = (k, msg)
            tr.publish(msg, int(t) + lat)
        for r, (k, mine) in own.items():
            _, received = tr.collect(r, int(t) + lat)
            held = [mine] + [m for m in received if m.sender != r]
            res = decide(VoteInput([m.action for m in held], [m.confidence for m in held],
                                   [m.n_detected for m in held], alpha, beta))
            decisions[k] = res.action
        disagree += len({int(decisions[k]) for k, _ in own.values()}) > 1
        n_anchor += 1
    ok = decisions[:, None] == preds.labels
    nan = float("nan")
    return {"decisions": decisions,
            "accuracy": float(ok[:, 0].mean()) if K else nan,
            "accuracy_horizon": float(ok[:, 1:].mean()) if K and ok.shape[1] > 1 else nan,
            "disagreement_rate": disagree / n_anchor if n_anchor else nan,
            "n": K}


# ---------------------------------------------------------------- constant velocity baseline

@dataclass(frozen=True)
class CvmConfig:
    q: float = 8.0           # white-acceleration density, m^2/s^3
    noise_scale: float = 1.0  # multiplies the keypoint-jitter-derived measurement std
    min_std: float = 0.05
    max_gap: int = 10        # ticks without a measurement before the track is dropped
    behind_tol: float = 0.35  # m; stations further behind the walker are not forward
    min_history: int = 2     # young tracks use the states they have


def head_measurement_cov(robot_pose, z, pcfg, cfg: CvmConfig) -> np.ndarray:
    """World-frame covariance of a back-projected head position.

    Range comes from the keypoint's image height above the horizon, so its
    error grows with range squared; bearing error grows linearly.
    """
    from ..perception import SKELETON
    W, H = pcfg.image_size
    f = pcfg.focal
    d = np.asarray(z, dtype=float) - robot_pose[:2]
    rng_m = max(float(np.hypot(*d)), 1e-6)
    j = max(pcfg.keypoint_jitter, 1e-4) * cfg.noise_scale
    # least-squares range over all template keypoints: std = j r^2 / (f (W/H) sqrt(sum (h_k - c)^2))
    spread = float(np.sqrt(((SKELETON[:, 2] - pcfg.camera_height) ** 2).sum()))
    s_range = max(cfg.min_std, j * rng_m ** 2 / (f * (W / H) * spread))
    s_lat = max(cfg.min_std, j * rng_m / f)
    u = d / rng_m
    rot = np.array([[u[0], -u[1]], [u[1], u[0]]])
    return rot @ np.diag([s_range ** 2, s_lat ** 2]) @ rot.T


def cvm_tracks(ep: EpisodeRecord, robot: int, pcfg, cfg: CvmConfig | None = None):
    """Filtered track snapshot per tick (None before the first head measurement)."""
    cfg = cfg or CvmConfig()
    dt = ep.config.dt
    out = [None] * ep.n_ticks
    track, gap = None, 0
    for t in range(ep.n_ticks):
        z = None
        pose = ep.robot_poses[t, robot]
        if ep.human_seen[robot, t]:
            kp = PoseKeypoints(ep.keypoints[robot, t].astype(float), ep.kp_valid[robot, t])
            z = head_position_world(kp, pose, pcfg)
        if z is not None:
            R = head_measurement_cov(pose, z, pcfg, cfg)
            if track is None:
                track = KalmanTrack.start(z, dt, cfg.q, pos_var=float(np.trace(R)) / 2)
            else:
                track = kalman_step(track, z, R)
            gap = 0
        elif track is not None:
            gap += 1
            track = None if gap > cfg.max_gap else kalman_step(track, None)
        out[t] = track
    return out


def predict_cvm(episodes, samples: np.ndarray, n: int, pcfg, cfg: CvmConfig | None = None) -> TeamPredictions:
    cfg = cfg or CvmConfig()
    K = len(samples)
    pred = np.zeros((K, n + 1), dtype=np.int64)
    labels = np.zeros((K, n + 1), dtype=np.int64)
    cache = {}
    for k, (e, r, t) in enumerate(samples):
        ep = episodes[e]
        if (e, r) not in cache:
            cache[(e, r)] = cvm_tracks(ep, int(r), pcfg, cfg)
        tr = cache[(e, r)][t]
        stations = np.asarray(ep.config.stations, dtype=float)
        if tr is None:
            # lost track: fall back to the last filtered position in the window, if any
            prev = [s for s in cache[(e, r)][max(0, t - 30):t + 1] if s is not None]
            tr = prev[-1] if prev else None
        if tr is None:
            sid = 1
        else:
            try:
                sid = cvm_predict(tr, stations, cfg.behind_tol, cfg.min_history)
            except InsufficientHistoryError:
                d = np.hypot(*(stations - tr.position).T)
                sid = int(np.argmin(d)) + 1
        pred[k] = sid
        labels[k] = ep.labels[t:t + n + 1]
    return TeamPredictions(samples, pred, labels, np.ones(K))
