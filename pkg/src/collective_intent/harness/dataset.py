"""Episode recording, 60/20/20 splits, and window/frame sample assembly.

Every episode records all robots' observation streams, so any team (subset of
robots) can be replayed from the same log without re-simulating.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..graph import star_adjacency_batch
from ..perception import (KEYPOINT_DIM, KINDS, KIND_INDEX, N_KEYPOINTS, FeatureEncoder,
                          PerceptionConfig, _entities, extract_keypoints, observe_frames)
from ..world import PHASES, EpisodeLog, WorldConfig, default_config, generate_episode

log = logging.getLogger(__name__)

PHASE_CODE = {p: k for k, p in enumerate(PHASES)}


@dataclass
class EpisodeRecord:
    """Ground truth plus every robot's per-tick observations for one episode."""
    config: WorldConfig
    labels: np.ndarray        # (T,) station ids 1..4
    phases: np.ndarray        # (T,) index into PHASES
    human_pos: np.ndarray     # (T, 2)
    robot_poses: np.ndarray   # (T, R, 3)
    detected: np.ndarray      # (R, T, S) bool; slot S-1 is the human
    rel: np.ndarray           # (R, T, S, 2) robot-frame positions
    uv: np.ndarray            # (R, T, S, 2) bbox centers, pixels
    keypoints: np.ndarray     # (R, T, 34)
    kp_valid: np.ndarray      # (R, T, 17)
    slot_kinds: np.ndarray    # (S,) kind index per slot

    @property
    def n_ticks(self) -> int:
        return len(self.labels)

    @property
    def n_robots(self) -> int:
        return self.detected.shape[0]

    @property
    def human_seen(self) -> np.ndarray:
        return self.detected[:, :, -1]

    @property
    def counts(self) -> np.ndarray:
        """(R, T) detections (objects and human) per robot per tick."""
        return self.detected.sum(axis=2)


def record_episode(cfg: WorldConfig, ticks: int, pcfg: PerceptionConfig,
                   episode: EpisodeLog | None = None) -> EpisodeRecord:
    episode = episode or generate_episode(cfg, ticks)
    states = episode.states
    T, R = len(states), cfg.n_robots
    S = len(cfg.objects) + 1
    detected = np.zeros((R, T, S), dtype=bool)
    rel = np.zeros((R, T, S, 2), dtype=np.float32)
    uv = np.zeros((R, T, S, 2), dtype=np.float32)
    kps = np.zeros((R, T, KEYPOINT_DIM), dtype=np.float32)
    kpv = np.zeros((R, T, N_KEYPOINTS), dtype=bool)
    poses = np.array([s.robots for s in states], dtype=float).transpose(1, 0, 2)     # (R, T, 3)
    ents = [_entities(s) for s in states]
    pts = np.broadcast_to(np.stack([e[0] for e in ents]), (R, T, S, 2)).reshape(R * T, S, 2)
    ticks = np.array([s.tick for s in states])
    det, rl, px = observe_frames(poses.reshape(R * T, 3), pts, ents[0][1], np.repeat(np.arange(R), T),
                                 np.tile(ticks, R), cfg.obstacles, pcfg, cfg.seed)
    detected[:] = det.reshape(R, T, S)
    rel[:] = rl.reshape(R, T, S, 2)
    uv[:] = px.reshape(R, T, S, 2)
    for r, t in zip(*np.nonzero(detected[:, :, -1])):
        kp = extract_keypoints(_HumanRef(int(r)), states[t], pcfg, cfg.seed)
        kps[r, t] = kp.coords
        kpv[r, t] = kp.valid
    slot_kinds = np.array([KIND_INDEX[o[0]] for o in cfg.objects] + [KIND_INDEX["human"]])
    return EpisodeRecord(
        config=cfg,
        labels=episode.labels,
        phases=np.array([PHASE_CODE[s.phase] for s in states]),
        human_pos=np.array([s.human_pos for s in states]),
        robot_poses=np.array([s.robots for s in states]),
        detected=detected, rel=rel, uv=uv, keypoints=kps, kp_valid=kpv, slot_kinds=slot_kinds,
    )


@dataclass(frozen=True)
class _HumanRef:
    robot_id: int


# ---------------------------------------------------------------- datasets

@dataclass
class Dataset:
    episodes: list
    train: list
    val: list
    test: list
    perception: PerceptionConfig
    seeds: list = field(default_factory=list)

    def split(self, name: str) -> list:
        return [self.episodes[k] for k in getattr(self, name)]


_ARRAYS = ("labels", "phases", "human_pos", "robot_poses", "detected", "rel", "uv", "keypoints",
           "kp_valid", "slot_kinds")


def save_dataset(ds: Dataset, path) -> Path:
    """One compressed .npz: stacked episode arrays plus a JSON header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"schema_version": 1,
              "configs": [ep.config.to_dict() for ep in ds.episodes],
              "train": ds.train, "val": ds.val, "test": ds.test, "seeds": [int(s) for s in ds.seeds],
              "perception": dataclasses.asdict(ds.perception)}
    arrays = {k: np.stack([getattr(ep, k) for ep in ds.episodes]) for k in _ARRAYS}
    with open(path, "wb") as fh:
        np.savez_compressed(fh, header=np.array(json.dumps(header)), **arrays)
    return path


def load_dataset(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        arrays = {k: z[k] for k in _ARRAYS}
    if header.get("schema_version") != 1:
        raise ValueError(f"{path}: unsupported dataset schema {header.get('schema_version')!r}")
    pc = dict(header["perception"])
    pc["image_size"] = tuple(pc["image_size"])
    episodes = [EpisodeRecord(config=WorldConfig.from_dict(c), **{k: arrays[k][i] for k in _ARRAYS})
                for i, c in enumerate(header["configs"])]
    return Dataset(episodes, header["train"], header["val"], header["test"], PerceptionConfig(**pc),
                   header["seeds"])


def episode_seeds(base_seed: int, count: int) -> list:
    ss = np.random.SeedSequence([base_seed, 0x5EED])
    seeds = [int(s.generate_state(1, dtype=np.uint64)[0] >> 1) for s in ss.spawn(count)]
    assert len(set(seeds)) == count
    return seeds


def split_indices(n: int, seed: int):
    """60/20/20 partition of episode indices, by episode."""
    perm = np.random.default_rng([seed, 0x5917]).permutation(n)
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    return (sorted(perm[:n_train].tolist()), sorted(perm[n_train:n_train + n_val].tolist()),
            sorted(perm[n_train + n_val:].tolist()))


def generate_dataset(scenario: int, n_episodes: int, ticks: int = 300, seed: int = 0,
                     pcfg: PerceptionConfig | None = None, base_config: WorldConfig | None = None,
                     min_episodes: int = 50) -> Dataset:
    """Simulate ``n_episodes`` four-robot episodes and split them 60/20/20 by episode."""
    if n_episodes < min_episodes:
        raise ValueError(f"need at least {min_episodes} episodes, got {n_episodes}")
    pcfg = pcfg or PerceptionConfig()
    base = base_config or default_config(scenario, n_robots=4)
    seeds = episode_seeds(seed, n_episodes)
    episodes = []
    for k, s in enumerate(seeds):
        episodes.append(record_episode(base.with_(seed=s, n_robots=4), ticks, pcfg))
        if (k + 1) % 25 == 0:
            log.info("simulated %d/%d episodes (scenario %d)", k + 1, n_episodes, scenario)
    tr, va, te = split_indices(n_episodes, seed)
    return Dataset(episodes, tr, va, te, pcfg, seeds)


# ---------------------------------------------------------------- anchors

def valid_anchors(ep: EpisodeRecord, obs: int, n: int) -> np.ndarray:
    return np.arange(obs - 1, ep.n_ticks - n)


def balanced_anchors(episodes, obs: int, n: int, seed: int, per_phase: int | None = None):
    """(episode index, tick) pairs with equal counts of each motion phase at the anchor tick."""
    groups = {k: [] for k in range(len(PHASES))}
    for e, ep in enumerate(episodes):
        for t in valid_anchors(ep, obs, n):
            groups[int(ep.phases[t])].append((e, int(t)))
    k = min(len(g) for g in groups.values())
    if per_phase is not None:
        k = min(k, per_phase)
    rng = np.random.default_rng([seed, 0xA11C])
    out = []
    for ph in range(len(PHASES)):
        g = groups[ph]
        pick = rng.choice(len(g), size=k, replace=False)
        out.extend(g[i] for i in sorted(pick))
    out.sort()
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def phase_frequencies(episodes, anchors: np.ndarray) -> dict:
    codes = np.array([episodes[e].phases[t] for e, t in anchors])
    return {p: float(np.mean(codes == k)) for k, p in enumerate(PHASES)}


def window_indices(obs: int, subsample: int | None = None) -> np.ndarray:
    """Offsets (relative to the window start) of the frames fed to the GRU."""
    if subsample is None or subsample >= obs:
        return np.arange(obs)
    return np.unique(np.round(np.linspace(0, obs - 1, subsample)).astype(int))


# ---------------------------------------------------------------- features

def frame_graphs(ep: EpisodeRecord, robots: np.ndarray, ticks: np.ndarray, encoder: FeatureEncoder,
                 edge_affinity: bool = False, affinity_scale: float = 100.0, dtype=np.float32):
    """Padded star graphs for frames (robot, tick) where the human was detected.

    Returns (A (G, S, S), X (G, S, 2F)); node 0 is the human, nodes 1.. are
    object slots (zero-padded when undetected).
    """
    S = ep.detected.shape[2]
    n_obj = S - 1
    G = len(robots)
    F = encoder.cfg.feature_dim
    det = ep.detected[robots, ticks]                      # (G, S)
    rel = ep.rel[robots, ticks].astype(np.float64)        # (G, S, 2)
    uv = ep.uv[robots, ticks].astype(np.float64)
    order = np.r_[n_obj, np.arange(n_obj)]                # human first
    kinds = ep.slot_kinds[order]
    X = np.zeros((G, S, 2 * F))
    scen = ep.config.scenario
    world_seed = ep.config.seed
    pos_code = encoder.position_code(rel[:, order])       # (G, S, F)
    local = encoder.category[kinds][None] + encoder.cfg.position_amp * pos_code
    for g in range(G):
        noise = encoder.slot_noise(world_seed, int(robots[g]), int(ticks[g]), S)[order]
        d = det[g, order]
        glob = encoder.global_descriptor(scen, [KINDS[k] for k in kinds[d]], rel[g, order][d])
        X[g, :, :F] = glob
        X[g, :, F:] = local[g] + encoder.cfg.noise_sigma * noise
        X[g, ~d] = 0.0
    obj_mask = det[:, :n_obj]
    dist = np.hypot(*(uv[:, :n_obj] - uv[:, n_obj:n_obj + 1]).transpose(2, 0, 1))
    w = np.exp(-dist / affinity_scale) if edge_affinity else dist
    A = star_adjacency_batch(w, obj_mask)
    return A.astype(dtype), X.astype(dtype)


def embedding_table(ep: EpisodeRecord, gcn, encoder: FeatureEncoder, edge_affinity: bool = False,
                    dtype=np.float32, chunk: int = 512):
    """Human-node embeddings (R, T, E) and spatial logits (R, T, C); zero where unseen."""
    from ..models.gcn import gcn_embed_batch

    R, T = ep.n_robots, ep.n_ticks
    E = gcn.embed_dim
    C = gcn.head_w.shape[1]
    emb = np.zeros((R, T, E), dtype=dtype)
    logits = np.zeros((R, T, C), dtype=dtype)
    rr, tt = np.nonzero(ep.human_seen)
    for k in range(0, len(rr), chunk):
        r, t = rr[k:k + chunk], tt[k:k + chunk]
        A, X = frame_graphs(ep, r, t, encoder, edge_affinity, dtype=dtype)
        e, lg, _ = gcn_embed_batch(A, X, gcn)
        emb[r, t] = e
        logits[r, t] = lg
    return emb, logits


def neighbor_mean_table(emb: np.ndarray, seen: np.ndarray, team) -> np.ndarray:
    """Mean of the other team members' embeddings per tick (zero if none was shared).

    Loss-free, zero-latency equivalent of running the message transport.
    """
    team = list(team)
    R, T, E = emb.shape
    out = np.zeros((R, T, E), dtype=emb.dtype)
    for i in team:
        others = [j for j in team if j != i]
        if not others:
            continue
        m = seen[others].astype(emb.dtype)                 # (k, T)
        s = np.einsum("kt,kte->te", m, emb[others])
        c = m.sum(axis=0)
        out[i] = np.where(c[:, None] > 0, s / np.maximum(c, 1)[:, None], 0.0)
    return out
