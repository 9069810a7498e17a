"""Per-robot occlusion-aware sensing and a seeded synthetic feature encoder.

Stands in for an onboard camera, a CNN backbone and a keypoint detector. The
camera is a pinhole looking along the robot heading; image coordinates are
normalized to [0, 1] (u left to right, v top to bottom) and scaled to pixels
for bounding boxes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .geometry import polygon_edges, visible_mask

HUMAN = "human"
OBJECT_KINDS = ("crate", "box", "pallet", "desk", "chair", "drawers", "computer",
                "workbench", "cnc_machine", "table")
KINDS = OBJECT_KINDS + (HUMAN,)
KIND_INDEX = {k: i for i, k in enumerate(KINDS)}

# physical (width, height) in meters
KIND_SIZE = {
    "crate": (0.8, 0.6), "box": (0.5, 0.4), "pallet": (1.2, 0.2), "desk": (1.4, 0.75),
    "chair": (0.5, 0.9), "drawers": (0.6, 1.0), "computer": (0.4, 0.4),
    "workbench": (1.6, 0.9), "cnc_machine": (1.8, 1.9), "table": (1.2, 0.75),
    HUMAN: (0.5, 1.75),
}

N_KEYPOINTS = 17
KEYPOINT_DIM = 2 * N_KEYPOINTS

# COCO-17 skeleton in the body frame: (forward, left, height) in meters.
SKELETON = np.array([
    (0.10, 0.00, 1.60),   # nose
    (0.08, 0.03, 1.65), (0.08, -0.03, 1.65),    # eyes
    (0.00, 0.08, 1.62), (0.00, -0.08, 1.62),    # ears
    (0.00, 0.20, 1.40), (0.00, -0.20, 1.40),    # shoulders
    (0.00, 0.25, 1.10), (0.00, -0.25, 1.10),    # elbows
    (0.05, 0.25, 0.85), (0.05, -0.25, 0.85),    # wrists
    (0.00, 0.12, 0.95), (0.00, -0.12, 0.95),    # hips
    (0.00, 0.12, 0.50), (0.00, -0.12, 0.50),    # knees
    (0.00, 0.12, 0.05), (0.00, -0.12, 0.05),    # ankles
])
# forward swing amplitude while walking; arms counter-swing the legs
_SWING = np.array([0, 0, 0, 0, 0, 0, 0, -0.15, 0.15, -0.25, 0.25, 0, 0, 0.2, -0.2, 0.35, -0.35])
_STRIDE = 1.4


@dataclass(frozen=True)
class PerceptionConfig:
    fov_deg: float = 90.0
    range_m: float = 10.0
    p_miss: float = 0.05
    feature_dim: int = 64          # F; node features have length 2F
    noise_sigma: float = 0.01
    position_amp: float = 0.5
    global_amp: float = 0.5
    global_cell: float | None = 2.0    # m; quantizes object positions into the scene signature (None: kinds only)
    keypoint_jitter: float = 0.005
    camera_height: float = 0.5
    image_size: tuple = (640, 480)
    seed: int = 1234

    @property
    def focal(self) -> float:
        return 0.5 / math.tan(math.radians(self.fov_deg) / 2.0)

    def with_(self, **kw) -> "PerceptionConfig":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class Detection:
    kind: str
    position: tuple          # robot frame (forward, left), m
    bbox_center: tuple       # pixels (x, y)
    bbox_size: tuple         # pixels (w, h)
    robot_id: int
    tick: int
    object_id: int = -1      # index into WorldState.objects; -1 for the human


@dataclass
class PoseKeypoints:
    coords: np.ndarray       # (34,) flattened (u, v) pairs in [0, 1]
    valid: np.ndarray        # (17,) bool

    @classmethod
    def empty(cls) -> "PoseKeypoints":
        return cls(np.zeros(KEYPOINT_DIM), np.zeros(N_KEYPOINTS, dtype=bool))


def _frame_rng(cfg: PerceptionConfig, world_seed: int, robot: int, tick: int, stream: int):
    return np.random.default_rng([cfg.seed, world_seed & 0xFFFFFFFFFFFFFFFF, robot, tick, stream])


def to_robot_frame(pose, pts: np.ndarray) -> np.ndarray:
    """World (K, 2) -> robot frame (K, 2) as (forward, left)."""
    x, y, h = pose
    d = np.asarray(pts, dtype=float) - (x, y)
    c, s = math.cos(h), math.sin(h)
    return np.stack([d[..., 0] * c + d[..., 1] * s, -d[..., 0] * s + d[..., 1] * c], axis=-1)


def to_world_frame(pose, rel: np.ndarray) -> np.ndarray:
    x, y, h = pose
    rel = np.asarray(rel, dtype=float)
    c, s = math.cos(h), math.sin(h)
    return np.stack([x + rel[..., 0] * c - rel[..., 1] * s, y + rel[..., 0] * s + rel[..., 1] * c], axis=-1)


def project(rel: np.ndarray, height, cfg: PerceptionConfig) -> np.ndarray:
    """Robot-frame points (K, 2) with heights (K,) -> normalized image (u, v)."""
    W, H = cfg.image_size
    f = cfg.focal
    fwd = np.maximum(rel[..., 0], 1e-6)
    u = 0.5 - f * rel[..., 1] / fwd
    v = 0.5 - f * (W / H) * (np.asarray(height) - cfg.camera_height) / fwd
    return np.stack([u, v], axis=-1)


def back_project(uv, height, cfg: PerceptionConfig) -> np.ndarray:
    """Inverse of ``project`` for a point of known height."""
    W, H = cfg.image_size
    f = cfg.focal
    u, v = uv[..., 0], uv[..., 1]
    fwd = f * (W / H) * (height - cfg.camera_height) / np.maximum(0.5 - v, 1e-6)
    lat = (0.5 - u) * fwd / f
    return np.stack([fwd, lat], axis=-1)


# ---------------------------------------------------------------- sensing

@dataclass
class FrameObs:
    """Struct-of-arrays view of one robot's detections at one tick.

    Slot k < n_objects is world object k; the last slot is the human.
    """
    detected: np.ndarray     # (n_objects + 1,) bool
    rel: np.ndarray          # (n_objects + 1, 2) robot-frame positions
    uv_px: np.ndarray        # (n_objects + 1, 2) bbox centers, pixels
    size_px: np.ndarray      # (n_objects + 1, 2) bbox sizes, pixels

    @property
    def human_detected(self) -> bool:
        return bool(self.detected[-1])

    @property
    def count(self) -> int:
        return int(self.detected.sum())


def _entities(world):
    pts = [(o[2], o[3]) for o in world.objects] + [tuple(world.human_pos)]
    kinds = [o[0] for o in world.objects] + [HUMAN]
    return np.asarray(pts, dtype=float), kinds


_EDGE_CACHE: dict = {}


def _edges(obstacles):
    key = obstacles
    if key not in _EDGE_CACHE:
        _EDGE_CACHE[key] = polygon_edges(obstacles)
    return _EDGE_CACHE[key]


def observe(robot_pose, robot_id: int, world, obstacles, cfg: PerceptionConfig, world_seed: int = 0) -> FrameObs:
    """Vectorized sensing for one robot. See ``sense`` for the list form."""
    pts, kinds = _entities(world)
    rel = to_robot_frame(robot_pose, pts)
    dist = np.hypot(rel[:, 0], rel[:, 1])
    ang = np.abs(np.arctan2(rel[:, 1], rel[:, 0]))
    ok = (rel[:, 0] > 0.1) & (dist <= cfg.range_m) & (ang <= math.radians(cfg.fov_deg) / 2.0)
    if obstacles:
        ok &= visible_mask(robot_pose[:2], pts, _edges(obstacles))
    if cfg.p_miss > 0:
        ok &= _frame_rng(cfg, world_seed, robot_id, world.tick, 0).random(len(pts)) >= cfg.p_miss
    sizes = np.array([KIND_SIZE[k] for k in kinds])
    uv = project(rel, sizes[:, 1] / 2.0, cfg)
    W, H = cfg.image_size
    f = cfg.focal
    fwd = np.maximum(rel[:, 0], 1e-6)
    size_px = np.stack([f * W * sizes[:, 0] / fwd, f * W * sizes[:, 1] / fwd], axis=-1)
    return FrameObs(ok, rel, uv * (W, H), size_px)



def observe_frames(poses: np.ndarray, pts: np.ndarray, kinds, robot_ids, ticks, obstacles,
                   cfg: PerceptionConfig, world_seed: int = 0):
    """``observe`` for K frames at once.

    poses (K, 3), pts (K, S, 2) world positions of the entities in each frame.
    Returns detected (K, S), rel (K, S, 2), uv_px (K, S, 2).
    """
    poses = np.asarray(poses, dtype=float)
    K, S = pts.shape[:2]
    d = pts - poses[:, None, :2]
    c, s = np.cos(poses[:, 2])[:, None], np.sin(poses[:, 2])[:, None]
    rel = np.stack([d[..., 0] * c + d[..., 1] * s, -d[..., 0] * s + d[..., 1] * c], axis=-1)
    dist = np.hypot(rel[..., 0], rel[..., 1])
    ang = np.abs(np.arctan2(rel[..., 1], rel[..., 0]))
    ok = (rel[..., 0] > 0.1) & (dist <= cfg.range_m) & (ang <= math.radians(cfg.fov_deg) / 2.0)
    if obstacles:
        cand = np.flatnonzero(ok.ravel())
        origins = np.repeat(poses[:, :2], S, axis=0)[cand]
        vis = visible_mask(origins, pts.reshape(-1, 2)[cand], _edges(obstacles))
        flat = ok.ravel()
        flat[cand] = vis
        ok = flat.reshape(K, S)
    if cfg.p_miss > 0:
        for k in range(K):
            ok[k] &= _frame_rng(cfg, world_seed, int(robot_ids[k]), int(ticks[k]), 0).random(S) >= cfg.p_miss
    sizes = np.array([KIND_SIZE[k] for k in kinds])
    W, H = cfg.image_size
    uv = project(rel, sizes[:, 1] / 2.0, cfg)
    return ok, rel, uv * (W, H)

def sense(robot_pose, world, config, perception: PerceptionConfig | None = None, robot_id: int = 0) -> list:
    """Detections visible from ``robot_pose``: in the FOV cone, in range, not occluded.

    ``config`` is the WorldConfig (obstacles and the seed keying dropout).
    """
    perception = perception or PerceptionConfig()
    obs = observe(robot_pose, robot_id, world, config.obstacles, perception, config.seed)
    return detections_from_obs(obs, world, robot_id)


def detections_from_obs(obs: FrameObs, world, robot_id: int) -> list:
    _, kinds = _entities(world)
    n_obj = len(kinds) - 1
    out = []
    for k in np.flatnonzero(obs.detected):
        out.append(Detection(
            kind=kinds[k],
            position=tuple(map(float, obs.rel[k])),
            bbox_center=tuple(map(float, obs.uv_px[k])),
            bbox_size=tuple(map(float, obs.size_px[k])),
            robot_id=robot_id,
            tick=world.tick,
            object_id=-1 if k == n_obj else int(k),
        ))
    return out


# ---------------------------------------------------------------- encoder

class FeatureEncoder:
    """Seeded stand-in for a CNN backbone.

    Node feature = [global scene descriptor (F) | local object descriptor (F)].
    """

    def __init__(self, cfg: PerceptionConfig | None = None):
        self.cfg = cfg = cfg or PerceptionConfig()
        F = cfg.feature_dim
        rng = np.random.default_rng([cfg.seed, 77])
        table = rng.standard_normal((len(KINDS), F))
        self.category = table / np.linalg.norm(table, axis=1, keepdims=True)
        self.omega = rng.standard_normal((2, F)) / 2.5
        self.phi = rng.uniform(0, 2 * np.pi, F)
        self._global_cache: dict = {}

    def position_code(self, rel: np.ndarray) -> np.ndarray:
        F = self.cfg.feature_dim
        return math.sqrt(2.0 / F) * np.cos(rel @ self.omega + self.phi)

    def _seeded_vector(self, key: tuple) -> np.ndarray:
        if key not in self._global_cache:
            digest = hashlib.sha256(repr((self.cfg.seed,) + key).encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            self._global_cache[key] = rng.standard_normal(self.cfg.feature_dim)
        return self._global_cache[key]

    def global_descriptor(self, scenario: int, kinds, rel=None) -> np.ndarray:
        """Scene descriptor of the visible object set.

        With ``cfg.global_cell`` set, each object adds a vector keyed on its kind
        and coarse robot-frame cell (``rel`` rows), so nearby viewpoints share
        most terms. Otherwise one vector per sorted kind multiset.
        """
        cell = self.cfg.global_cell
        if cell is None or rel is None:
            sig = (int(scenario),) + tuple(sorted(k for k in kinds if k != HUMAN))
            v = self._seeded_vector(sig)
        else:
            cells = np.floor(np.asarray(rel, dtype=float) / cell).astype(int)
            v = self._seeded_vector((int(scenario), "scene"))
            for k, (cx, cy) in zip(kinds, cells):
                if k != HUMAN:
                    v = v + self._seeded_vector((int(scenario), k, int(cx), int(cy)))
        return self.cfg.global_amp * v / np.linalg.norm(v)

    def encode_slots(self, kind_idx: np.ndarray, rel: np.ndarray, scenario: int, noise: np.ndarray) -> np.ndarray:
        """Features for entity slots. ``noise`` is (len(kind_idx), F) standard normal."""
        kinds = [KINDS[i] for i in kind_idx]
        g = self.global_descriptor(scenario, kinds, rel)
        local = self.category[kind_idx] + self.cfg.position_amp * self.position_code(rel) \
            + self.cfg.noise_sigma * noise
        return np.concatenate([np.broadcast_to(g, local.shape), local], axis=1)

    def slot_noise(self, world_seed: int, robot: int, tick: int, n_slots: int) -> np.ndarray:
        return _frame_rng(self.cfg, world_seed, robot, tick, 1).standard_normal((n_slots, self.cfg.feature_dim))


def encode_features(detections, world_descriptor_seed: int, scenario: int = 1,
                    encoder: FeatureEncoder | None = None, n_slots: int = 12) -> dict:
    """Map each detection (by position in the list) to its NodeFeature of length 2F.

    Noise is keyed on (encoder seed, ``world_descriptor_seed``, robot, tick) so
    repeated calls are identical. ``n_slots`` is the number of world objects
    plus one (the human slot); it fixes the noise row of every slot.
    """
    if not detections:
        raise ValueError("encode_features needs at least one detection")
    encoder = encoder or FeatureEncoder()
    d0 = detections[0]
    slots = [d.object_id for d in detections]
    noise = encoder.slot_noise(world_descriptor_seed, d0.robot_id, d0.tick, n_slots)
    idx = np.array([KIND_INDEX[d.kind] for d in detections])
    rel = np.array([d.position for d in detections], dtype=float)
    rows = np.array([s if s >= 0 else n_slots - 1 for s in slots])
    feats = encoder.encode_slots(idx, rel, scenario, noise[rows])
    return {k: feats[k] for k in range(len(detections))}


# ---------------------------------------------------------------- keypoints

def skeleton_world(world) -> np.ndarray:
    """(17, 3) world-frame keypoints of the human (x, y, height)."""
    x, y = world.human_pos
    h = world.human_heading
    body = SKELETON.copy()
    if world.human_speed > 0:
        phase = 2 * np.pi * world.tick * world.human_speed * 0.1 / _STRIDE
        body[:, 0] += _SWING * math.sin(phase)
    c, s = math.cos(h), math.sin(h)
    wx = x + body[:, 0] * c - body[:, 1] * s
    wy = y + body[:, 0] * s + body[:, 1] * c
    return np.stack([wx, wy, body[:, 2]], axis=1)


def extract_keypoints(human_detection, world, cfg: PerceptionConfig | None = None,
                      world_seed: int = 0) -> PoseKeypoints:
    """Project the skeleton into the detecting robot's image with seeded jitter.

    ``human_detection`` None (human not detected) yields the all-zero fallback.
    """
    cfg = cfg or PerceptionConfig()
    if human_detection is None:
        return PoseKeypoints.empty()
    robot = human_detection.robot_id
    pose = world.robots[robot]
    sk = skeleton_world(world)
    rel = to_robot_frame(pose, sk[:, :2])
    uv = project(rel, sk[:, 2], cfg)
    if cfg.keypoint_jitter > 0:
        uv = uv + cfg.keypoint_jitter * _frame_rng(cfg, world_seed, robot, world.tick, 2).standard_normal(uv.shape)
    valid = (rel[:, 0] > 0.05) & (uv >= 0).all(axis=1) & (uv <= 1).all(axis=1)
    uv[~valid] = 0.0
    return PoseKeypoints(uv.reshape(-1), valid)


def head_position_world(kp: PoseKeypoints, robot_pose, cfg: PerceptionConfig | None = None):
    """World position of keypoint 0 from its image coordinates, or None if invalid.

    Bearing comes from keypoint 0. Range is the least-squares fit of
    v_k = 0.5 - f (W/H) (h_k - camera height) / range over every valid
    keypoint of known template height h_k, which is several times less noisy
    than back-projecting keypoint 0 alone.
    """
    cfg = cfg or PerceptionConfig()
    if not kp.valid[0]:
        return None
    W, H = cfg.image_size
    uv = np.asarray(kp.coords, dtype=float).reshape(-1, 2)
    ok = np.asarray(kp.valid, dtype=bool)
    a = cfg.focal * (W / H) * (SKELETON[ok, 2] - cfg.camera_height)     # v = 0.5 - a * s, s = 1 / range
    y = 0.5 - uv[ok, 1]
    s_inv = float(a @ y) / float(a @ a)
    if s_inv <= 1e-6:
        return None
    fwd = 1.0 / s_inv
    lat = (0.5 - uv[0, 0]) * fwd / cfg.focal
    return to_world_frame(robot_pose, np.array([fwd, lat]))
