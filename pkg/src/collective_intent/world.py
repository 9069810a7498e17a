"""Deterministic 2D factory-floor simulation of one human and up to four robots.

The human walks between four stations along A*-planned, line-of-sight smoothed
paths, dwelling at each station for a seeded random time. Robots either hold
fixed poses (scenarios 1 and 2) or drive closed patrol loops (scenario 3).
Every random draw is keyed on ``(seed, tick)`` so ``step_world`` is a pure
function of its inputs.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import GridPlanner, obstacles_distance, point_in_polygon

SCHEMA_VERSION = 1

STATION_NAMES = {
    1: "Storage Area",
    2: "Workstation",
    3: "Assembly Station",
    4: "Manufacturing Station",
}

# Object kinds per station category; "chair" is shared by two stations on purpose.
STATION_OBJECT_KINDS = {
    1: ("crate", "box", "pallet"),
    2: ("desk", "chair", "drawers", "computer"),
    3: ("workbench", "chair"),
    4: ("cnc_machine", "table"),
}

PHASE_MOVING = "moving"
PHASE_TRANSITIONING = "transitioning"
PHASE_STATIONARY = "stationary"
PHASES = (PHASE_MOVING, PHASE_TRANSITIONING, PHASE_STATIONARY)

_HUMAN_RADIUS = 0.25
_ROBOT_SEPARATION = 0.8
_LOOKAHEAD = 1.5


DEFAULT_STATIONS = ((4.0, 11.5), (16.0, 11.5), (9.0, 3.5), (11.0, 3.5))


class ConfigError(ValueError):
    """A WorldConfig violates its invariants."""


class UnreachableStationError(ConfigError):
    pass


def _tup(x):
    if isinstance(x, (list, tuple)):
        return tuple(_tup(v) for v in x)
    return x


@dataclass(frozen=True)
class WorldConfig:
    scenario: int = 1
    n_robots: int = 3
    seed: int = 0
    bounds: tuple = (0.0, 0.0, 20.0, 15.0)
    stations: tuple = DEFAULT_STATIONS
    # (kind, station_id, x, y)
    objects: tuple = ()
    obstacles: tuple = ()
    # static poses (x, y, heading); used in scenarios 1 and 2
    robot_poses: tuple = ()
    # closed patrol loops, one list of (x, y) vertices per robot; scenario 3
    patrol_paths: tuple = ()
    # optional point each patrolling robot keeps its camera on; None = travel direction
    watch_points: tuple = ()
    human_speed: float = 1.6
    robot_speed: float = 2.0
    tick_rate: float = 10.0
    dwell_s: tuple = (1.0, 3.0)
    transition_s: float = 1.0
    close_proximity: float = 2.5
    robot_jitter: float = 0.3
    heading_jitter: float = 0.15

    def __post_init__(self):
        for name in ("bounds", "stations", "objects", "obstacles", "robot_poses", "patrol_paths", "watch_points", "dwell_s"):
            object.__setattr__(self, name, _tup(getattr(self, name)))

    @property
    def dt(self) -> float:
        return 1.0 / self.tick_rate

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown WorldConfig fields: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **kw) -> "WorldConfig":
        return dataclasses.replace(self, **kw)


def _default_objects(stations):
    # objects sit behind each station's goal point, toward the nearest wall
    offsets = {
        1: [(-1.2, 0.8), (-0.3, 1.4), (0.8, 1.2)],
        2: [(-0.8, 1.2), (0.2, 1.3), (1.2, 0.8), (0.4, 1.8)],
        3: [(-0.5, -1.1), (0.3, -1.4)],
        4: [(0.0, -1.3), (0.9, -1.0)],
    }
    out = []
    for sid, kinds in STATION_OBJECT_KINDS.items():
        sx, sy = stations[sid - 1]
        for kind, (dx, dy) in zip(kinds, offsets[sid]):
            out.append((kind, sid, sx + dx, sy + dy))
    return tuple(out)


def _rect(x0, y0, x1, y1):
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


DEFAULT_OBSTACLES = (
    _rect(9.0, 6.5, 11.0, 8.5),
    _rect(5.5, 7.0, 7.0, 9.0),
    _rect(13.0, 7.0, 14.5, 9.0),
    _rect(9.4, 10.6, 10.6, 12.0),
)

# Robot 4 looks along the middle band from the east wall and sees few station objects.
DEFAULT_ROBOT_POSES = (
    (1.5, 2.0, math.radians(50.0)),
    (18.5, 2.0, math.radians(130.0)),
    (13.0, 14.4, math.radians(-125.0)),
    (19.6, 9.5, math.radians(195.0)),
)

DEFAULT_PATROLS = (
    ((1.5, 1.5), (6.0, 5.5), (4.5, 6.5), (0.8, 2.8)),
    ((18.5, 1.5), (19.2, 2.8), (15.5, 6.5), (14.0, 5.5)),
    ((7.0, 14.2), (13.0, 14.2), (12.0, 13.2), (8.0, 13.2)),
    ((19.2, 6.5), (19.2, 10.0), (17.8, 10.0), (17.8, 6.5)),
)
DEFAULT_WATCH_POINTS = ((8.0, 8.0), (12.0, 8.0), (10.0, 6.0), (9.0, 8.0))


def default_config(scenario: int = 1, n_robots: int = 3, seed: int = 0, **overrides) -> WorldConfig:
    """The reference 20 m x 15 m layout with Assembly and Manufacturing 2 m apart."""
    obstacles = () if scenario == 1 else DEFAULT_OBSTACLES
    cfg = WorldConfig(
        scenario=scenario,
        n_robots=n_robots,
        seed=seed,
        stations=DEFAULT_STATIONS,
        objects=_default_objects(DEFAULT_STATIONS),
        obstacles=obstacles,
        robot_poses=DEFAULT_ROBOT_POSES,
        patrol_paths=DEFAULT_PATROLS if scenario == 3 else (),
        watch_points=DEFAULT_WATCH_POINTS if scenario == 3 else (),
    )
    return cfg.with_(**overrides) if overrides else cfg


def load_config(path) -> WorldConfig:
    with open(path) as f:
        d = json.load(f)
    d.pop("schema_version", None)
    return WorldConfig.from_dict(d)


def save_config(cfg: WorldConfig, path) -> None:
    d = {"schema_version": SCHEMA_VERSION, **cfg.to_dict()}
    Path(path).write_text(json.dumps(d, indent=2))


@dataclass(frozen=True)
class WorldState:
    tick: int
    human_pos: tuple
    human_heading: float
    human_speed: float
    phase: str
    goal: int
    robots: tuple                 # ((x, y, heading), ...)
    objects: tuple                # ((kind, station_id, x, y), ...)
    # internal motion state
    path: tuple = ()              # remaining waypoints toward goal
    dwell_left: int = 0
    transition_left: int = 0
    robot_offsets: tuple = ()     # per-robot patrol arc offset (m) or static pose jitter
    arrived: bool = False         # True on the tick the human reaches its goal

    def to_record(self) -> dict:
        return {
            "tick": self.tick,
            "human_pos": list(self.human_pos),
            "human_heading": self.human_heading,
            "human_speed": self.human_speed,
            "phase": self.phase,
            "goal": self.goal,
            "robots": [list(r) for r in self.robots],
            "path": [list(p) for p in self.path],
            "dwell_left": self.dwell_left,
            "transition_left": self.transition_left,
            "robot_offsets": [list(o) if isinstance(o, tuple) else o for o in self.robot_offsets],
            "arrived": self.arrived,
        }

    @classmethod
    def from_record(cls, r: dict, objects: tuple) -> "WorldState":
        return cls(
            tick=r["tick"],
            human_pos=tuple(r["human_pos"]),
            human_heading=r["human_heading"],
            human_speed=r["human_speed"],
            phase=r["phase"],
            goal=r["goal"],
            robots=_tup(r["robots"]),
            objects=objects,
            path=_tup(r["path"]),
            dwell_left=r["dwell_left"],
            transition_left=r["transition_left"],
            robot_offsets=_tup(r["robot_offsets"]),
            arrived=r["arrived"],
        )


@dataclass
class EpisodeLog:
    config: WorldConfig
    states: list = field(default_factory=list)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.goal for s in self.states], dtype=np.int64)

    @property
    def phases(self) -> list:
        return [s.phase for s in self.states]

    def __len__(self):
        return len(self.states)

    def dump(self, path) -> None:
        """Line-delimited JSON: a header record, then one WorldState per line."""
        with open(path, "w") as f:
            f.write(json.dumps({"schema_version": SCHEMA_VERSION, "type": "header",
                                "config": self.config.to_dict()}) + "\n")
            for s in self.states:
                f.write(json.dumps({"type": "state", "label": s.goal, **s.to_record()}) + "\n")

    @classmethod
    def load(cls, path) -> "EpisodeLog":
        with open(path) as f:
            header = json.loads(f.readline())
            if header.get("type") != "header":
                raise ConfigError(f"{path}: missing header record")
            if header.get("schema_version") != SCHEMA_VERSION:
                raise ConfigError(f"{path}: unsupported schema version {header.get('schema_version')}")
            cfg = WorldConfig.from_dict(header["config"])
            states = [WorldState.from_record(json.loads(line), cfg.objects) for line in f if line.strip()]
        return cls(cfg, states)


# ---------------------------------------------------------------- validation

def validate_config(cfg: WorldConfig) -> None:
    if cfg.scenario not in (1, 2, 3):
        raise ConfigError(f"scenario must be 1, 2 or 3, got {cfg.scenario}")
    if not 1 <= cfg.n_robots <= 4:
        raise ConfigError(f"robot count must be in 1..4, got {cfg.n_robots}")
    if len(cfg.stations) != 4:
        raise ConfigError("exactly four stations are required")
    st = np.asarray(cfg.stations, dtype=float)
    dists = [np.hypot(*(st[a] - st[b])) for a in range(4) for b in range(a + 1, 4)]
    if min(dists) <= 0.0:
        raise ConfigError("station positions must be pairwise distinct")
    if min(dists) > cfg.close_proximity:
        raise ConfigError(f"no two stations lie within {cfg.close_proximity} m of each other")
    if cfg.scenario == 1 and cfg.obstacles:
        raise ConfigError("scenario 1 must not contain obstacles")
    if cfg.scenario in (2, 3) and not cfg.obstacles:
        raise ConfigError(f"scenario {cfg.scenario} requires obstacles")
    if cfg.scenario == 3:
        if len(cfg.patrol_paths) < cfg.n_robots:
            raise ConfigError("scenario 3 needs a patrol path per robot")
    else:
        if cfg.patrol_paths:
            raise ConfigError(f"scenario {cfg.scenario} robots are stationary; patrol paths not allowed")
        if len(cfg.robot_poses) < cfg.n_robots:
            raise ConfigError("need a pose for every robot")
    if cfg.human_speed < 0 or cfg.tick_rate <= 0:
        raise ConfigError("human speed must be >= 0 and tick rate > 0")
    xmin, ymin, xmax, ymax = cfg.bounds
    for (x, y) in cfg.stations:
        if not (xmin < x < xmax and ymin < y < ymax):
            raise ConfigError(f"station ({x}, {y}) outside arena")


@functools.lru_cache(maxsize=32)
def _planner(bounds, obstacles) -> GridPlanner:
    return GridPlanner(bounds, obstacles)


def planner_for(cfg: WorldConfig) -> GridPlanner:
    return _planner(cfg.bounds, cfg.obstacles)


@functools.lru_cache(maxsize=32)
def _check_reachable(bounds, stations, obstacles):
    planner = _planner(bounds, obstacles)
    for k, s in enumerate(stations):
        if any(point_in_polygon(s, poly) for poly in obstacles) or not planner.is_clear(s, margin=_HUMAN_RADIUS):
            raise UnreachableStationError(f"station {k + 1} at {s} is blocked by an obstacle")
    for a in range(len(stations)):
        for b in range(a + 1, len(stations)):
            if planner.plan(stations[a], stations[b]) is None:
                raise UnreachableStationError(f"no path between stations {a + 1} and {b + 1}")


# ---------------------------------------------------------------- dynamics

def _rng(seed: int, tick: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, tick, stream])


def _patrol_pose(loop, s):
    pts = list(loop)
    segs = []
    total = 0.0
    for k in range(len(pts)):
        a, b = pts[k], pts[(k + 1) % len(pts)]
        L = math.hypot(b[0] - a[0], b[1] - a[1])
        segs.append((a, b, L))
        total += L
    s = s % total
    for a, b, L in segs:
        if s <= L:
            t = s / L
            return (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]),
                    math.atan2(b[1] - a[1], b[0] - a[0]))
        s -= L
    a, b, _ = segs[-1]
    return (b[0], b[1], math.atan2(b[1] - a[1], b[0] - a[0]))


def _robot_poses(cfg: WorldConfig, tick: int, offsets) -> tuple:
    out = []
    for i in range(cfg.n_robots):
        if cfg.scenario == 3:
            x, y, h = _patrol_pose(cfg.patrol_paths[i], offsets[i] + cfg.robot_speed * tick * cfg.dt)
            if i < len(cfg.watch_points) and cfg.watch_points[i] is not None:
                wx, wy = cfg.watch_points[i]
                h = math.atan2(wy - y, wx - x)
            out.append((x, y, h))
        else:
            x, y, h = cfg.robot_poses[i]
            dx, dy, dh = offsets[i]
            out.append((x + dx, y + dy, h + dh))
    return tuple(out)


def _dwell_ticks(cfg, rng) -> int:
    lo, hi = cfg.dwell_s
    return int(round(rng.uniform(lo, hi) * cfg.tick_rate))


def generate_world(cfg: WorldConfig) -> WorldState:
    """Initial state: seeded human start position and goal, seeded robot offsets."""
    validate_config(cfg)
    _check_reachable(cfg.bounds, cfg.stations, cfg.obstacles)
    planner = planner_for(cfg)
    rng = _rng(cfg.seed, 0, 1)
    xmin, ymin, xmax, ymax = cfg.bounds
    while True:
        p = (float(rng.uniform(xmin + 1.0, xmax - 1.0)), float(rng.uniform(ymin + 1.0, ymax - 1.0)))
        if planner.is_clear(p) and min(math.hypot(p[0] - s[0], p[1] - s[1]) for s in cfg.stations) > 1.5:
            break
    goal = int(rng.integers(1, 5))
    if cfg.scenario == 3:
        offsets = tuple(float(rng.uniform(0.0, 100.0)) for _ in range(cfg.n_robots))
    else:
        offsets = tuple(
            (float(rng.uniform(-1, 1) * cfg.robot_jitter), float(rng.uniform(-1, 1) * cfg.robot_jitter),
             float(rng.uniform(-1, 1) * cfg.heading_jitter))
            for _ in range(cfg.n_robots))
    path = planner.plan(p, cfg.stations[goal - 1])
    heading = math.atan2(path[1][1] - p[1], path[1][0] - p[0]) if len(path) > 1 else 0.0
    return WorldState(
        tick=0,
        human_pos=p,
        human_heading=heading,
        human_speed=0.0,
        phase=PHASE_MOVING,
        goal=goal,
        robots=_robot_poses(cfg, 0, offsets),
        objects=cfg.objects,
        path=tuple(path[1:]),
        robot_offsets=offsets,
    )


def _step_ok(p, cfg, robots, prev=None) -> bool:
    xmin, ymin, xmax, ymax = cfg.bounds
    if not (xmin + _HUMAN_RADIUS <= p[0] <= xmax - _HUMAN_RADIUS and ymin + _HUMAN_RADIUS <= p[1] <= ymax - _HUMAN_RADIUS):
        return False
    if obstacles_distance(p, cfg.obstacles) <= _HUMAN_RADIUS * 0.6:
        return False
    for r in robots:
        d = math.hypot(p[0] - r[0], p[1] - r[1])
        # inside the separation radius only moves that back away are allowed
        if d < _ROBOT_SEPARATION and (prev is None or d <= math.hypot(prev[0] - r[0], prev[1] - r[1])):
            return False
    return True


def step_world(state: WorldState, cfg: WorldConfig) -> WorldState:
    """Advance one tick."""
    tick = state.tick + 1
    rng = _rng(cfg.seed, tick, 2)
    robots = _robot_poses(cfg, tick, state.robot_offsets)
    planner = planner_for(cfg)

    goal = state.goal
    path = state.path
    dwell_left = state.dwell_left
    transition_left = state.transition_left
    pos = state.human_pos
    heading = state.human_heading

    if state.phase == PHASE_STATIONARY and dwell_left > 0:
        dwell_left -= 1
        if dwell_left > 0:
            return dataclasses.replace(state, tick=tick, robots=robots, human_speed=0.0,
                                       dwell_left=dwell_left, arrived=False)
        choices = [s for s in range(1, 5) if s != goal]
        goal = int(choices[int(rng.integers(0, 3))])
        path = tuple(planner.plan(pos, cfg.stations[goal - 1])[1:])
        transition_left = int(round(cfg.transition_s * cfg.tick_rate))

    step = cfg.human_speed * cfg.dt
    while len(path) > 1 and math.hypot(path[0][0] - pos[0], path[0][1] - pos[1]) <= step:
        path = path[1:]
    target = path[0] if path else cfg.stations[goal - 1]
    dx, dy = target[0] - pos[0], target[1] - pos[1]
    dist = math.hypot(dx, dy)
    desired = math.atan2(dy, dx) if dist > 1e-12 else heading

    new_pos = None
    moved_heading = desired
    if dist <= step and len(path) <= 1:
        # final approach: snap onto the goal
        if _step_ok(target, cfg, robots, pos):
            new_pos = (float(target[0]), float(target[1]))
    else:
        for dtheta in (0.0, 0.5, -0.5, 1.0, -1.0, 1.5, -1.5):
            h = desired + dtheta
            cand = (pos[0] + step * math.cos(h), pos[1] + step * math.sin(h))
            if dtheta == 0.0 and _blocking_robot(pos, h, robots):
                continue
            if _step_ok(cand, cfg, robots, pos):
                new_pos, moved_heading = cand, h
                break

    if new_pos is None:
        # blocked: hold position
        return dataclasses.replace(
            state, tick=tick, robots=robots, human_speed=0.0, phase=PHASE_STATIONARY,
            goal=goal, path=path, dwell_left=0, transition_left=transition_left, arrived=False)

    if path and moved_heading != desired and not planner.segment_clear(new_pos, path[0], margin=_HUMAN_RADIUS * 0.6):
        replanned = planner.plan(new_pos, cfg.stations[goal - 1])
        if replanned is not None:
            path = tuple(replanned[1:])

    goal_pt = cfg.stations[goal - 1]
    arrived = math.hypot(new_pos[0] - goal_pt[0], new_pos[1] - goal_pt[1]) < 1e-9
    speed = math.hypot(new_pos[0] - pos[0], new_pos[1] - pos[1]) / cfg.dt
    if arrived:
        phase = PHASE_STATIONARY
        dwell_left = max(1, _dwell_ticks(cfg, rng))
        path = ()
        transition_left = 0
    elif transition_left > 0:
        phase = PHASE_TRANSITIONING
        transition_left -= 1
    else:
        phase = PHASE_MOVING
    return dataclasses.replace(
        state, tick=tick, robots=robots, human_pos=new_pos, human_heading=moved_heading,
        human_speed=speed, phase=phase, goal=goal, path=path, dwell_left=dwell_left,
        transition_left=transition_left, arrived=arrived)


def _blocking_robot(pos, heading, robots) -> bool:
    c, s = math.cos(heading), math.sin(heading)
    for r in robots:
        rx, ry = r[0] - pos[0], r[1] - pos[1]
        ahead = rx * c + ry * s
        lateral = abs(-rx * s + ry * c)
        if 0.0 < ahead < _LOOKAHEAD and lateral < _ROBOT_SEPARATION:
            return True
    return False


def generate_episode(cfg: WorldConfig, ticks: int) -> EpisodeLog:
    if ticks < 60:
        raise ValueError(f"episodes need at least 60 ticks, got {ticks}")
    state = generate_world(cfg)
    log = EpisodeLog(cfg, [state])
    for _ in range(ticks - 1):
        state = step_world(state, cfg)
        log.states.append(state)
    return log
