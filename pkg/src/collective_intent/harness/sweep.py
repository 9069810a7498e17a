"""Experiment sweeps: train per seed, evaluate every coordinate, emit CSV/JSON.

Rows are sorted by coordinate before writing, and the files carry no
timestamps, so an identical spec gives byte-identical output.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..comms import NetworkModel
from ..models.checkpoint import load_checkpoint, save_checkpoint
from ..models.temporal import IntentModel
from ..models.train import TrainConfig
from ..perception import FeatureEncoder, PerceptionConfig
from .dataset import Dataset, generate_dataset, window_indices
from .evaluate import CvmConfig, TeamPredictions, eval_samples, predict_cvm, predict_team, run_consensus
from .metrics import CSV_COLUMNS, MetricsRow, compute_metrics
from .training import ModelShape, SplitTables, train_gnn, train_temporal

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODEL_NAMES = ("gnn", "ego", "collective", "consensus", "cvm")
HORIZONS = ((10, 10), (20, 20), (30, 30))
SUBSAMPLES = (10, 5, 3)


class SpecError(ValueError):
    """Invalid experiment specification."""


class MissingCheckpointError(KeyError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: int = 3
    robot_counts: tuple = (3,)
    horizons: tuple = ((20, 20),)
    subsamples: tuple = (None,)        # None = every frame of the window
    models: tuple = MODEL_NAMES
    seeds: tuple = (0,)
    alpha: float = 0.5
    beta: float = 0.5
    p_drop: float = 0.0
    latency: int = 0
    network_seed: int = 0
    n_episodes: int = 200
    ticks: int = 300
    gnn_train: dict = field(default_factory=dict)      # TrainConfig overrides
    gru_train: dict = field(default_factory=dict)
    perception: dict = field(default_factory=dict)     # PerceptionConfig overrides
    cvm: dict = field(default_factory=dict)            # CvmConfig overrides
    shape: dict = field(default_factory=dict)          # ModelShape overrides
    edge_affinity: bool = False
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        fix = object.__setattr__
        fix(self, "robot_counts", tuple(int(m) for m in self.robot_counts))
        fix(self, "horizons", tuple((int(a), int(b)) for a, b in self.horizons))
        fix(self, "subsamples", tuple(None if s is None else int(s) for s in self.subsamples))
        fix(self, "models", tuple(self.models))
        fix(self, "seeds", tuple(int(s) for s in self.seeds))
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise SpecError(f"schema_version must be {SCHEMA_VERSION}, got {self.schema_version!r}")
        if self.scenario not in (1, 2, 3):
            raise SpecError(f"scenario must be 1, 2 or 3, got {self.scenario!r}")
        for name in ("robot_counts", "horizons", "subsamples", "models", "seeds"):
            if not getattr(self, name):
                raise SpecError(f"{name} must be nonempty")
        if any(m < 1 or m > 4 for m in self.robot_counts):
            raise SpecError("robot counts must lie in 1..4")
        if any(h not in HORIZONS for h in self.horizons):
            raise SpecError(f"horizon pairs must be drawn from {HORIZONS}")
        if any(s is not None and s not in SUBSAMPLES for s in self.subsamples):
            raise SpecError(f"subsamples must be drawn from {SUBSAMPLES} (or null for every frame)")
        bad = [m for m in self.models if m not in MODEL_NAMES]
        if bad:
            raise SpecError(f"unknown models {bad}; expected a subset of {MODEL_NAMES}")
        if len(set(self.seeds)) != len(self.seeds):
            raise SpecError("seeds must be distinct")
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise SpecError("alpha and beta must be nonnegative with a positive sum")
        if not 0.0 <= self.p_drop <= 1.0 or self.latency < 0:
            raise SpecError("p_drop must lie in [0, 1] and latency must be nonnegative")
        if self.n_episodes < 50:
            raise SpecError("n_episodes must be at least 50")
        try:
            self.train_config("gnn", 0)
            self.train_config("gru", 0)
            self.perception_config()
            self.cvm_config()
            self.model_shape()
        except TypeError as exc:
            raise SpecError(f"bad override: {exc}") from None

    # -- derived configs
    def train_config(self, which: str, seed: int) -> TrainConfig:
        over = self.gnn_train if which == "gnn" else self.gru_train
        base = {"epochs": 15} if which == "gnn" else {"epochs": 12, "lr": 1e-3, "samples_per_epoch": 8000}
        return TrainConfig(**{**base, **over, "seed": seed})

    def perception_config(self) -> PerceptionConfig:
        pc = dict(self.perception)
        if "image_size" in pc:
            pc["image_size"] = tuple(pc["image_size"])
        return PerceptionConfig(**pc)

    def cvm_config(self) -> CvmConfig:
        return CvmConfig(**self.cvm)

    def model_shape(self) -> ModelShape:
        return ModelShape(**self.shape)

    def network(self) -> NetworkModel:
        return NetworkModel(self.p_drop, self.latency, self.network_seed)

    def temporal_kinds(self) -> list:
        kinds = []
        if "ego" in self.models:
            kinds.append("ego")
        if "collective" in self.models or "consensus" in self.models:
            kinds.append("collective")
        return kinds

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["horizons"] = [list(h) for h in self.horizons]
        for k in ("robot_counts", "subsamples", "models", "seeds"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        if "schema_version" not in d:
            raise SpecError("config is missing the mandatory schema_version field")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise SpecError(f"unknown spec fields: {unknown}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(str(exc)) from None


def load_spec(path) -> ExperimentSpec:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise SpecError(f"{path}: top level must be an object")
    return ExperimentSpec.from_dict(d)


# ---------------------------------------------------------------- checkpoints

def frames_used(obs: int, subsample: int | None) -> int:
    return len(window_indices(obs, subsample))


def checkpoint_key(kind: str, obs: int, n: int, subsample: int | None, seed: int) -> str:
    if kind == "gnn":
        return f"gnn_seed{seed}"
    return f"{kind}_o{obs}_n{n}_f{frames_used(obs, subsample)}_seed{seed}"


def required_checkpoints(spec: ExperimentSpec, seed: int) -> list:
    """Checkpoint keys the spec's models need for one seed."""
    keys = []
    if any(m != "cvm" for m in spec.models):
        keys.append(checkpoint_key("gnn", 0, 0, None, seed))
    for obs, n in spec.horizons:
        for sub in spec.subsamples:
            keys.extend(checkpoint_key(kind, obs, n, sub, seed) for kind in spec.temporal_kinds())
    return list(dict.fromkeys(keys))


def train_checkpoints(spec: ExperimentSpec, ds: Dataset, seed: int, dtype=np.float32, existing=None) -> dict:
    """Every model the spec needs for one seed, keyed by ``checkpoint_key``.

    Models already in ``existing`` are reused (a trained GNN is shared by
    every GRU of the seed) and not returned again.
    """
    existing = existing or {}
    need = [k for k in required_checkpoints(spec, seed) if k not in existing]
    if not need:
        return {}
    shape = spec.model_shape()
    out = {}
    gkey = checkpoint_key("gnn", 0, 0, None, seed)
    if gkey in existing:
        gnn = existing[gkey]
    else:
        gnn, _ = train_gnn(ds, spec.train_config("gnn", seed), shape, spec.edge_affinity, dtype=dtype)
        out[gkey] = gnn
    kinds = spec.temporal_kinds()
    cfg = spec.train_config("gru", seed)
    tables = None
    for obs, n in spec.horizons:
        for sub in spec.subsamples:
            for kind in kinds:
                key = checkpoint_key(kind, obs, n, sub, seed)
                if key not in need:
                    continue
                if tables is None and not cfg.finetune_gcn:
                    enc = FeatureEncoder(ds.perception)
                    g = gnn.gcn.astype(dtype)
                    tables = (SplitTables.build(ds.split("train"), g, enc, gnn.edge_affinity, dtype),
                              SplitTables.build(ds.split("val"), g, enc, gnn.edge_affinity, dtype))
                log.info("training %s", key)
                out[key], _ = train_temporal(kind, ds, gnn, cfg, obs, n, sub, shape, dtype=dtype, tables=tables)
    return out


def save_checkpoints(models: dict, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for key, m in sorted(models.items()):
        save_checkpoint(m, d / f"{key}.json")


def load_checkpoints(directory) -> dict:
    return {p.stem: load_checkpoint(p) for p in sorted(Path(directory).glob("*.json"))}


# ---------------------------------------------------------------- evaluation

def _lookup(checkpoints: dict, kind, obs, n, sub, seed) -> IntentModel:
    key = checkpoint_key(kind, obs, n, sub, seed)
    if key not in checkpoints:
        raise MissingCheckpointError(f"missing checkpoint {key!r}")
    m = checkpoints[key]
    if kind == "gnn":
        m = dataclasses.replace(m, obs_frames=obs, n_forecast=n)
    return m


def eval_seed(seed: int) -> int:
    """Anchor-sampling seed for evaluation; never equal to a training seed stream."""
    return int(np.random.SeedSequence([seed, 0xE7A1]).generate_state(1)[0])


def _row(spec, M, obs, n, sub, model, seed, preds: TeamPredictions, team) -> MetricsRow:
    acc_t, acc_h, cm = compute_metrics(preds.pred[:, 0], preds.pred[:, 1:], preds.labels[:, 0],
                                       preds.labels[:, 1:], n)
    per_robot = {}
    for r in team:
        m = preds.samples[:, 1] == r
        if m.any():
            per_robot[r + 1] = float(np.mean(preds.pred[m, 0] == preds.labels[m, 0]))
    return MetricsRow(spec.scenario, M, obs, n, frames_used(obs, sub), model, seed, acc_t, acc_h,
                      per_robot=per_robot, confusion=cm.tolist(), n_frames=len(preds.samples))


def evaluate_coordinate(spec: ExperimentSpec, ds: Dataset, checkpoints: dict, seed: int, M: int, obs: int,
                        n: int, sub, dtype=None, on_deliver=None, only_episode: int | None = None):
    """Rows (and per-model predictions) for one (robots, horizon, subsample) coordinate.

    ``only_episode`` keeps the samples of one test episode (as drawn for the
    whole split), which reproduces that episode's share of a full run.
    """
    test = ds.split("test")
    team = list(range(M))
    enc = FeatureEncoder(ds.perception)
    network = spec.network()
    anchors, samples = eval_samples(test, team, obs, n, eval_seed(seed))
    if only_episode is not None:
        anchors = anchors[anchors[:, 0] == only_episode]
        samples = samples[samples[:, 0] == only_episode]
    rows, preds_by_model = [], {}
    collective = None
    for model in spec.models:
        if model == "consensus":
            continue
        if model == "cvm":
            p = predict_cvm(test, samples, n, ds.perception, spec.cvm_config())
        else:
            m = _lookup(checkpoints, model, obs, n, sub, seed)
            if dtype is not None:
                m = m.astype(dtype)
            p = predict_team(m, test, samples, team, enc, network, on_deliver)
            if model == "collective":
                collective = p
        preds_by_model[model] = p
        rows.append(_row(spec, M, obs, n, sub, model, seed, p, team))
    if "consensus" in spec.models:
        if collective is None:
            m = _lookup(checkpoints, "collective", obs, n, sub, seed)
            if dtype is not None:
                m = m.astype(dtype)
            collective = predict_team(m, test, samples, team, enc, network, on_deliver)
        c = run_consensus(test, anchors, collective, team, obs, network, spec.alpha, spec.beta, on_deliver)
        dec = np.repeat(c["decisions"][:, None], n + 1, axis=1)
        p = TeamPredictions(samples, dec, collective.labels, collective.confidence, c)
        row = _row(spec, M, obs, n, sub, "consensus", seed, p, team)
        row.consensus_acc = c["accuracy"]
        row.consensus_acc_horizon = c["accuracy_horizon"]
        row.disagreement_rate = c["disagreement_rate"]
        rows.append(row)
        preds_by_model["consensus"] = p
    return rows, preds_by_model


def run_sweep(spec: ExperimentSpec, checkpoints: dict, datasets: dict, dtype=None, frame_log=None) -> list:
    """One MetricsRow per sweep coordinate, sorted by coordinate.

    ``datasets`` maps seed -> Dataset; ``checkpoints`` maps checkpoint keys
    to models. ``frame_log`` (a list) receives per-frame prediction records.
    """
    rows = []
    for seed in spec.seeds:
        if seed not in datasets:
            raise KeyError(f"no dataset for seed {seed}")
        ds = datasets[seed]
        for M in spec.robot_counts:
            for obs, n in spec.horizons:
                for sub in spec.subsamples:
                    r, preds = evaluate_coordinate(spec, ds, checkpoints, seed, M, obs, n, sub, dtype)
                    rows.extend(r)
                    if frame_log is not None:
                        for model, p in preds.items():
                            frame_log.extend(frame_records(spec.scenario, M, obs, n, frames_used(obs, sub),
                                                           model, seed, p))
    rows.sort(key=lambda r: r.key())
    keys = [r.key() for r in rows]
    if len(set(keys)) != len(keys):
        raise RuntimeError("duplicate sweep coordinates")
    return rows


FRAME_COLUMNS = ("scenario", "robots", "obs_frames", "forecast_frames", "subsample", "model", "seed",
                 "episode", "robot", "tick", "label", "pred")


def frame_records(scenario, M, obs, n, frames, model, seed, p: TeamPredictions) -> list:
    return [(scenario, M, obs, n, frames, model, seed, int(e), int(r), int(t), int(lab), int(pr))
            for (e, r, t), lab, pr in zip(p.samples, p.labels[:, 0], p.pred[:, 0])]


# ---------------------------------------------------------------- output

def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.csv_record())
    return buf.getvalue()


def write_results(rows, out_dir, frame_log=None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "results.csv", "json": out / "results.json"}
    paths["csv"].write_text(rows_to_csv(rows))
    paths["json"].write_text(json.dumps([r.to_dict() for r in rows], indent=1, sort_keys=True) + "\n")
    if frame_log is not None:
        paths["frames"] = out / "frames.csv"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FRAME_COLUMNS)
        w.writerows(sorted(frame_log))
        paths["frames"].write_text(buf.getvalue())
    return paths


def dataset_for(spec: ExperimentSpec, seed: int) -> Dataset:
    return generate_dataset(spec.scenario, spec.n_episodes, spec.ticks, seed, spec.perception_config())


def run_experiment(spec: ExperimentSpec, out_dir=None, datasets=None, checkpoints=None, deterministic=False,
                   save_artifacts: bool = True):
    """Generate data, train, sweep and (optionally) write everything under ``out_dir``.

    Returns (rows, checkpoints, datasets).
    """
    datasets = dict(datasets or {})
    checkpoints = dict(checkpoints or {})
    for seed in spec.seeds:
        if seed not in datasets:
            log.info("generating scenario %d data for seed %d", spec.scenario, seed)
            datasets[seed] = dataset_for(spec, seed)
        checkpoints.update(train_checkpoints(spec, datasets[seed], seed, existing=checkpoints))
    frame_log = [] if out_dir is not None else None
    rows = run_sweep(spec, checkpoints, datasets, np.float64 if deterministic else None, frame_log)
    if out_dir is not None:
        write_results(rows, out_dir, frame_log)
        if save_artifacts:
            from .dataset import save_dataset
            save_checkpoints(checkpoints, Path(out_dir) / "checkpoints")
            for seed, ds in sorted(datasets.items()):
                test_only = Dataset(ds.split("test"), [], [], list(range(len(ds.test))), ds.perception,
                                    [ds.seeds[k] for k in ds.test] if ds.seeds else [])
                save_dataset(test_only, Path(out_dir) / f"test_episodes_seed{seed}.npz")
    return rows, checkpoints, datasets
