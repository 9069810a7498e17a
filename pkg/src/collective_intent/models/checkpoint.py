"""Versioned JSON checkpoints: layer name -> shape -> row-major float data."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .gcn import GcnParams
from .gru import GruParams
from .temporal import IntentModel

CHECKPOINT_FORMAT = "collective-intent-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack(tensors: dict) -> dict:
    return {k: {"shape": list(v.shape), "dtype": str(v.dtype), "data": v.reshape(-1).tolist()}
            for k, v in tensors.items()}


def _unpack(layers: dict, prefix: str) -> dict:
    out = {}
    for k, rec in layers.items():
        if k.startswith(prefix + "."):
            a = np.asarray(rec["data"], dtype=rec.get("dtype", "float64")).reshape(rec["shape"])
            out[k.split(".", 1)[1]] = a
    return out


def model_to_dict(model: IntentModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
        "kind": model.kind, "temperature": model.temperature, "obs_frames": model.obs_frames,
        "n_forecast": model.n_forecast, "subsample": model.subsample,
        "mean_includes_ego": model.mean_includes_ego, "edge_affinity": model.edge_affinity,
        "meta": model.meta, "layers": _pack(model.tensors()),
    }


def model_from_dict(d: dict) -> IntentModel:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a checkpoint file")
    if d.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {d.get('version')}")
    layers = d["layers"]
    gcn = GcnParams(**_unpack(layers, "gcn"))
    g = _unpack(layers, "gru")
    return IntentModel(kind=d["kind"], gcn=gcn, gru=GruParams(**g) if g else None,
                       temperature=d["temperature"], obs_frames=d["obs_frames"], n_forecast=d["n_forecast"],
                       subsample=d["subsample"], mean_includes_ego=d["mean_includes_ego"],
                       edge_affinity=d["edge_affinity"], meta=d.get("meta", {}))


def save_checkpoint(model: IntentModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_checkpoint(path) -> IntentModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return model_from_dict(json.loads(path.read_text()))
