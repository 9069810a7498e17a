"""Ego and collective GRU predictors and the end-to-end GCN -> GRU pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..perception import KEYPOINT_DIM
from .functional import DimensionError, cross_entropy, softmax
from .gcn import GcnParams, gcn_embed_backward, gcn_embed_batch
from .gru import GruParams, sequence_backward, sequence_forward

MODEL_KINDS = ("gnn", "ego", "collective")


class WindowError(ValueError):
    """Sequence length does not match the model's observation window."""


@dataclass
class PredictionRecord:
    robot_id: int
    tick: int
    logits: np.ndarray        # (4,) frame-t logits
    probs: np.ndarray         # (4,) calibrated probabilities for frame t
    forecast: np.ndarray      # (n, 4) probabilities for t+1 .. t+n
    confidence: float         # calibrated probability of the argmax class
    action: int               # StationId 1..4

    def to_dict(self) -> dict:
        return {"robot_id": self.robot_id, "tick": self.tick, "action": self.action,
                "confidence": self.confidence, "probs": self.probs.tolist(),
                "forecast_actions": (self.forecast.argmax(axis=1) + 1).tolist()}


def make_record(logits: np.ndarray, temperature: float = 1.0, robot_id: int = 0, tick: int = 0) -> PredictionRecord:
    """``logits`` is (n + 1, C): row 0 for frame t, row k for t + k."""
    logits = np.asarray(logits, dtype=np.float64)
    p = softmax(logits / temperature, axis=-1)
    k = int(np.argmax(logits[0]))
    return PredictionRecord(robot_id, tick, logits[0].copy(), p[0], p[1:], float(p[0, k]), k + 1)


# ---------------------------------------------------------------- model bundle

@dataclass
class IntentModel:
    """A trained predictor: the spatial encoder plus (for ego/collective) a GRU."""
    kind: str
    gcn: GcnParams
    gru: GruParams | None = None
    temperature: float = 1.0
    obs_frames: int = 20
    n_forecast: int = 20
    subsample: int | None = None
    mean_includes_ego: bool = False
    edge_affinity: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.kind != "gnn" and self.gru is None:
            raise ValueError(f"{self.kind} model needs GRU parameters")

    @property
    def window_len(self) -> int:
        return self.obs_frames if self.subsample is None else min(self.subsample, self.obs_frames)

    def tensors(self) -> dict:
        t = dict(self.gcn.tensors())
        if self.gru is not None:
            t.update(self.gru.tensors())
        return t

    def astype(self, dtype) -> "IntentModel":
        import dataclasses
        return dataclasses.replace(self, gcn=self.gcn.astype(dtype),
                                   gru=None if self.gru is None else self.gru.astype(dtype))


def input_size(kind: str, embed: int = 128, mean_includes_ego: bool = False) -> int:
    if kind == "ego" or (kind == "collective" and mean_includes_ego):
        return embed + KEYPOINT_DIM
    if kind == "collective":
        return 2 * embed + KEYPOINT_DIM
    raise ValueError(f"{kind!r} has no GRU input")


def ego_inputs(emb: np.ndarray, kp: np.ndarray) -> np.ndarray:
    """Per-frame concat(embedding, keypoints): (..., T, E + 34)."""
    return np.concatenate([emb, kp], axis=-1)


def collective_inputs(emb, neighbor_mean, kp, mean_includes_ego: bool = False,
                      ego_seen=None, n_neighbors=None) -> np.ndarray:
    """Per-frame concat(ego, neighbor mean, keypoints), or with ``mean_includes_ego``
    the mean over ego and neighbors followed by keypoints.

    The alternative mode needs ``ego_seen`` (bool, 1 when the ego embedding is
    real) and ``n_neighbors`` (how many embeddings make up the neighbor mean).
    """
    if not mean_includes_ego:
        return np.concatenate([emb, neighbor_mean, kp], axis=-1)
    if ego_seen is None or n_neighbors is None:
        raise ValueError("mean_includes_ego needs ego_seen and n_neighbors")
    s = np.asarray(ego_seen, dtype=emb.dtype)[..., None]
    k = np.asarray(n_neighbors, dtype=emb.dtype)[..., None]
    tot = s + k
    mean = np.where(tot > 0, (emb * s + neighbor_mean * k) / np.maximum(tot, 1), 0.0)
    return np.concatenate([mean.astype(emb.dtype), kp], axis=-1)


def _check_window(seq_len: int, expected: int | None):
    if expected is not None and seq_len != expected:
        raise WindowError(f"sequence has {seq_len} frames, model window is {expected}")


def _kp_array(kp) -> np.ndarray:
    a = np.asarray(getattr(kp, "coords", kp), dtype=float)
    if a.shape != (KEYPOINT_DIM,):
        raise DimensionError(f"keypoints must have length {KEYPOINT_DIM}, got {a.shape}")
    return a


def ego_forward(sequence, params: GruParams, window: int | None = None, temperature: float = 1.0,
                robot_id: int = 0, tick: int = 0, n_forecast: int | None = None) -> PredictionRecord:
    """``sequence`` is a list of (human embedding, PoseKeypoints or length-34 array)."""
    _check_window(len(sequence), window)
    x = np.stack([np.concatenate([np.asarray(e, dtype=float), _kp_array(k)]) for e, k in sequence])
    logits, _ = sequence_forward(x[None].astype(params.w.dtype), params, n_forecast)
    return make_record(logits[0], temperature, robot_id, tick)


def collective_forward(sequence, params: GruParams, window: int | None = None, temperature: float = 1.0,
                       robot_id: int = 0, tick: int = 0, n_forecast: int | None = None) -> PredictionRecord:
    """``sequence`` is a list of (ego embedding, neighbor-mean embedding, keypoints)."""
    _check_window(len(sequence), window)
    x = np.stack([np.concatenate([np.asarray(e, dtype=float), np.asarray(m, dtype=float), _kp_array(k)])
                  for e, m, k in sequence])
    logits, _ = sequence_forward(x[None].astype(params.w.dtype), params, n_forecast)
    return make_record(logits[0], temperature, robot_id, tick)


# ---------------------------------------------------------------- end-to-end pipeline

def pipeline_loss(gcn: GcnParams, gru: GruParams, A, X, seen, kp, labels, neighbor_mean=None,
                  frame_labels=None, spatial_weight: float = 0.0):
    """Mean cross-entropy of the GCN -> GRU pipeline and gradients for every tensor.

    A (B, T, N, N), X (B, T, N, D): per-frame star graphs; ``seen`` (B, T)
    masks frames without a human detection (their embedding is zero).
    ``labels`` (B, n + 1) are 0-based classes for t .. t+n. With a
    ``neighbor_mean`` (B, T, E) the collective input layout is used.
    ``spatial_weight`` adds the GCN head's loss against ``frame_labels``
    (B, T) on seen frames.
    """
    B, T, N, D = X.shape
    n = labels.shape[1] - 1
    emb_flat, sp_logits, gcache = gcn_embed_batch(A.reshape(B * T, N, N), X.reshape(B * T, N, D), gcn)
    m = seen.reshape(B * T, 1).astype(emb_flat.dtype)
    emb = (emb_flat * m).reshape(B, T, -1)
    E = emb.shape[-1]
    if neighbor_mean is None:
        inp = ego_inputs(emb, kp)
    else:
        inp = collective_inputs(emb, neighbor_mean, kp)
    logits, cache = sequence_forward(inp, gru, n)
    loss, dlogits = cross_entropy(logits, labels)
    grads, dX = sequence_backward(cache, dlogits, gru)
    demb = (dX[..., :E].reshape(B * T, E)) * m
    dsp = None
    if spatial_weight > 0 and frame_labels is not None:
        frame_lab = np.asarray(frame_labels).reshape(-1)
        keep = seen.reshape(-1).astype(sp_logits.dtype)
        if keep.sum() > 0:
            sl, dsp = cross_entropy(sp_logits, frame_lab, keep)
            loss += spatial_weight * sl
            dsp *= spatial_weight
    grads.update(gcn_embed_backward(gcache, demb, dsp, gcn))
    return loss, grads
