"""Accuracy metrics and the result row type."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

N_CLASSES = 4

CSV_COLUMNS = ("scenario", "robots", "obs_frames", "forecast_frames", "subsample", "model", "seed",
               "acc_t", "acc_horizon", "consensus_acc", "disagreement_rate",
               "acc_1", "acc_2", "acc_3", "acc_4")


class MisalignedError(ValueError):
    pass


@dataclass
class MetricsRow:
    scenario: int
    robots: int
    obs_frames: int
    forecast_frames: int
    subsample: int
    model: str
    seed: int
    acc_t: float
    acc_horizon: float
    consensus_acc: float | None = None
    disagreement_rate: float | None = None
    per_robot: dict = field(default_factory=dict)       # robot number (1-based) -> accuracy
    confusion: list = field(default_factory=list)       # 4x4 counts, rows = truth
    n_frames: int = 0
    consensus_acc_horizon: float | None = None

    def key(self):
        return (self.scenario, self.robots, self.obs_frames, self.forecast_frames, self.subsample,
                self.model, self.seed)

    def csv_record(self) -> list:
        def fmt(x):
            return "" if x is None else f"{x:.6f}"
        rec = [self.scenario, self.robots, self.obs_frames, self.forecast_frames, self.subsample,
               self.model, self.seed, fmt(self.acc_t), fmt(self.acc_horizon), fmt(self.consensus_acc),
               fmt(self.disagreement_rate)]
        rec += [fmt(self.per_robot.get(k)) for k in range(1, 5)]
        return rec

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_robot"] = {str(k): v for k, v in self.per_robot.items()}
        return d


def confusion_matrix(pred, truth, n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows = true StationId, columns = predicted (both 1-based inputs)."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth) - 1, np.asarray(pred) - 1), 1)
    return cm


def compute_metrics(pred_t, pred_future, labels_t, labels_future, n: int | None = None):
    """Frame-t accuracy, mean-over-horizon accuracy and the frame-t confusion matrix.

    ``pred_future``/``labels_future`` are (K, n) StationIds for t+1 .. t+n.
    """
    pred_t = np.asarray(pred_t)
    labels_t = np.asarray(labels_t)
    pf = np.asarray(pred_future)
    lf = np.asarray(labels_future)
    if pf.ndim == 1:
        pf = pf.reshape(len(pred_t), -1) if len(pred_t) else pf.reshape(0, 0)
    if lf.ndim == 1:
        lf = lf.reshape(len(labels_t), -1) if len(labels_t) else lf.reshape(0, 0)
    if pred_t.shape != labels_t.shape or pf.shape != lf.shape or len(pf) != len(pred_t):
        raise MisalignedError("predictions and labels are not aligned")
    if n is not None and pf.shape[1] != n:
        raise MisalignedError(f"expected {n} forecast columns, got {pf.shape[1]}")
    if len(pred_t) == 0:
        return float("nan"), float("nan"), np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    acc_t = float(np.mean(pred_t == labels_t))
    acc_h = float(np.mean(pf == lf)) if pf.shape[1] else acc_t
    return acc_t, acc_h, confusion_matrix(pred_t, labels_t)
