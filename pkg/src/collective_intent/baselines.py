"""Constant-velocity goal predictor on top of a Kalman-filtered head track."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

HISTORY = 12
STATIONARY_SPEED = 0.1


class InsufficientHistoryError(ValueError):
    pass


@dataclass
class KalmanTrack:
    """Constant-velocity filter over state (x, y, vx, vy)."""
    x: np.ndarray
    P: np.ndarray
    dt: float = 0.1
    q: float = 1.0        # white-acceleration spectral density
    r: float = 0.1        # measurement std, m
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY))

    @classmethod
    def start(cls, position, dt: float = 0.1, q: float = 1.0, r: float = 0.1,
              velocity=(0.0, 0.0), pos_var: float | None = None, vel_var: float = 4.0) -> "KalmanTrack":
        x = np.array([position[0], position[1], velocity[0], velocity[1]], dtype=float)
        pv = r * r if pos_var is None else pos_var
        P = np.diag([pv, pv, vel_var, vel_var])
        t = cls(x, P, dt, q, r)
        t.history.append(x.copy())
        return t

    def copy(self) -> "KalmanTrack":
        t = KalmanTrack(self.x.copy(), self.P.copy(), self.dt, self.q, self.r)
        t.history = deque((h.copy() for h in self.history), maxlen=HISTORY)
        return t

    @property
    def position(self) -> np.ndarray:
        return self.x[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[2:]


def _matrices(dt: float, q: float):
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    q1 = np.array([[dt ** 3 / 3, dt ** 2 / 2], [dt ** 2 / 2, dt]]) * q
    Q = np.zeros((4, 4))
    Q[np.ix_([0, 2], [0, 2])] = q1
    Q[np.ix_([1, 3], [1, 3])] = q1
    return F, Q


_H = np.hstack([np.eye(2), np.zeros((2, 2))])


def kalman_step(track: KalmanTrack, measurement=None, R=None) -> KalmanTrack:
    """Predict one tick, update if a 2D measurement is given, append to history.

    ``R`` is an optional 2x2 measurement covariance; default ``r**2 * I``.
    """
    t = track.copy()
    F, Q = _matrices(t.dt, t.q)
    x = F @ t.x
    P = F @ t.P @ F.T + Q
    if measurement is not None:
        z = np.asarray(measurement, dtype=float)
        Rm = np.eye(2) * t.r ** 2 if R is None else np.asarray(R, dtype=float)
        S = _H @ P @ _H.T + Rm
        K = np.linalg.solve(S, _H @ P).T
        x = x + K @ (z - _H @ x)
        IKH = np.eye(4) - K @ _H
        # Joseph form keeps P symmetric PSD
        P = IKH @ P @ IKH.T + K @ Rm @ K.T
    t.x = x
    t.P = 0.5 * (P + P.T)
    t.history.append(x.copy())
    return t


def cvm_predict(track: KalmanTrack, stations, behind_tol: float = 0.5, min_history: int = HISTORY) -> int:
    """StationId from the mean velocity of the last 12 filtered states.

    Below 0.1 m/s the nearest station wins. Otherwise the station closest to
    the forward velocity ray wins (ties: nearest); stations more than
    ``behind_tol`` meters behind the walker are not forward and only count
    when no other station is. ``min_history`` below 12 lets a young track
    use the states it has.
    """
    if len(track.history) < min(min_history, HISTORY):
        raise InsufficientHistoryError(f"need {min(min_history, HISTORY)} states, have {len(track.history)}")
    stations = np.asarray(stations, dtype=float)
    hist = np.array(track.history)
    v = hist[:, 2:].mean(axis=0)
    p = hist[-1, :2]
    d = stations - p
    dist = np.hypot(d[:, 0], d[:, 1])
    speed = float(np.hypot(*v))
    if speed < STATIONARY_SPEED:
        return int(np.argmin(dist)) + 1
    u = v / speed
    along = d @ u
    perp = np.abs(d[:, 0] * u[1] - d[:, 1] * u[0])
    # distance from each station to the ray p + s*u, s >= 0
    ray = np.where(along > 0, perp, dist)
    ray = np.where(along < -behind_tol, np.inf, ray) if (along >= -behind_tol).any() else ray
    best = ray.min()
    cand = np.flatnonzero(ray <= best + 1e-9)
    return int(cand[np.argmin(dist[cand])]) + 1
