"""In-process pub/sub transport for embedding and prediction messages.

Each publication is copied onto every other robot's link, dropped per link
with probability ``p_drop`` and delivered ``latency`` ticks later. Within a
(sender, tick, message type) the latest publication wins.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EmbeddingMsg:
    sender: int
    tick: int
    embedding: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.embedding)):
            raise ValueError("embedding has non-finite entries")

    def to_json(self) -> dict:
        return {"type": "embedding", "sender": self.sender, "tick": self.tick,
                "embedding": np.asarray(self.embedding, dtype=float).tolist()}


@dataclass(frozen=True)
class PredictionMsg:
    sender: int
    tick: int
    action: int
    confidence: float
    n_detected: int

    def __post_init__(self):
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError(f"confidence must be in (0, 1], got {self.confidence}")
        if self.n_detected < 0:
            raise ValueError("detection count must be non-negative")

    def to_json(self) -> dict:
        return {"type": "prediction", "sender": self.sender, "tick": self.tick, "action": self.action,
                "confidence": self.confidence, "n_detected": self.n_detected}


def message_from_json(d: dict):
    d = dict(d)
    kind = d.pop("type")
    if kind == "embedding":
        return EmbeddingMsg(d["sender"], d["tick"], np.asarray(d["embedding"], dtype=float))
    if kind == "prediction":
        return PredictionMsg(**d)
    raise ValueError(f"unknown message type {kind!r}")


@dataclass(frozen=True)
class NetworkModel:
    p_drop: float = 0.0
    latency: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_drop <= 1.0:
            raise ValueError(f"p_drop must be in [0, 1], got {self.p_drop}")
        if self.latency < 0:
            raise ValueError("latency must be >= 0")


class Transport:
    """Mailboxes keyed by (receiver, delivery tick)."""

    def __init__(self, robots, network: NetworkModel | None = None, on_deliver=None):
        self.robots = list(robots)
        self.network = network or NetworkModel()
        self.on_deliver = on_deliver
        self._boxes: dict = {}

    def _dropped(self, msg, receiver: int) -> bool:
        p = self.network.p_drop
        if p <= 0.0:
            return False
        if p >= 1.0:
            return True
        kind = 0 if isinstance(msg, EmbeddingMsg) else 1
        rng = np.random.default_rng([self.network.seed, msg.sender, receiver, msg.tick, kind])
        return bool(rng.random() < p)

    def publish(self, msg, tick: int | None = None) -> None:
        tick = msg.tick if tick is None else tick
        due = tick + self.network.latency
        kind = type(msg).__name__
        for r in self.robots:
            if r == msg.sender or self._dropped(msg, r):
                continue
            self._boxes.setdefault((r, due), {})[(kind, msg.sender, msg.tick)] = msg

    def collect(self, robot: int, tick: int):
        box = self._boxes.pop((robot, tick), {})
        emb, pred = [], []
        for (kind, sender, _), msg in sorted(box.items(), key=lambda kv: (kv[0][1], kv[0][2], kv[0][0])):
            (emb if kind == "EmbeddingMsg" else pred).append(msg)
            if self.on_deliver is not None:
                self.on_deliver(robot, tick, msg)
        return emb, pred


def publish(msg, network: Transport, tick: int | None = None) -> None:
    network.publish(msg, tick)


def collect(robot: int, tick: int, network: Transport):
    return network.collect(robot, tick)


def aggregate_embeddings(msgs, dim: int = 128) -> np.ndarray:
    """Mean of the received embeddings, or the zero vector of length ``dim``."""
    if not msgs:
        return np.zeros(dim)
    return np.mean([np.asarray(m.embedding, dtype=float) for m in msgs], axis=0)


def delivery_record(robot: int, tick: int, msg) -> str:
    d = msg.to_json()
    d.update(receiver=robot, delivered_tick=tick)
    return json.dumps(d, sort_keys=True)
