"""Single-round voting weighted by visibility share and calibrated confidence."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

N_CLASSES = 4


class DegenerateVisibilityError(ValueError):
    """No robot detected anything in the window."""


@dataclass
class VoteInput:
    actions: list              # StationId per robot
    confidences: list          # c_i in (0, 1]
    counts: list               # N_detected,i
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        m = len(self.actions)
        if m < 1:
            raise ValueError("a vote needs at least one robot")
        if len(self.confidences) != m or len(self.counts) != m:
            raise ValueError("actions, confidences and counts must have equal lengths")
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("alpha, beta must be >= 0 with a positive sum")


@dataclass
class ConsensusResult:
    action: int
    votes: list                # V_i per robot
    totals: dict = field(default_factory=dict)   # StationId -> summed vote
    tie_break: bool = False
    uniform_visibility: bool = False


def visibility_ratios(counts) -> list:
    counts = np.asarray(counts, dtype=float)
    if (counts < 0).any():
        raise ValueError("detection counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise DegenerateVisibilityError("all detection counts are zero")
    return (counts / total).tolist()


def normalize(values) -> list:
    v = np.asarray(values, dtype=float)
    if (v < 0).any():
        raise ValueError("values must be non-negative")
    s = v.sum()
    if not s > 0:
        raise ValueError("cannot normalize values that sum to zero")
    return (v / s).tolist()


def weighted_votes(v_norm, c_norm, alpha: float = 0.5, beta: float = 0.5) -> list:
    if len(v_norm) != len(c_norm):
        raise ValueError(f"length mismatch: {len(v_norm)} visibility vs {len(c_norm)} confidence")
    return [alpha * v + beta * c for v, c in zip(v_norm, c_norm)]


def decide(votes: VoteInput) -> ConsensusResult:
    m = len(votes.actions)
    uniform = False
    try:
        v = visibility_ratios(votes.counts)
    except DegenerateVisibilityError:
        log.info("no detections from any voter; using uniform visibility")
        v = [1.0 / m] * m
        uniform = True
    V = weighted_votes(normalize(v), normalize(votes.confidences), votes.alpha, votes.beta)
    totals = {k: 0.0 for k in range(1, N_CLASSES + 1)}
    for a, w in zip(votes.actions, V):
        totals[int(a)] += w
    cast = {int(a) for a in votes.actions}
    best = max(totals[a] for a in cast)
    tied = sorted(a for a in cast if totals[a] == best)
    action = tied[0]
    if len(tied) > 1:
        top_c = {a: max(c for k, c in zip(votes.actions, votes.confidences) if k == a) for a in tied}
        hi = max(top_c.values())
        action = min(a for a in tied if top_c[a] == hi)
    return ConsensusResult(action, V, totals, len(tied) > 1, uniform)
