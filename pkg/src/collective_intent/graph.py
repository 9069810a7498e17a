"""Human-centered star graphs and their symmetrically normalized adjacency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .perception import HUMAN


class MissingHumanError(ValueError):
    """A star graph needs a human detection at its hub."""


@dataclass
class SceneGraph:
    kinds: list              # node kinds; kinds[0] == "human"
    features: np.ndarray     # (m + 1, 2F)
    weights: np.ndarray      # (m,) edge weight between the human and object j + 1
    keypoints_present: bool = True

    @property
    def n_nodes(self) -> int:
        return len(self.kinds)

    def adjacency(self) -> np.ndarray:
        n = self.n_nodes
        A = np.zeros((n, n))
        A[0, 1:] = self.weights
        A[1:, 0] = self.weights
        return A


def build_star_graph(detections, features, keypoints_present: bool = True,
                     edge_affinity: bool = False, affinity_scale: float = 100.0) -> SceneGraph:
    """Star graph with the human at node 0 and one edge to every detected object.

    Edge weight is the pixel distance between bounding-box centers, or
    ``exp(-d / affinity_scale)`` with ``edge_affinity``. ``features`` maps
    detection list index -> node feature vector.
    """
    hub = [k for k, d in enumerate(detections) if d.kind == HUMAN]
    if not hub:
        raise MissingHumanError("no human detection; the star graph has no hub")
    h = hub[0]
    order = [h] + [k for k, d in enumerate(detections) if d.kind != HUMAN]
    feats = np.stack([np.asarray(features[k], dtype=float) for k in order])
    c0 = np.asarray(detections[h].bbox_center, dtype=float)
    d = np.array([np.hypot(*(np.asarray(detections[k].bbox_center) - c0)) for k in order[1:]])
    w = np.exp(-d / affinity_scale) if edge_affinity else d
    return SceneGraph([detections[k].kind for k in order], feats, w.reshape(-1), keypoints_present)


def normalize_adjacency(graph: SceneGraph) -> np.ndarray:
    """D'^{-1/2} (A + I) D'^{-1/2} with D' the degree matrix of A + I."""
    Ap = graph.adjacency() + np.eye(graph.n_nodes)
    dinv = 1.0 / np.sqrt(Ap.sum(axis=1))
    return Ap * np.outer(dinv, dinv)                 # outer product keeps the result exactly symmetric


def star_adjacency_batch(weights: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Normalized adjacency for a batch of padded star graphs.

    ``weights`` and ``mask`` are (G, K) for K object slots; node 0 is the
    human. Padded slots get all-zero rows and columns so they never mix into
    real nodes.
    """
    w = np.where(mask, weights, 0.0)
    G, K = w.shape
    deg0 = 1.0 + w.sum(axis=1)                        # (G,)
    degj = 1.0 + w                                    # (G, K)
    A = np.zeros((G, K + 1, K + 1), dtype=weights.dtype)
    A[:, 0, 0] = 1.0 / deg0
    off = w / np.sqrt(deg0[:, None] * degj)
    A[:, 0, 1:] = off
    A[:, 1:, 0] = off
    idx = np.arange(1, K + 1)
    A[:, idx, idx] = np.where(mask, 1.0 / degj, 0.0)
    return A
