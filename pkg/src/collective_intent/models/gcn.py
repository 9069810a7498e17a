"""Two-layer graph convolution over star graphs, with a spatial-only classifier head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functional import DimensionError, glorot


@dataclass
class GcnParams:
    w1: np.ndarray        # (2F, H1)
    b1: np.ndarray        # (H1,)
    w2: np.ndarray        # (H1, E)
    b2: np.ndarray        # (E,)
    head_w: np.ndarray    # (E, C) spatial-only classifier on the human row
    head_b: np.ndarray    # (C,)

    @classmethod
    def init(cls, in_dim: int, hidden: int = 256, embed: int = 128, n_classes: int = 4,
             seed: int = 0, scale: float = 1.0, dtype=np.float64) -> "GcnParams":
        rng = np.random.default_rng([seed, 101])
        p = cls(
            w1=glorot(rng, in_dim, hidden, scale),
            b1=np.zeros(hidden),
            w2=glorot(rng, hidden, embed, scale),
            b2=np.zeros(embed),
            head_w=glorot(rng, embed, n_classes, scale),
            head_b=np.zeros(n_classes),
        )
        return p.astype(dtype)

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.w2.shape[1]

    def tensors(self) -> dict:
        return {"gcn.w1": self.w1, "gcn.b1": self.b1, "gcn.w2": self.w2, "gcn.b2": self.b2,
                "gcn.head_w": self.head_w, "gcn.head_b": self.head_b}

    def astype(self, dtype) -> "GcnParams":
        return GcnParams(**{k.split(".", 1)[1]: v.astype(dtype) for k, v in self.tensors().items()})

    def copy(self) -> "GcnParams":
        return self.astype(self.w1.dtype)


def gcn_forward(a_hat: np.ndarray, h0: np.ndarray, params: GcnParams):
    """One graph: returns (H2 node embeddings, spatial logits of the human row)."""
    a_hat = np.asarray(a_hat)
    h0 = np.asarray(h0)
    n = h0.shape[0]
    if a_hat.shape != (n, n):
        raise DimensionError(f"adjacency {a_hat.shape} does not match {n} nodes")
    if h0.shape[1] != params.in_dim:
        raise DimensionError(f"node features have {h0.shape[1]} columns, expected {params.in_dim}")
    H2, logits, _ = gcn_forward_batch(a_hat[None], h0[None], params)
    return H2[0], logits[0]


def human_embedding(H2: np.ndarray) -> np.ndarray:
    """The human node (row 0) of the final layer."""
    if H2.shape[0] < 1:
        raise DimensionError("embedding matrix has no rows")
    return H2[0]


def gcn_forward_batch(A: np.ndarray, X: np.ndarray, p: GcnParams):
    """Batched full forward. A (G, N, N), X (G, N, D) -> H2 (G, N, E), logits (G, C), cache."""
    G, N, D = X.shape
    AX = A @ X
    pre1 = (AX.reshape(G * N, D) @ p.w1).reshape(G, N, -1) + p.b1
    H1 = np.maximum(pre1, 0.0)
    P1 = (H1.reshape(G * N, -1) @ p.w2).reshape(G, N, -1)
    H2 = A @ P1 + p.b2
    logits = H2[:, 0] @ p.head_w + p.head_b
    return H2, logits, (A, AX, pre1, H1)


def gcn_embed_batch(A: np.ndarray, X: np.ndarray, p: GcnParams):
    """Human-row-only forward, the path used in training.

    Returns (embeddings (G, E), spatial logits (G, C), cache). Equal to row 0
    of ``gcn_forward_batch`` but skips the second-layer product for object rows.
    """
    G, N, D = X.shape
    AX = A @ X
    pre1 = (AX.reshape(G * N, D) @ p.w1).reshape(G, N, -1) + p.b1
    H1 = np.maximum(pre1, 0.0)
    s = np.einsum("gn,gnh->gh", A[:, 0], H1)
    emb = s @ p.w2 + p.b2
    logits = emb @ p.head_w + p.head_b
    return emb, logits, (A, AX, pre1, s, emb)


def gcn_embed_backward(cache, demb: np.ndarray | None, dlogits: np.ndarray | None, p: GcnParams) -> dict:
    """Gradients of a scalar loss given dL/d(embeddings) and/or dL/d(spatial logits)."""
    A, AX, pre1, s, emb = cache
    G, N, D = AX.shape
    grads = {}
    demb = np.zeros_like(emb) if demb is None else demb.copy()
    if dlogits is not None:
        grads["gcn.head_w"] = emb.T @ dlogits
        grads["gcn.head_b"] = dlogits.sum(axis=0)
        demb += dlogits @ p.head_w.T
    else:
        grads["gcn.head_w"] = np.zeros_like(p.head_w)
        grads["gcn.head_b"] = np.zeros_like(p.head_b)
    grads["gcn.w2"] = s.T @ demb
    grads["gcn.b2"] = demb.sum(axis=0)
    ds = demb @ p.w2.T
    dpre1 = A[:, 0, :, None] * ds[:, None, :] * (pre1 > 0)
    grads["gcn.b1"] = dpre1.sum(axis=(0, 1))
    grads["gcn.w1"] = AX.reshape(G * N, D).T @ dpre1.reshape(G * N, -1)
    return grads
