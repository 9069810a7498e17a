"""GRU cell, sequence encoder with zero-input forecast unrolling, per-horizon heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functional import DimensionError, glorot, sigmoid


@dataclass
class GruParams:
    """Gate weights stacked as [update | reset | candidate] along the last axis."""
    w: np.ndarray          # (I, 3H) input weights
    u: np.ndarray          # (H, 3H) recurrent weights
    b: np.ndarray          # (3H,)
    head_w: np.ndarray     # (n + 1, H, C) one classifier per horizon, index 0 = frame t
    head_b: np.ndarray     # (n + 1, C)

    @classmethod
    def init(cls, input_size: int, hidden: int = 128, n_forecast: int = 20, n_classes: int = 4,
             seed: int = 0, scale: float = 1.0, dtype=np.float64) -> "GruParams":
        rng = np.random.default_rng([seed, 202])
        p = cls(
            w=glorot(rng, input_size, hidden, scale, shape=(input_size, 3 * hidden)),
            u=np.concatenate([_orthogonal(rng, hidden) * scale for _ in range(3)], axis=1),
            b=np.zeros(3 * hidden),
            head_w=glorot(rng, hidden, n_classes, scale, shape=(n_forecast + 1, hidden, n_classes)),
            head_b=np.zeros((n_forecast + 1, n_classes)),
        )
        return p.astype(dtype)

    @property
    def input_size(self) -> int:
        return self.w.shape[0]

    @property
    def hidden(self) -> int:
        return self.u.shape[0]

    @property
    def n_forecast(self) -> int:
        return self.head_w.shape[0] - 1

    def tensors(self) -> dict:
        return {"gru.w": self.w, "gru.u": self.u, "gru.b": self.b,
                "gru.head_w": self.head_w, "gru.head_b": self.head_b}

    def astype(self, dtype) -> "GruParams":
        return GruParams(**{k.split(".", 1)[1]: v.astype(dtype) for k, v in self.tensors().items()})

    def copy(self) -> "GruParams":
        return self.astype(self.w.dtype)


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _cell(x, h, p: GruParams):
    H = p.hidden
    gx = p.b if x is None else x @ p.w + p.b
    gh = h @ p.u[:, :2 * H]
    z = sigmoid(gx[..., :H] + gh[..., :H])
    r = sigmoid(gx[..., H:2 * H] + gh[..., H:])
    rh = r * h
    hc = np.tanh(gx[..., 2 * H:] + rh @ p.u[:, 2 * H:])
    h_new = (1.0 - z) * h + z * hc
    return h_new, (x, h, z, r, rh, hc)


def gru_step(x: np.ndarray, h: np.ndarray, params: GruParams) -> np.ndarray:
    """h' = (1 - z) * h + z * tanh(W_h x + U_h (r * h) + b_h), gates z, r sigmoid."""
    x = np.asarray(x)
    h = np.asarray(h)
    if x.shape[-1] != params.input_size:
        raise DimensionError(f"input has size {x.shape[-1]}, expected {params.input_size}")
    if h.shape[-1] != params.hidden:
        raise DimensionError(f"hidden state has size {h.shape[-1]}, expected {params.hidden}")
    return _cell(x, h, params)[0]


def _cell_backward(dh_new, cache, p: GruParams, grads):
    x, h, z, r, rh, hc = cache
    H = p.hidden
    dz = dh_new * (hc - h)
    dhc = dh_new * z
    dh = dh_new * (1.0 - z)
    da_h = dhc * (1.0 - hc * hc)
    grads["gru.u"][:, 2 * H:] += rh.T @ da_h
    drh = da_h @ p.u[:, 2 * H:].T
    dr = drh * h
    dh += drh * r
    da_z = dz * z * (1.0 - z)
    da_r = dr * r * (1.0 - r)
    da_zr = np.concatenate([da_z, da_r], axis=-1)
    grads["gru.u"][:, :2 * H] += h.T @ da_zr
    dh += da_zr @ p.u[:, :2 * H].T
    da = np.concatenate([da_zr, da_h], axis=-1)
    grads["gru.b"] += da.sum(axis=0)
    dx = None
    if x is not None:
        grads["gru.w"] += x.T @ da
        dx = da @ p.w.T
    return dh, dx


def sequence_forward(X: np.ndarray, p: GruParams, n_forecast: int | None = None):
    """Encode X (B, T, I) then unroll ``n_forecast`` zero-input steps.

    Returns logits (B, n + 1, C) where index 0 classifies the last observed
    frame and index k the k-th forecast step, plus a cache for backward.
    """
    n = p.n_forecast if n_forecast is None else n_forecast
    if n > p.n_forecast:
        raise DimensionError(f"model has heads for {p.n_forecast} forecast steps, asked for {n}")
    if X.shape[-1] != p.input_size:
        raise DimensionError(f"input has size {X.shape[-1]}, expected {p.input_size}")
    B, T, _ = X.shape
    h = np.zeros((B, p.hidden), dtype=p.w.dtype)
    caches = []
    for t in range(T):
        h, c = _cell(X[:, t], h, p)
        caches.append(c)
    states = [h]
    for _ in range(n):
        h, c = _cell(None, h, p)
        caches.append(c)
        states.append(h)
    S = np.stack(states, axis=1)                                   # (B, n + 1, H)
    logits = np.matmul(S.transpose(1, 0, 2), p.head_w[:n + 1]).transpose(1, 0, 2) + p.head_b[:n + 1]
    return logits, (caches, S, T, n)


def sequence_backward(cache, dlogits: np.ndarray, p: GruParams):
    """Returns (grads dict, dX (B, T, I))."""
    caches, S, T, n = cache
    grads = {k: np.zeros_like(v) for k, v in p.tensors().items()}
    St = S.transpose(1, 0, 2)                                      # (n + 1, B, H)
    dlt = dlogits.transpose(1, 0, 2)
    grads["gru.head_w"][:n + 1] = np.matmul(St.transpose(0, 2, 1), dlt)
    grads["gru.head_b"][:n + 1] = dlogits.sum(axis=0)
    dS = np.matmul(dlt, p.head_w[:n + 1].transpose(0, 2, 1)).transpose(1, 0, 2)
    dh = dS[:, n].copy()
    for k in range(n, 0, -1):
        dh, _ = _cell_backward(dh, caches[T + k - 1], p, grads)
        dh += dS[:, k - 1]
    dX = np.zeros((S.shape[0], T, p.input_size), dtype=S.dtype)
    for t in range(T - 1, -1, -1):
        dh, dx = _cell_backward(dh, caches[t], p, grads)
        dX[:, t] = dx
    return grads, dX
