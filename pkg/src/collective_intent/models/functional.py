import numpy as np


class DimensionError(ValueError):
    pass


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cross_entropy(logits, labels, weights=None):
    """Mean cross-entropy and its gradient w.r.t. logits.

    ``labels`` are 0-based class indices with the leading shape of ``logits``.
    ``weights`` (same shape as labels) rescales each term; the mean divides by
    their sum.
    """
    lp = log_softmax(logits)
    picked = np.take_along_axis(lp, labels[..., None], axis=-1)[..., 0]
    if weights is None:
        weights = np.ones(labels.shape, dtype=logits.dtype)
    total = weights.sum()
    loss = -(picked * weights).sum() / total
    grad = np.exp(lp)
    np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], axis=-1) - 1.0, axis=-1)
    grad *= (weights / total)[..., None]
    return float(loss), grad


def glorot(rng, fan_in, fan_out, scale=1.0, shape=None):
    std = scale * np.sqrt(2.0 / (fan_in + fan_out))
    return rng.standard_normal(shape or (fan_in, fan_out)) * std
