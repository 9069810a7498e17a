"""Mini-batch training loop with SGD, momentum or Adam and early stopping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "momentum", "adam")


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-3
    batch_size: int = 64
    epochs: int = 20
    init_scale: float = 1.0
    seed: int = 0
    optimizer: str = "adam"
    momentum: float = 0.9
    patience: int = 4
    grad_clip: float = 5.0
    weight_decay: float = 0.0
    samples_per_epoch: int | None = None
    max_train_samples: int | None = None
    finetune_gcn: bool = False

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0 or self.init_scale <= 0 or self.patience < 1:
            raise ValueError("learning rate, batch size, epochs, init scale and patience must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class Optimizer:
    """In-place update of a dict of parameter arrays."""

    def __init__(self, params: dict, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()} if cfg.optimizer == "adam" else None

    def step(self, grads: dict) -> None:
        cfg = self.cfg
        self.t += 1
        if cfg.grad_clip:
            norm = np.sqrt(sum(float((grads[k].astype(np.float64) ** 2).sum()) for k in self.params if k in grads))
            scale = min(1.0, cfg.grad_clip / (norm + 1e-12))
        else:
            scale = 1.0
        for k, p in self.params.items():
            if k not in grads:
                continue
            g = grads[k] * scale
            if cfg.weight_decay:
                g = g + cfg.weight_decay * p
            if cfg.optimizer == "sgd":
                p -= (cfg.lr * g).astype(p.dtype)
            elif cfg.optimizer == "momentum":
                self.m[k] = cfg.momentum * self.m[k] + g
                p -= (cfg.lr * self.m[k]).astype(p.dtype)
            else:
                b1, b2 = 0.9, 0.999
                self.m[k] = b1 * self.m[k] + (1 - b1) * g
                self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
                mh = self.m[k] / (1 - b1 ** self.t)
                vh = self.v[k] / (1 - b2 ** self.t)
                p -= (cfg.lr * mh / (np.sqrt(vh) + 1e-8)).astype(p.dtype)


@dataclass
class TrainResult:
    best_params: dict
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1


def fit(params: dict, loss_fn, n_train: int, val_fn, cfg: TrainConfig) -> TrainResult:
    """Generic loop.

    ``params`` maps tensor names to arrays updated in place; ``loss_fn(idx)``
    returns (loss, grads) for training sample indices ``idx``; ``val_fn()``
    returns the validation loss. The returned ``best_params`` are copies from
    the epoch with the lowest validation loss (epoch 0 = before training).
    """
    if n_train < 1:
        raise ValueError("training set is empty")
    rng = np.random.default_rng([cfg.seed, 0x7EA1])
    opt = Optimizer(params, cfg)
    best = float(val_fn())
    _check(best, "initial validation")
    res = TrainResult({k: v.copy() for k, v in params.items()}, [], [best], 0)
    stale = 0
    per_epoch = cfg.samples_per_epoch or n_train
    for epoch in range(1, cfg.epochs + 1):
        order = np.concatenate([rng.permutation(n_train) for _ in range(-(-per_epoch // n_train))])[:per_epoch]
        losses = []
        for s in range(0, per_epoch, cfg.batch_size):
            loss, grads = loss_fn(order[s:s + cfg.batch_size])
            _check(loss, f"epoch {epoch} batch {s // cfg.batch_size}")
            opt.step(grads)
            losses.append(loss)
        vl = float(val_fn())
        _check(vl, f"epoch {epoch} validation")
        res.train_loss.append(float(np.mean(losses)))
        res.val_loss.append(vl)
        log.info("epoch %d train %.4f val %.4f", epoch, res.train_loss[-1], vl)
        if vl < best - 1e-6:
            best, stale = vl, 0
            res.best_epoch = epoch
            res.best_params = {k: v.copy() for k, v in params.items()}
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return res


def _check(loss: float, where: str) -> None:
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss ({loss}) at {where}; lower the learning rate or init scale")
