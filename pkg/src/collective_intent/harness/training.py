"""Training orchestration: frame and window sample assembly for each model kind.

The GNN-only model (GCN plus spatial head) is trained first on single frames.
Its encoder is then frozen and the GRUs are trained on precomputed human-node
embeddings; ``TrainConfig.finetune_gcn`` backpropagates into the encoder
instead (ego and collective alike).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..models.calibration import calibrate_temperature
from ..models.functional import cross_entropy
from ..models.gcn import GcnParams, gcn_embed_backward, gcn_embed_batch
from ..models.gru import GruParams, sequence_backward, sequence_forward
from ..models.temporal import IntentModel, collective_inputs, input_size
from ..models.train import TrainConfig, TrainResult, fit
from ..perception import FeatureEncoder
from .dataset import (PHASES, Dataset, balanced_anchors, embedding_table, frame_graphs, window_indices)

log = logging.getLogger(__name__)


@dataclass
class ModelShape:
    hidden1: int = 256
    embed: int = 128
    gru_hidden: int = 128


# ---------------------------------------------------------------- frames (GNN-only)

def frame_samples(episodes, seed: int, limit: int | None = None):
    """(episode, robot, tick) frames with the human detected, balanced by phase."""
    groups = {k: [] for k in range(len(PHASES))}
    for e, ep in enumerate(episodes):
        rr, tt = np.nonzero(ep.human_seen)
        for r, t in zip(rr, tt):
            groups[int(ep.phases[t])].append((e, int(r), int(t)))
    k = min(len(g) for g in groups.values())
    if limit is not None:
        k = min(k, limit // len(PHASES))
    rng = np.random.default_rng([seed, 0xF4A])
    out = []
    for ph in range(len(PHASES)):
        g = groups[ph]
        out.extend(g[i] for i in sorted(rng.choice(len(g), size=k, replace=False)))
    out.sort()
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def frame_arrays(episodes, samples, encoder, edge_affinity=False, dtype=np.float32):
    A_parts, X_parts, y = [], [], []
    for e in np.unique(samples[:, 0]):
        sel = samples[samples[:, 0] == e]
        A, X = frame_graphs(episodes[e], sel[:, 1], sel[:, 2], encoder, edge_affinity, dtype=dtype)
        A_parts.append(A)
        X_parts.append(X)
        y.append(episodes[e].labels[sel[:, 2]] - 1)
    return np.concatenate(A_parts), np.concatenate(X_parts), np.concatenate(y)


def train_gnn(ds: Dataset, cfg: TrainConfig, shape: ModelShape | None = None, edge_affinity=False,
              max_frames: int = 18000, dtype=np.float32):
    shape = shape or ModelShape()
    enc = FeatureEncoder(ds.perception)
    tr_eps, va_eps = ds.split("train"), ds.split("val")
    A, X, y = frame_arrays(tr_eps, frame_samples(tr_eps, cfg.seed, max_frames), enc, edge_affinity, dtype)
    Av, Xv, yv = frame_arrays(va_eps, frame_samples(va_eps, cfg.seed + 1, max_frames // 3), enc, edge_affinity, dtype)
    gcn = GcnParams.init(X.shape[-1], shape.hidden1, shape.embed, seed=cfg.seed, scale=cfg.init_scale, dtype=dtype)
    params = gcn.tensors()

    def loss_fn(idx):
        emb, logits, cache = gcn_embed_batch(A[idx], X[idx], gcn)
        loss, dl = cross_entropy(logits, y[idx])
        return loss, gcn_embed_backward(cache, None, dl, gcn)

    def val_fn():
        _, logits, _ = gcn_embed_batch(Av, Xv, gcn)
        return cross_entropy(logits, yv)[0]

    res = fit(params, loss_fn, len(y), val_fn, cfg)
    best = GcnParams(**{k.split(".", 1)[1]: v for k, v in res.best_params.items()})
    _, logits, _ = gcn_embed_batch(Av, Xv, best)
    cal = calibrate_temperature(logits, yv)
    model = IntentModel("gnn", best, None, cal.temperature, edge_affinity=edge_affinity,
                        meta={"best_epoch": res.best_epoch})
    return model, res


# ---------------------------------------------------------------- windows (ego / collective)

@dataclass
class SplitTables:
    """Stacked per-episode arrays for fast window gathering."""
    emb: np.ndarray       # (nE, R, T, E)
    kp: np.ndarray        # (nE, R, T, 34)
    seen: np.ndarray      # (nE, R, T)
    labels: np.ndarray    # (nE, T) 0-based

    @classmethod
    def build(cls, episodes, gcn: GcnParams, encoder, edge_affinity=False, dtype=np.float32):
        emb = np.stack([embedding_table(ep, gcn, encoder, edge_affinity, dtype)[0] for ep in episodes])
        kp = np.stack([ep.keypoints for ep in episodes]).astype(dtype)
        seen = np.stack([ep.human_seen for ep in episodes])
        labels = np.stack([ep.labels for ep in episodes]) - 1
        return cls(emb, kp, seen, labels)


def window_samples(episodes, obs: int, n: int, seed: int, per_phase: int | None = None,
                   robots=None) -> np.ndarray:
    """(episode, robot, tick) for balanced anchors where the robot saw the human in the window."""
    anchors = balanced_anchors(episodes, obs, n, seed, per_phase)
    out = []
    for e, t in anchors:
        ep = episodes[e]
        rs = range(ep.n_robots) if robots is None else robots
        for r in rs:
            if ep.human_seen[r, t - obs + 1:t + 1].any():
                out.append((e, r, t))
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def random_teams(samples: np.ndarray, n_robots: int, seed: int, sizes=(1, 2, 3, 4)) -> np.ndarray:
    """A random team (bool mask over robots) containing each sample's robot."""
    rng = np.random.default_rng([seed, 0x7EA3])
    teams = np.zeros((len(samples), n_robots), dtype=bool)
    for k, (_, r, _) in enumerate(samples):
        m = int(rng.choice(sizes))
        others = [j for j in range(n_robots) if j != r]
        teams[k, r] = True
        teams[k, rng.choice(others, size=m - 1, replace=False)] = True
    return teams


def gather_windows(tab: SplitTables, samples, obs: int, n: int, subsample=None, teams=None,
                   mean_includes_ego=False):
    """GRU inputs (B, L, I) and labels (B, n + 1) for window samples."""
    e, r, t = samples[:, 0], samples[:, 1], samples[:, 2]
    offs = window_indices(obs, subsample)
    ticks = (t - obs + 1)[:, None] + offs[None, :]                  # (B, L)
    emb = tab.emb[e[:, None], r[:, None], ticks]                     # (B, L, E)
    kp = tab.kp[e[:, None], r[:, None], ticks]
    labels = tab.labels[e[:, None], t[:, None] + np.arange(n + 1)[None, :]]
    if teams is None:
        return np.concatenate([emb, kp], axis=-1), labels
    R = tab.emb.shape[1]
    others = teams.copy()
    others[np.arange(len(r)), r] = False
    seen_all = tab.seen[e[:, None, None], np.arange(R)[None, :, None], ticks[:, None, :]]   # (B, R, L)
    w = (seen_all & others[:, :, None]).astype(tab.emb.dtype)
    emb_all = tab.emb[e[:, None, None], np.arange(R)[None, :, None], ticks[:, None, :]]    # (B, R, L, E)
    cnt = w.sum(axis=1)
    nm = np.einsum("brl,brle->ble", w, emb_all) / np.maximum(cnt, 1)[..., None]
    ego_seen = tab.seen[e[:, None], r[:, None], ticks]
    x = collective_inputs(emb, nm.astype(emb.dtype), kp, mean_includes_ego, ego_seen, cnt)
    return x, labels


def train_temporal(kind: str, ds: Dataset, gcn_model: IntentModel, cfg: TrainConfig, obs: int = 20,
                   n: int = 20, subsample: int | None = None, shape: ModelShape | None = None,
                   mean_includes_ego: bool = False, team_sizes=(1, 2, 3, 4), dtype=np.float32,
                   tables=None):
    """Train an ego or collective GRU on top of the (frozen) encoder of ``gcn_model``."""
    if kind not in ("ego", "collective"):
        raise ValueError(f"kind must be 'ego' or 'collective', got {kind!r}")
    if cfg.finetune_gcn:
        if mean_includes_ego:
            raise ValueError("end-to-end training supports the separate ego/neighbor input layout only")
        return _train_end_to_end(kind, ds, gcn_model, cfg, obs, n, subsample, shape, dtype, team_sizes)
    shape = shape or ModelShape()
    enc = FeatureEncoder(ds.perception)
    gcn = gcn_model.gcn.astype(dtype)
    tr_eps, va_eps = ds.split("train"), ds.split("val")
    if tables is None:
        tables = (SplitTables.build(tr_eps, gcn, enc, gcn_model.edge_affinity, dtype),
                  SplitTables.build(va_eps, gcn, enc, gcn_model.edge_affinity, dtype))
    tr_tab, va_tab = tables
    tr = window_samples(tr_eps, obs, n, cfg.seed)
    va = window_samples(va_eps, obs, n, cfg.seed + 1)
    if cfg.max_train_samples and len(tr) > cfg.max_train_samples:
        keep = np.random.default_rng([cfg.seed, 0x5A]).choice(len(tr), cfg.max_train_samples, replace=False)
        tr = tr[np.sort(keep)]
    collective = kind == "collective"
    R = tr_tab.emb.shape[1]
    tr_teams = random_teams(tr, R, cfg.seed, team_sizes) if collective else None
    va_teams = random_teams(va, R, cfg.seed + 1, team_sizes) if collective else None
    Xv, yv = gather_windows(va_tab, va, obs, n, subsample, va_teams, mean_includes_ego)
    gru = GruParams.init(input_size(kind, gcn.embed_dim, mean_includes_ego), shape.gru_hidden, n,
                         seed=cfg.seed, scale=cfg.init_scale, dtype=dtype)
    params = gru.tensors()

    def loss_fn(idx):
        X, y = gather_windows(tr_tab, tr[idx], obs, n, subsample,
                              None if tr_teams is None else tr_teams[idx], mean_includes_ego)
        logits, cache = sequence_forward(X, gru, n)
        loss, dl = cross_entropy(logits, y)
        return loss, sequence_backward(cache, dl, gru)[0]

    def val_fn():
        logits, _ = sequence_forward(Xv, gru, n)
        return cross_entropy(logits, yv)[0]

    res = fit(params, loss_fn, len(tr), val_fn, cfg)
    best = GruParams(**{k.split(".", 1)[1]: v for k, v in res.best_params.items()})
    logits, _ = sequence_forward(Xv, best, n)
    cal = calibrate_temperature(logits[:, 0], yv[:, 0])
    model = IntentModel(kind, gcn_model.gcn, best, cal.temperature, obs, n, subsample, mean_includes_ego,
                        gcn_model.edge_affinity, meta={"best_epoch": res.best_epoch})
    return model, res


@dataclass
class FrameBank:
    """Star graphs of every frame with a human detection, indexed by (episode, robot, tick)."""
    A: np.ndarray          # (Nf, S, S)
    X: np.ndarray          # (Nf, S, D)
    index: np.ndarray      # (nE, R, T) frame id or -1
    kp: np.ndarray         # (nE, R, T, 34)
    labels: np.ndarray     # (nE, T) 0-based

    @classmethod
    def build(cls, episodes, encoder, edge_affinity=False, dtype=np.float32):
        As, Xs = [], []
        nE, R, T = len(episodes), episodes[0].n_robots, episodes[0].n_ticks
        index = np.full((nE, R, T), -1, dtype=np.int64)
        nf = 0
        for e, ep in enumerate(episodes):
            rr, tt = np.nonzero(ep.human_seen)
            A, X = frame_graphs(ep, rr, tt, encoder, edge_affinity, dtype=dtype)
            As.append(A)
            Xs.append(X)
            index[e, rr, tt] = nf + np.arange(len(rr))
            nf += len(rr)
        kp = np.stack([ep.keypoints for ep in episodes]).astype(dtype)
        labels = np.stack([ep.labels for ep in episodes]) - 1
        return cls(np.concatenate(As), np.concatenate(Xs), index, kp, labels)


def bank_windows(bank: FrameBank, samples, obs, n, subsample=None, teams=None):
    """Frame ids for ego (B, L) and neighbor (B, R, L) slots plus keypoints and labels."""
    e, r, t = samples[:, 0], samples[:, 1], samples[:, 2]
    offs = window_indices(obs, subsample)
    ticks = (t - obs + 1)[:, None] + offs[None, :]
    ego = bank.index[e[:, None], r[:, None], ticks]
    kp = bank.kp[e[:, None], r[:, None], ticks]
    labels = bank.labels[e[:, None], t[:, None] + np.arange(n + 1)[None, :]]
    nb = None
    if teams is not None:
        R = bank.index.shape[1]
        nb = bank.index[e[:, None, None], np.arange(R)[None, :, None], ticks[:, None, :]]
        others = teams.copy()
        others[np.arange(len(r)), r] = False
        nb = np.where(others[:, :, None], nb, -1)
    return ego, nb, kp, labels


def bank_loss(gcn: GcnParams, gru: GruParams, bank: FrameBank, ego, nb, kp, labels, with_grads=True):
    """Cross-entropy of the full GCN -> GRU pipeline over bank windows, with gradients
    flowing into the encoder through both the ego and the neighbor embeddings."""
    B, L = ego.shape
    ids = ego[ego >= 0] if nb is None else np.concatenate([ego[ego >= 0], nb[nb >= 0]])
    uniq, inv = np.unique(ids, return_inverse=True)
    emb_u, _, gcache = gcn_embed_batch(bank.A[uniq], bank.X[uniq], gcn)
    E = emb_u.shape[1]
    dt = emb_u.dtype
    pos = np.searchsorted(uniq, np.maximum(ego, 0))
    m_ego = (ego >= 0).astype(dt)[..., None]
    emb = emb_u[pos] * m_ego
    if nb is not None:
        m_nb = (nb >= 0).astype(dt)                                  # (B, R, L)
        cnt = m_nb.sum(axis=1)                                       # (B, L)
        wgt = m_nb / np.maximum(cnt, 1)[:, None, :]
        pos_nb = np.searchsorted(uniq, np.maximum(nb, 0))
        nm = np.einsum("brl,brle->ble", wgt, emb_u[pos_nb])
        x = np.concatenate([emb, nm, kp], axis=-1)
    else:
        x = np.concatenate([emb, kp], axis=-1)
    n = labels.shape[1] - 1
    logits, cache = sequence_forward(x, gru, n)
    loss, dl = cross_entropy(logits, labels)
    if not with_grads:
        return loss, None, logits
    grads, dX = sequence_backward(cache, dl, gru)
    demb_u = np.zeros_like(emb_u)
    np.add.at(demb_u, pos[ego >= 0], dX[..., :E][ego >= 0])
    if nb is not None:
        dnb = wgt[..., None] * dX[:, None, :, E:2 * E]               # (B, R, L, E)
        sel = nb >= 0
        np.add.at(demb_u, pos_nb[sel], dnb[sel])
    grads.update(gcn_embed_backward(gcache, demb_u, None, gcn))
    grads["gcn.head_w"] = np.zeros_like(gcn.head_w)
    grads["gcn.head_b"] = np.zeros_like(gcn.head_b)
    return loss, grads, logits


def _train_end_to_end(kind, ds, gcn_model, cfg, obs, n, subsample, shape, dtype, team_sizes=(1, 2, 3, 4)):
    """Backpropagate through GRU and GCN together, starting from the spatial encoder."""
    shape = shape or ModelShape()
    enc = FeatureEncoder(ds.perception)
    gcn = gcn_model.gcn.astype(dtype).copy()
    tr_eps, va_eps = ds.split("train"), ds.split("val")
    tr_bank = FrameBank.build(tr_eps, enc, gcn_model.edge_affinity, dtype)
    va_bank = FrameBank.build(va_eps, enc, gcn_model.edge_affinity, dtype)
    tr = window_samples(tr_eps, obs, n, cfg.seed)
    va = window_samples(va_eps, obs, n, cfg.seed + 1)
    if cfg.max_train_samples and len(tr) > cfg.max_train_samples:
        keep = np.random.default_rng([cfg.seed, 0x5A]).choice(len(tr), cfg.max_train_samples, replace=False)
        tr = tr[np.sort(keep)]
    collective = kind == "collective"
    R = tr_eps[0].n_robots
    tr_teams = random_teams(tr, R, cfg.seed, team_sizes) if collective else None
    va_teams = random_teams(va, R, cfg.seed + 1, team_sizes) if collective else None
    gru = GruParams.init(input_size(kind, gcn.embed_dim), shape.gru_hidden, n, seed=cfg.seed,
                         scale=cfg.init_scale, dtype=dtype)
    params = {**{k: v for k, v in gcn.tensors().items() if "head" not in k}, **gru.tensors()}
    vwin = bank_windows(va_bank, va, obs, n, subsample, va_teams)

    def loss_fn(idx):
        w = bank_windows(tr_bank, tr[idx], obs, n, subsample, None if tr_teams is None else tr_teams[idx])
        loss, grads, _ = bank_loss(gcn, gru, tr_bank, *w)
        return loss, grads

    def val_logits():
        out = []
        for s in range(0, len(va), 512):
            sl = slice(s, s + 512)
            w = (vwin[0][sl], None if vwin[1] is None else vwin[1][sl], vwin[2][sl], vwin[3][sl])
            out.append(bank_loss(gcn, gru, va_bank, *w, with_grads=False)[2])
        return np.concatenate(out)

    def val_fn():
        return cross_entropy(val_logits(), vwin[3])[0]

    res = fit(params, loss_fn, len(tr), val_fn, cfg)
    for k, v in res.best_params.items():
        params[k][...] = v
    cal = calibrate_temperature(val_logits()[:, 0], vwin[3][:, 0])
    model = IntentModel(kind, gcn.copy(), gru.copy(), cal.temperature, obs, n, subsample, False,
                        gcn_model.edge_affinity, meta={"best_epoch": res.best_epoch, "finetuned": True})
    return model, res
