"""End-to-end acceptance criteria C1-C11.

Each test prints one ``C<k> PASS|FAIL`` line with the measured numbers and
the same lines are repeated in the terminal summary. The trend criteria
(C5-C9) train real models on five seeds, so this module takes about an hour
on one core.
"""

import dataclasses
import statistics
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from collective_intent.comms import NetworkModel
from collective_intent.consensus import VoteInput, decide
from collective_intent.harness.dataset import embedding_table, window_indices
from collective_intent.harness.evaluate import eval_samples, predict_team, transported_neighbor_means
from collective_intent.harness.sweep import ExperimentSpec, checkpoint_key, eval_seed, run_experiment, run_sweep
from collective_intent.models.calibration import calibrate_temperature
from collective_intent.models.functional import softmax
from collective_intent.models.gcn import GcnParams, gcn_forward
from collective_intent.models.gru import GruParams, sequence_forward
from collective_intent.models.temporal import collective_inputs, input_size, make_record, pipeline_loss
from collective_intent.perception import FeatureEncoder

from oracles import gcn_dense, numeric_grad, rel_error, star_adjacency_dense, vote_oracle

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2, 3, 4)
RESULTS = {}


def verdict(cid: int, ok: bool, detail: str) -> bool:
    line = f"C{cid:<2} {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[cid] = line
    sys.__stdout__.write("\n" + line + "\n")
    sys.__stdout__.flush()
    return ok


def pct(x):
    return f"{100 * x:.1f}%"


# ---------------------------------------------------------------- shared experiment runs

@pytest.fixture(scope="session")
def scenario3():
    """Scenario 3, 2 s -> 2 s, 3 robots, five seeds: data, training and evaluation."""
    spec = ExperimentSpec(scenario=3, robot_counts=(3,), horizons=((20, 20),), seeds=SEEDS)
    t0 = time.perf_counter()
    rows, ckpt, data = run_experiment(spec)
    elapsed = time.perf_counter() - t0
    return {"spec": spec, "rows": rows, "ckpt": ckpt, "data": data, "elapsed": elapsed}


def pick(rows, model, seed, robots=3):
    (r,) = [r for r in rows if r.model == model and r.seed == seed and r.robots == robots]
    return r


# ---------------------------------------------------------------- C1-C4: oracles and invariants

def test_c1_gcn_matches_dense_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        n = int(rng.integers(1, 9))
        p = GcnParams.init(16, 12, 8, seed=int(rng.integers(1 << 30)))
        p.b1[:] = 0.1 * rng.standard_normal(12)
        p.b2[:] = 0.1 * rng.standard_normal(8)
        A = star_adjacency_dense(rng.uniform(0, 400, n - 1))
        X = rng.standard_normal((n, 16))
        H2, lg = gcn_forward(A, X, p)
        H2o, lgo = gcn_dense(A, X, p.w1, p.b1, p.w2, p.b2, p.head_w, p.head_b)
        worst = max(worst, np.abs(H2 - H2o).max(), np.abs(lg - lgo).max())
    dt = time.perf_counter() - t0
    assert verdict(1, worst <= 1e-10 and dt < 5.0,
                   f"GCN vs dense oracle on 100 star graphs: max abs diff {worst:.2e} (<= 1e-10), {dt:.2f} s (< 5 s)")


def test_c2_pipeline_gradients():
    rng = np.random.default_rng(99)
    worst = 0.0
    t0 = time.perf_counter()
    for b in range(10):
        collective = b % 2 == 1
        N, D, E = int(rng.integers(2, 5)), 6, 4
        gcn = GcnParams.init(D, 5, E, seed=b)
        gcn.b1[:] = 0.1 * rng.standard_normal(5)
        gcn.b2[:] = 0.1 * rng.standard_normal(E)
        gru = GruParams.init(input_size("collective" if collective else "ego", E), 4, 2, seed=b)
        gru.b[:] = 0.1 * rng.standard_normal(12)
        B, T = 2, 3
        A = np.stack([[star_adjacency_dense(rng.uniform(0, 2, N - 1)) for _ in range(T)] for _ in range(B)])
        X = rng.standard_normal((B, T, N, D))
        seen = rng.random((B, T)) > 0.2
        kp = rng.uniform(0, 1, (B, T, 34))
        labels = rng.integers(0, 4, (B, 3))
        frame_labels = rng.integers(0, 4, (B, T))
        nm = rng.standard_normal((B, T, E)) if collective else None

        def f():
            return pipeline_loss(gcn, gru, A, X, seen, kp, labels, nm, frame_labels, 0.5)[0]

        _, grads = pipeline_loss(gcn, gru, A, X, seen, kp, labels, nm, frame_labels, 0.5)
        for k, t in {**gcn.tensors(), **gru.tensors()}.items():
            worst = max(worst, rel_error(grads[k], numeric_grad(f, t, 1e-5)))
    dt = time.perf_counter() - t0
    assert verdict(2, worst < 1e-4 and dt < 60.0,
                   f"GCN+GRU+head gradients vs central differences on 10 batches: worst rel err {worst:.2e} "
                   f"(< 1e-4), {dt:.1f} s (< 60 s)")


def test_c3_consensus_oracle_and_properties():
    rng = np.random.default_rng(7)
    bad = {"oracle": 0, "sum": 0, "unanimity": 0, "scale": 0, "monotone": 0}
    t0 = time.perf_counter()
    for _ in range(1000):
        M = int(rng.integers(1, 7))
        actions = rng.integers(1, 5, M).tolist()
        conf = rng.uniform(0.01, 1.0, M).tolist()
        counts = (rng.integers(0, 20, M) * (rng.random() > 0.05)).tolist()   # sometimes all zero
        alpha, beta = rng.uniform(0, 1, 2)
        if alpha + beta < 1e-3:
            alpha = 0.5
        vi = VoteInput(actions, conf, counts, float(alpha), float(beta))
        res = decide(vi)
        want, _ = vote_oracle(actions, conf, counts, alpha, beta)
        bad["oracle"] += res.action != want
        bad["sum"] += int(abs(sum(res.votes) - (alpha + beta)) > 1e-9)
        a = int(rng.integers(1, 5))
        bad["unanimity"] += decide(VoteInput([a] * M, conf, counts, alpha, beta)).action != a
        scaled = VoteInput(actions, [c * 0.5 for c in conf], [n * 3 for n in counts], 2 * alpha, 2 * beta)
        bad["scale"] += decide(scaled).action != res.action
        i = int(rng.choice([k for k in range(M) if actions[k] == res.action]))
        up_c, up_n = list(conf), list(counts)
        up_c[i] = conf[i] + (1.0 - conf[i]) / 2
        up_n[i] = counts[i] + 1
        bad["monotone"] += decide(VoteInput(actions, up_c, up_n, alpha, beta)).action != res.action
    dt = time.perf_counter() - t0
    ok = not any(bad.values()) and dt < 5.0
    assert verdict(3, ok, f"1000 random votes (M <= 6): violations {bad}, {dt:.2f} s (< 5 s)")


def test_c4_calibration_sanity():
    rng = np.random.default_rng(11)
    logits = rng.standard_normal((20000, 4)) * 2.0
    p = softmax(logits)
    labels = (rng.random(20000)[:, None] > np.cumsum(p, axis=1)).sum(axis=1)
    T = calibrate_temperature(logits, labels).temperature
    before = logits.argmax(axis=1)
    after = softmax(logits / T).argmax(axis=1)
    same = bool(np.array_equal(before, after))
    acc_b, acc_a = float(np.mean(before == labels)), float(np.mean(after == labels))
    assert verdict(4, abs(T - 1.0) <= 0.1 and same and acc_b == acc_a,
                   f"self-consistent logits: T = {T:.3f} (|T-1| <= 0.1); accuracy {pct(acc_b)} before, "
                   f"{pct(acc_a)} after (identical: {acc_b == acc_a})")


# ---------------------------------------------------------------- C5-C9: trends on the scenario-3 benchmark

def test_c5_model_ordering(scenario3):
    rows = scenario3["rows"]
    good, parts = 0, []
    for s in SEEDS:
        g, e, c = (pick(rows, m, s).acc_t for m in ("gnn", "ego", "collective"))
        ok = e - g >= 0.02 and c - e >= 0.02
        good += ok
        parts.append(f"seed {s}: {pct(g)} < {pct(e)} < {pct(c)} {'ok' if ok else 'x'}")
    mins = scenario3["elapsed"] / 60
    assert verdict(5, good >= 4 and mins < 30,
                   f"GNN < ego < collective with >= 2 pp gaps on {good}/5 seeds (need 4), {mins:.1f} min "
                   f"(< 30); " + "; ".join(parts))


@pytest.fixture(scope="session")
def robot_counts(scenario3):
    spec = dataclasses.replace(scenario3["spec"], robot_counts=(1, 2, 3, 4), models=("collective",))
    return run_sweep(spec, scenario3["ckpt"], scenario3["data"])


def test_c6_robot_count_trend(robot_counts):
    good, parts, diminishing = 0, [], 0
    for s in SEEDS:
        acc = [pick(robot_counts, "collective", s, m).acc_t for m in (1, 2, 3, 4)]
        ok = acc[0] <= acc[1] <= acc[2]
        good += ok
        diminishing += (acc[3] - acc[2]) <= (acc[2] - acc[1])
        parts.append(f"seed {s}: " + " / ".join(pct(a) for a in acc) + (" ok" if ok else " x"))
    assert verdict(6, good >= 4,
                   f"collective non-decreasing 1->2->3 robots on {good}/5 seeds (need 4); 3->4 gain <= 2->3 gain "
                   f"on {diminishing}/5 (allowed, not required); " + "; ".join(parts))


def test_c7_consensus_robustness(scenario3):
    rows = scenario3["rows"]
    ok_all, parts = True, []
    for s in SEEDS:
        per = list(pick(rows, "collective", s).per_robot.values())
        cons = pick(rows, "consensus", s).consensus_acc
        ok = cons >= min(per) and cons >= statistics.mean(per) - 0.01
        ok_all &= ok
        parts.append(f"seed {s}: consensus {pct(cons)} vs robots " + "/".join(pct(p) for p in per)
                     + (" ok" if ok else " x"))
    assert verdict(7, ok_all, "consensus >= min robot and >= mean robot - 1 pp on every seed; " + "; ".join(parts))


@pytest.fixture(scope="session")
def scenario1_cvm():
    spec = ExperimentSpec(scenario=1, robot_counts=(3,), models=("cvm",), seeds=SEEDS, n_episodes=100)
    rows, _, _ = run_experiment(spec)
    return rows


def test_c8_cvm_degradation(scenario3, scenario1_cvm):
    cvm1 = statistics.mean(pick(scenario1_cvm, "cvm", s).acc_t for s in SEEDS)
    rows = scenario3["rows"]
    cvm3 = statistics.mean(pick(rows, "cvm", s).acc_t for s in SEEDS)
    col3 = statistics.mean(pick(rows, "collective", s).acc_t for s in SEEDS)
    a, b = cvm1 >= 0.85, col3 - cvm3 >= 0.10
    assert verdict(8, a and b,
                   f"CVM scenario 1 {pct(cvm1)} (>= 85%: {a}); scenario 3 CVM {pct(cvm3)} vs collective "
                   f"{pct(col3)}, gap {100 * (col3 - cvm3):+.1f} pp (need >= +10: {b})")


@pytest.fixture(scope="session")
def temporal_resolution(scenario3):
    spec = ExperimentSpec(scenario=3, robot_counts=(3,), horizons=((10, 10),), subsamples=(10, 5, 3),
                          models=("collective",), seeds=SEEDS)
    rows, _, _ = run_experiment(spec, datasets=scenario3["data"], checkpoints=scenario3["ckpt"])
    return rows


def test_c9_temporal_resolution(temporal_resolution):
    mean = {}
    for f in (10, 5, 3):
        mean[f] = statistics.mean(r.acc_t for r in temporal_resolution if r.subsample == f)
    strict = mean[10] >= mean[5] >= mean[3]
    banded = mean[10] >= mean[5] - 0.01 and mean[5] >= mean[3] - 0.01
    assert verdict(9, banded,
                   f"collective 1 s -> 1 s, mean over 5 seeds: 10 frames {pct(mean[10])}, 5 frames {pct(mean[5])}, "
                   f"3 frames {pct(mean[3])} (ordered within 1 pp band; strictly ordered: {strict})")


# ---------------------------------------------------------------- C10: determinism

C10_SPEC = {"schema_version": 1, "scenario": 3, "robot_counts": [2, 3], "horizons": [[20, 20]], "seeds": [0],
            "n_episodes": 50, "gnn_train": {"epochs": 3}, "gru_train": {"epochs": 2, "samples_per_epoch": 2000}}


def test_c10_deterministic_sweep(tmp_path):
    import json
    cfg = tmp_path / "spec.json"
    cfg.write_text(json.dumps(C10_SPEC))
    t0 = time.perf_counter()
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        proc = subprocess.run([sys.executable, "-m", "collective_intent.cli", "sweep", "--config", str(cfg),
                               "--out", str(out), "--deterministic"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs.append((out / "results.csv").read_bytes())
    mins = (time.perf_counter() - t0) / 60
    same = outs[0] == outs[1]
    assert verdict(10, same and mins < 10,
                   f"two `sweep --deterministic` runs: CSV byte-identical {same} ({len(outs[0])} bytes), "
                   f"{mins:.1f} min (< 10)")


# ---------------------------------------------------------------- C11: comms conservation

def test_c11_comms_conservation(scenario3):
    ds = scenario3["data"][0]
    model = scenario3["ckpt"][checkpoint_key("collective", 20, 20, None, 0)].astype(np.float64)
    enc = FeatureEncoder(ds.perception)
    test = ds.split("test")
    team = [0, 1, 2]
    mismatch, checked = 0, 0
    for ep in test[:5]:
        emb, _ = embedding_table(ep, model.gcn, enc, model.edge_affinity, np.float64)
        seen = ep.human_seen
        nm, _ = transported_neighbor_means(emb, seen, team, NetworkModel(0.0, 0, 1))
        for i in team:
            for t in range(ep.n_ticks):
                others = [j for j in team if j != i and seen[j, t]]
                want = np.zeros(emb.shape[-1])
                if others:
                    acc = np.zeros(emb.shape[-1])
                    for j in others:
                        acc = acc + emb[j, t]
                    want = acc / len(others)
                mismatch += not np.array_equal(nm[i, t], want)
                checked += 1
    # total loss: no neighbor input at all, yet every prediction is a valid distribution
    ep = test[0]
    emb, _ = embedding_table(ep, model.gcn, enc, model.edge_affinity, np.float64)
    nm1, cnt1 = transported_neighbor_means(emb, ep.human_seen, team, NetworkModel(1.0, 0, 1))
    zero_input = not nm1.any() and not cnt1.any()
    _, samples = eval_samples(test, team, 20, 20, eval_seed(0))
    preds = predict_team(model, test, samples, team, enc, NetworkModel(1.0, 0, 1))
    offs = window_indices(20)
    r, t = samples[:200, 1], samples[:200, 2]
    eps_ = samples[:200, 0]
    valid = True
    for e in np.unique(eps_):
        k = eps_ == e
        emb_e, _ = embedding_table(test[e], model.gcn, enc, model.edge_affinity, np.float64)
        ticks = (t[k] - 19)[:, None] + offs[None, :]
        X = collective_inputs(emb_e[r[k][:, None], ticks], np.zeros_like(emb_e[r[k][:, None], ticks]),
                              test[e].keypoints[r[k][:, None], ticks].astype(np.float64))
        lg, _ = sequence_forward(X, model.gru, 20)
        for row in lg:
            rec = make_record(row, model.temperature)
            valid &= bool(np.isfinite(rec.probs).all() and abs(rec.probs.sum() - 1) <= 1e-6
                          and np.allclose(rec.forecast.sum(axis=1), 1, atol=1e-6) and 0 < rec.confidence <= 1)
    valid &= bool(np.all((preds.confidence > 0) & (preds.confidence <= 1)))
    ok = mismatch == 0 and zero_input and valid
    assert verdict(11, ok,
                   f"p_drop=0: {checked - mismatch}/{checked} neighbor means bit-equal to the oracle; p_drop=1: "
                   f"zero neighbor input {zero_input}, {len(preds.samples)} predictions valid distributions {valid}")
