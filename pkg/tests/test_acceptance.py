"""Acceptance criteria 1-8. Each test prints one PASS/FAIL line in the terminal summary.

Criteria 5-7 share one cached set of 5-seed runs on the default benchmark
(k=8, r=100, N0=1000, seeds 0-4); that takes a minute or two on one CPU core.
"""
import itertools
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import verdict
from flexsample import ExperimentConfig, aggregate_trials, run_trials
from flexsample.baselines import batch_focal
from flexsample.curriculum import (bald_mutual_information, class_probs_from_accuracy,
                                   rank_and_query)
from flexsample.data import pareto_counts
from flexsample.harness import group_members, load_data
from flexsample.nn import NetworkConfig, NetworkParams, backward, batch_cross_entropy, forward, init_params
from flexsample.prototypes import compute_prototypes, select_subset
from flexsample.report import load_manifest, strip_timestamps
from flexsample.ssl import info_nce_loss


# ---------------------------------------------------------------- 1

def test_criterion_1_formula_exactness():
    t0 = time.perf_counter()
    checks = {}
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        acc = rng.random(int(rng.integers(1, 20)))
        acc[rng.random(len(acc)) < 0.2] = 1.0
        worst = max(worst, abs(class_probs_from_accuracy(acc).normalized.sum() - len(acc)))
    checks["probs sum to K"] = worst < 1e-9
    checks["I=0 identical"] = bald_mutual_information(np.tile([0.3, 0.7], (5, 1))) == 0.0
    checks["I=ln2"] = abs(bald_mutual_information(np.array([[1.0, 0], [0, 1.0]])) - math.log(2)) < 1e-12
    ok = True
    for _ in range(200):
        k = int(rng.integers(2, 8))
        mi = bald_mutual_information(rng.dirichlet(np.ones(k) * 0.3, size=int(rng.integers(1, 10))))
        ok &= 0.0 <= mi <= math.log(k) + 1e-12
    checks["0<=I<=lnK"] = ok
    ok = True
    for m in (1, 3, 10, 126):
        v = rng.standard_normal(6)
        ok &= abs(info_nce_loss(v, v, np.tile(v, (m, 1)), 0.5)[0] - math.log(1 + m)) < 1e-9
    checks["InfoNCE ln(1+|V-|)"] = ok
    ok = True
    for k, r, n0 in ((8, 100, 1000), (10, 50, 500), (5, 10, 300), (3, 7, 100)):
        c = pareto_counts(k, r, n0)
        ok &= c[0] == n0 and c[-1] == math.floor(n0 / r + 0.5)
    checks["Pareto endpoints"] = ok
    dt = time.perf_counter() - t0
    failed = [name for name, good in checks.items() if not good]
    verdict(1, not failed and dt < 1.0,
            f"{len(checks) - len(failed)}/{len(checks)} formula checks, {dt:.3f}s (< 1s)"
            + (f"; failed: {failed}" if failed else ""))


# ---------------------------------------------------------------- 2

def _loss(kind, out, y, gamma):
    if kind == "ce":
        return batch_cross_entropy(out, y)
    if kind == "focal":
        return batch_focal(out, y, gamma)
    loss, da, dp, dn = info_nce_loss(out[0], out[1], out[2:], 0.5)
    return loss, np.vstack([da, dp, dn])


def test_criterion_2_gradient_fidelity():
    t0 = time.perf_counter()
    worst, n_cases = 0.0, 0
    for case, kind in enumerate(["ce", "focal", "infonce"] * 4):
        rng = np.random.default_rng(1000 + case)
        depth = int(rng.integers(1, 4))
        dims = tuple(int(v) for v in rng.integers(2, 6, size=depth + 1))
        net = NetworkConfig(dims, dropout_rate=float(rng.choice([0.0, 0.25])))
        p = init_params(net, rng)
        p = NetworkParams(p.weights, tuple(rng.normal(0, 0.5, b.shape) for b in p.biases))
        x = rng.standard_normal((5, dims[0]))
        y = rng.integers(0, dims[-1], 5)
        gamma = float(rng.uniform(0.5, 3))

        def value(params, want_grad=False):
            out, cache = forward(net, params, x, mode="train", mask_seed=case)
            loss, g = _loss(kind, out, y, gamma)
            return (loss, backward(net, params, cache, g)) if want_grad else loss

        _, grads = value(p, True)
        arrays, g_arrays = p.arrays(), grads.arrays()
        for i, a in enumerate(arrays):
            for idx in np.ndindex(a.shape):
                hi = [b.copy() for b in arrays]
                lo = [b.copy() for b in arrays]
                hi[i][idx] += 1e-5
                lo[i][idx] -= 1e-5
                fd = (value(NetworkParams.from_arrays(hi)) - value(NetworkParams.from_arrays(lo))) / 2e-5
                an = g_arrays[i][idx]
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
        n_cases += 1
    dt = time.perf_counter() - t0
    verdict(2, worst < 1e-4 and dt < 30 and n_cases >= 10,
            f"{n_cases} configs (CE/focal/InfoNCE), max rel err {worst:.2e} (< 1e-4), {dt:.1f}s (< 30s)")


# ---------------------------------------------------------------- 3

def test_criterion_3_oracle_equivalence():
    rng = np.random.default_rng(3)
    sel_ok = True
    for trial in range(10):
        k = 3
        sizes = rng.integers(5, 201, size=k)
        labels = np.repeat(np.arange(k), sizes)
        ids = rng.permutation(5000)[: len(labels)]
        emb = rng.standard_normal((len(labels), 4))
        protos = compute_prototypes(emb, labels, k)
        targets = [int(rng.integers(1, n + 1)) for n in sizes]
        for mode in ("anchor", "edge"):
            sub = select_subset(emb, labels, ids, protos, targets, mode)
            brute = set()
            for c in range(k):
                members = np.flatnonzero(labels == c)
                d = [(float(np.sqrt(((emb[i] - protos[c].mean_feature) ** 2).sum())), int(ids[i]))
                     for i in members]
                d.sort(key=lambda t: ((-t[0] if mode == "edge" else t[0]), t[1]))
                brute.update(i for _, i in d[: targets[c]])
            sel_ok &= set(sub.selected.tolist()) == brute

    query_ok = True
    for trial in range(10):
        ids = rng.permutation(100)[:20]
        labels = np.repeat([0, 1], 10)
        unc = rng.random(20)
        probs = class_probs_from_accuracy(rng.random(2))
        res = rank_and_query(ids, labels, unc, probs, 0.4)
        best, best_val = None, -1.0
        groups = [[i for i in range(20) if labels[i] == c] for c in (0, 1)]
        for a in itertools.combinations(groups[0], res.quotas[0]):
            for b in itertools.combinations(groups[1], res.quotas[1]):
                val = sum(unc[list(a + b)])
                if val > best_val:
                    best, best_val = a + b, val
        expected_quotas = [min(10, math.floor(p * 0.4 * 10 + 0.5)) for p in probs.normalized]
        query_ok &= res.quotas == expected_quotas
        query_ok &= res.selected.tolist() == sorted(int(ids[i]) for i in best)

    emb = rng.standard_normal((180, 7))
    labels = rng.integers(0, 5, 180)
    mean_err = 0.0
    for p in compute_prototypes(emb, labels, 5):
        rows = [emb[i] for i in range(180) if labels[i] == p.class_id]
        brute = np.array([math.fsum(r[j] for r in rows) / len(rows) for j in range(7)])
        mean_err = max(mean_err, float(np.max(np.abs(p.mean_feature - brute))))
    verdict(3, sel_ok and query_ok and mean_err < 1e-12,
            f"selection={'ok' if sel_ok else 'MISMATCH'} query={'ok' if query_ok else 'MISMATCH'} "
            f"prototype max err {mean_err:.1e} (< 1e-12)")


# ---------------------------------------------------------------- 4

def test_criterion_4_determinism(tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        subprocess.run([sys.executable, "-m", "flexsample", "run", "--method", "flexible",
                        "--seed", "7", "--out", str(out)], check=True, capture_output=True)
        outs.append(out)
    csv_same = (outs[0] / "metrics.csv").read_bytes() == (outs[1] / "metrics.csv").read_bytes()
    man = [strip_timestamps(load_manifest(o / "manifest.yaml")) for o in outs]
    epochs_same = (outs[0] / "epochs.csv").read_bytes() == (outs[1] / "epochs.csv").read_bytes()
    verdict(4, csv_same and man[0] == man[1] and epochs_same,
            f"metrics.csv identical={csv_same}, manifest identical (no timestamps)={man[0] == man[1]}")


# ---------------------------------------------------------------- 5-8

VARIANTS = {
    "ce": dict(method="ce"),
    "rs": dict(method="rs"),
    "flexible": dict(method="flexible"),
    "sel-random": dict(method="flexible", selection="random"),
    "sel-edge": dict(method="flexible", selection="edge"),
    "query-random": dict(method="flexible", querying="random"),
}


@pytest.fixture(scope="session")
def benchmark():
    """5 trials (seeds 0-4) of every variant on the default benchmark."""
    out = {}
    for name, kw in VARIANTS.items():
        t0 = time.perf_counter()
        recs = run_trials(ExperimentConfig(seed=0, trials=5, **kw))
        out[name] = (recs, aggregate_trials(recs), time.perf_counter() - t0)
    return out


@pytest.mark.slow
def test_criterion_5_resampling_tradeoff(benchmark):
    ce, rs = benchmark["ce"][1], benchmark["rs"][1]
    members = group_members(benchmark["ce"][0][0].train_counts)
    compact_tail = [6, 7]  # the two compact classes
    head = 0  # the diverse class
    tail_gain = np.mean([rs.per_class_mean[c] - ce.per_class_mean[c] for c in compact_tail])
    head_drop = ce.per_class_mean[head] - rs.per_class_mean[head]
    secs = benchmark["ce"][2] + benchmark["rs"][2]
    verdict(5, tail_gain > 0 and head_drop > 0 and secs < 600,
            f"RS-CE compact-tail gain {100 * tail_gain:+.1f} pts, diverse-head drop "
            f"{100 * head_drop:+.1f} pts (tail group {members['tail']}), {secs:.0f}s")


@pytest.mark.slow
def test_criterion_6_main_direction(benchmark):
    f, rs, ce = (benchmark[m][1].mean["top1"] for m in ("flexible", "rs", "ce"))
    secs = sum(benchmark[m][2] for m in ("flexible", "rs", "ce"))
    verdict(6, f >= rs and f >= ce and (f - ce) > 0.01 and secs < 900,
            f"top-1 flexible {100 * f:.2f}, rs {100 * rs:.2f}, ce {100 * ce:.2f} "
            f"(need flexible >= rs, >= ce, and > ce + 1 pt), {secs:.0f}s")


@pytest.mark.slow
def test_criterion_7_ablation_direction(benchmark):
    a, r, e, q = (benchmark[m][1].mean["top1"]
                  for m in ("flexible", "sel-random", "sel-edge", "query-random"))
    ok = a >= r and r >= e - 0.005 and a >= q
    verdict(7, ok, f"anchor {100 * a:.2f} >= random {100 * r:.2f} >= edge {100 * e:.2f} "
                   f"(0.5 pt tie allowed); MI {100 * a:.2f} >= random query {100 * q:.2f}")


def _reference_triggers(top1, pools, qp=10, sp=20, cap=100, warmup=30):
    best, plateau, stall, queries, stop = -np.inf, 0, 0, [], None
    for e, (v, pool) in enumerate(zip(top1, pools), start=1):
        if v > best + 1e-6:
            best, plateau, stall = v, 0, 0
        else:
            plateau, stall = plateau + 1, stall + 1
        if e >= cap:
            return queries, e
        if pool:
            if plateau >= qp and e >= warmup:
                plateau = 0
                queries.append(e)
        elif stall >= sp:
            return queries, e
    return queries, stop


@pytest.mark.slow
def test_criterion_8_state_machine(benchmark):
    problems = []
    for name in ("flexible", "sel-random", "sel-edge", "query-random"):
        for rec in benchmark[name][0]:
            cfg = ExperimentConfig.from_dict(rec.config)
            _, split = load_data(cfg, rec.seed)
            held_out = set(split.val.tolist()) | set(split.test.tolist())
            train = set(rec.subset["selected"])
            pool = set(split.train.tolist()) - train
            pools = [h["pool"] for h in rec.history]
            if any(b > a for a, b in zip(pools, pools[1:])):
                problems.append(f"{name}/{rec.seed}: pool grew")
            for ev in rec.events:
                if not set(ev["selected"]) <= pool:
                    problems.append(f"{name}/{rec.seed}: query outside pool")
                pool -= set(ev["selected"])
                train |= set(ev["selected"])
            if train & held_out:
                problems.append(f"{name}/{rec.seed}: trained on val/test ids")
            # the pool seen by the trigger at epoch e is the pool before that epoch's query
            top1 = [h["top1"] for h in rec.history]
            queries, stop = _reference_triggers(top1, pools, cfg.query_patience,
                                                cfg.stop_patience, cfg.max_epochs,
                                                cfg.warmup_epochs)
            if queries != [ev["epoch"] for ev in rec.events]:
                problems.append(f"{name}/{rec.seed}: query epochs differ from plateau rule")
            if stop != rec.epochs_run or rec.epochs_run > 100:
                problems.append(f"{name}/{rec.seed}: halted at {rec.epochs_run}, rule says {stop}")
    n = sum(len(benchmark[m][0]) for m in ("flexible", "sel-random", "sel-edge", "query-random"))
    verdict(8, not problems, f"{n} curriculum runs checked" + (f"; {problems[:3]}" if problems else ""))
