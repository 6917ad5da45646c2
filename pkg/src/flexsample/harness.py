"""Experiment orchestration: training loops, flexible sampling pipeline, metrics."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import baselines, curriculum, prototypes, ssl
from .config import ExperimentConfig
from .data import Dataset, SplitSet, benchmark_config, generate_dataset, ingest_embeddings, split_dataset
from .errors import InputError, StageError, UsageError
from .nn import (AdamState, NetworkConfig, NetworkParams, adam_step, backward,
                 batch_cross_entropy, forward, init_params)

METRIC_KEYS = ("top1", "head", "medium", "tail", "all")


@dataclass
class Evaluation:
    top1: float
    per_class: list  # float, or None for classes absent from the split
    n: int


@dataclass
class RunRecord:
    config: dict
    seed: int
    status: str = "ok"
    error: str | None = None
    stage: str | None = None
    history: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    subset: dict | None = None
    train_counts: list[int] = field(default_factory=list)
    per_class: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    epochs_run: int = 0
    best_epoch: int = 0
    wall_clock_s: float = 0.0

    @property
    def queries(self) -> int:
        return len(self.events)


@dataclass
class MetricsReport:
    method: str
    ratio: float
    seeds: list[int]
    per_trial: list[dict]  # one metrics dict per record
    mean: dict
    std: dict
    per_class_mean: list
    per_class_std: list


def evaluate(net: NetworkConfig, params: NetworkParams, features, labels, k: int | None = None) -> Evaluation:
    """Top-1 and per-class accuracy in eval mode."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise InputError("cannot evaluate on an empty split")
    logits, _ = forward(net, params, features)
    return accuracy_from_predictions(logits.argmax(axis=1), labels, k or net.layer_dims[-1])


def accuracy_from_predictions(pred, labels, k: int) -> Evaluation:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    correct = pred == labels
    per_class = []
    for c in range(k):
        m = labels == c
        per_class.append(float(correct[m].mean()) if m.any() else None)
    return Evaluation(float(correct.mean()), per_class, len(labels))


def group_metrics(per_class_acc, train_counts, hi: int = 100, lo: int = 20) -> dict:
    """Unweighted head/medium/tail/all means; None for empty groups."""
    if not hi > lo > 0:
        raise UsageError("thresholds must satisfy hi > lo > 0")
    groups = {"head": [], "medium": [], "tail": [], "all": []}
    for acc, n in zip(per_class_acc, train_counts):
        if acc is None:
            continue
        name = "head" if n > hi else ("tail" if n < lo else "medium")
        groups[name].append(acc)
        groups["all"].append(acc)
    return {g: (float(np.mean(v)) if v else None) for g, v in groups.items()}


def group_members(train_counts, hi: int = 100, lo: int = 20) -> dict:
    out = {"head": [], "medium": [], "tail": []}
    for c, n in enumerate(train_counts):
        out["head" if n > hi else ("tail" if n < lo else "medium")].append(c)
    return out


# ---------------------------------------------------------------- data stage

def load_data(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, SplitSet]:
    if cfg.data_path:
        ds = ingest_embeddings(cfg.data_path)
    else:
        data_seed = seed if cfg.data_seed is None else cfg.data_seed
        dcfg = benchmark_config(
            r=cfg.ratio, seed=data_seed, k=cfg.k, d=cfg.d, N0=cfg.N0,
            val_reserve=cfg.val_per_class, test_reserve=cfg.test_per_class,
            separation=cfg.separation, head_modes=cfg.head_modes, head_std=cfg.head_std,
            medium_std=cfg.medium_std, tail_std=cfg.tail_std,
        )
        ds = generate_dataset(dcfg)
    split = split_dataset(ds, cfg.val_per_class, cfg.test_per_class, seed=seed)
    return ds, split


def classifier_config(cfg: ExperimentConfig, d: int, k: int) -> NetworkConfig:
    return NetworkConfig((d, *cfg.hidden, k), dropout_rate=cfg.dropout)


# ---------------------------------------------------------------- training

class _Objective:
    """Per-batch loss for a baseline method."""

    def __init__(self, cfg: ExperimentConfig, method: str, train_counts):
        self.kind = method
        self.gamma = cfg.focal_gamma
        self.class_w = None
        if method == "rw":
            self.class_w = baselines.inverse_frequency_weights(train_counts)
        elif method == "cb":
            self.class_w = baselines.class_balanced_weights(train_counts, cfg.cb_beta)

    def __call__(self, logits, labels):
        w = None if self.class_w is None else self.class_w[labels]
        if self.kind == "focal":
            return baselines.batch_focal(logits, labels, self.gamma, w)
        return batch_cross_entropy(logits, labels, w)


def _epoch_batches(positions, labels, batch_size, resample, rng, k, steps=None):
    """Position arrays for one epoch over ``positions``.

    ``steps`` defaults to one pass. When it is larger, further shuffled passes
    are chained until that many batches have been produced.
    """
    n = len(positions)
    one_pass = math.ceil(n / batch_size)
    steps = one_pass if steps is None else max(steps, one_pass)
    if resample:
        for _ in range(steps):
            yield positions[baselines.balanced_resample(labels, batch_size, rng, k)]
        return
    done = 0
    while done < steps:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            if done == steps:
                return
            yield positions[order[start:start + batch_size]]
            done += 1


def _train_epoch(net, params, opt, ds, train_ids, objective, batch_size, resample, rng,
                 steps=None):
    pos = ds.positions(train_ids)
    labels = ds.labels[pos]
    total = 0.0
    nb = 0
    for bpos in _epoch_batches(pos, labels, batch_size, resample, rng, ds.k, steps):
        logits, cache = forward(net, params, ds.features[bpos], mode="train", mask_seed=rng)
        loss, g = objective(logits, ds.labels[bpos])
        grads = backward(net, params, cache, g)
        params, opt = adam_step(params, grads, opt)
        total += loss
        nb += 1
    return params, opt, total / max(nb, 1)


def _class_accuracy_for_probs(net, params, ds, split, train_ids, min_val):
    """Per-class accuracy feeding the sampling probabilities.

    Validation accuracy normally; training accuracy (one eval pass) when the
    validation split is too thin for some class.
    """
    val_counts = ds.class_counts(split.val) if len(split.val) else np.zeros(ds.k, int)
    if val_counts.min() >= min_val:
        x, y = ds.subset(split.val)
        source = "val"
    else:
        x, y = ds.subset(train_ids)
        source = "train"
    ev = evaluate(net, params, x, y, ds.k)
    # a class missing from the source counts as unlearned
    return [0.0 if a is None else a for a in ev.per_class], source


def _check_disjoint(train_ids, split: SplitSet):
    if np.intersect1d(train_ids, split.val).size or np.intersect1d(train_ids, split.test).size:
        raise UsageError("training set touches validation/test ids")


def _fit(cfg, ds, split, net, params, train_ids, pool_ids, objective, rng, resample=False,
         warmup=0, record: RunRecord | None = None):
    """Shared epoch loop. With an empty pool this is plain early-stopped training."""
    state = curriculum.CurriculumState(
        train_ids, pool_ids,
        query_patience=cfg.query_patience, stop_patience=cfg.stop_patience,
        max_epochs=cfg.max_epochs, warmup_epochs=warmup, budget_fraction=cfg.budget_fraction,
    )
    opt = AdamState.fresh(params, lr=cfg.lr)
    xv, yv = ds.subset(split.val)
    steps = None
    if cfg.epoch_steps == "full":
        steps = math.ceil(len(split.train) / cfg.batch_size)
    val_hist = []
    best_params, best_epoch = params, 0
    while True:
        _check_disjoint(state.train_ids, split)
        params, opt, loss = _train_epoch(net, params, opt, ds, state.train_ids, objective,
                                         cfg.batch_size, resample, rng, steps)
        ev = evaluate(net, params, xv, yv, ds.k)
        val_hist.append(ev.top1)
        improved = ev.top1 > state.best + state.min_delta
        action = curriculum.curriculum_step(state, val_hist)
        if improved:
            best_params, best_epoch = params, state.epoch
        if record is not None:
            record.history.append({
                "epoch": state.epoch, "split": "val", "loss": loss, "top1": ev.top1,
                "per_class": ev.per_class, "n_train": int(len(state.train_ids)),
                "pool": int(len(state.pool_ids)),
            })
        if action.kind == "stop":
            break
        if action.kind == "query":
            _query(cfg, ds, split, net, params, state, action.budget, rng)
            opt = AdamState.fresh(params, lr=cfg.requery_lr)
    if record is not None:
        record.epochs_run = state.epoch
        record.best_epoch = best_epoch
        record.events = [vars(e) for e in state.events]
    return best_params, state


def _query(cfg, ds, split, net, params, state, budget, rng):
    acc, source = _class_accuracy_for_probs(net, params, ds, split, state.train_ids,
                                            cfg.min_val_per_class)
    probs = curriculum.class_probs_from_accuracy(acc)
    pool_x, pool_y = ds.subset(state.pool_ids)
    if cfg.querying == "mi":
        draws = curriculum.posterior_draws(net, params, pool_x, cfg.posterior_draws, rng)
        unc = curriculum.bald_scores(draws)
    else:
        unc = rng.random(len(state.pool_ids))
    res = curriculum.rank_and_query(state.pool_ids, pool_y, unc, probs, budget, min_select=1)
    curriculum.apply_query(state, res.selected, res.quotas, probs, source)


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with stage context
        raise StageError(name, exc) from exc


def _ce_pretrain(cfg, ds, split, rng):
    """Supervised encoder for the CE-pretrain ablation (same epoch budget as SSL)."""
    net = classifier_config(cfg, ds.d, ds.k)
    net = NetworkConfig(net.layer_dims, dropout_rate=0.0)
    params = init_params(net, rng)
    opt = AdamState.fresh(params, lr=cfg.lr)
    obj = _Objective(cfg, "ce", None)
    for _ in range(cfg.ssl_epochs):
        params, opt, _ = _train_epoch(net, params, opt, ds, split.train, obj,
                                      cfg.ssl_batch_size, False, rng)
    n = net.n_layers - 1
    return NetworkParams(params.weights[:n], params.biases[:n])


def _pretrain(cfg, ds, split, seed, rng):
    net = classifier_config(cfg, ds.d, ds.k)
    if cfg.pretrain == "ce":
        return _ce_pretrain(cfg, ds, split, rng)
    ccfg = ssl.ContrastiveConfig(cfg.temperature, cfg.ssl_epochs, cfg.ssl_batch_size,
                                 cfg.ssl_lr, cfg.proj_dim)
    acfg = ssl.AugmentationConfig(cfg.noise_sigma, cfg.scale_jitter, cfg.mask_prob)
    x, _ = ds.subset(split.train)
    return ssl.pretrain_encoder(x, net, ccfg, acfg, seed).encoder


def _with_head(encoder: NetworkParams, net: NetworkConfig, rng) -> NetworkParams:
    fresh = init_params(net, rng)
    n = len(encoder.weights)
    return NetworkParams(tuple(w.copy() for w in encoder.weights) + fresh.weights[n:],
                         tuple(b.copy() for b in encoder.biases) + fresh.biases[n:])


def _select_anchors(cfg, ds, split, encoder, seed):
    x, y = ds.subset(split.train)
    emb = ssl.encode(encoder, x)
    protos = prototypes.compute_prototypes(emb, y, ds.k)
    train_counts = ds.class_counts(split.train)
    r = train_counts[0] / train_counts[-1]
    targets = prototypes.anchor_counts(train_counts, r, cfg.s)
    return prototypes.select_subset(emb, y, split.train, protos, targets, cfg.selection, seed,
                                    s=cfg.s, r=r)


def run_experiment(config: ExperimentConfig) -> RunRecord:
    """One trial at ``config.seed``. Raises ``StageError`` (with ``.record``) on failure."""
    cfg = config
    seed = cfg.seed
    record = RunRecord(config=cfg.to_dict(), seed=seed)
    t0 = time.perf_counter()
    try:
        ds, split = _stage("data", load_data, cfg, seed)
        train_counts = ds.class_counts(split.train)
        record.train_counts = train_counts.tolist()
        net = classifier_config(cfg, ds.d, ds.k)
        rng = np.random.default_rng([seed, 7])

        if cfg.method == "flexible":
            encoder = _stage("pretrain", _pretrain, cfg, ds, split, seed, rng)
            subset = _stage("selection", _select_anchors, cfg, ds, split, encoder, seed)
            record.subset = {
                "mode": cfg.selection, "s": cfg.s, "r_hat": subset.r_hat,
                "target_counts": [int(t) for t in subset.target_counts],
                "achieved_ratio": subset.achieved_ratio,
                "selected": subset.selected.tolist(),
            }
            params = _with_head(encoder, net, rng)
            obj = _Objective(cfg, "ce", train_counts)
            best, _ = _stage("curriculum", _fit, cfg, ds, split, net, params, subset.selected,
                             subset.pool, obj, rng, False, cfg.warmup_epochs, record)
        else:
            params = init_params(net, rng)
            obj = _Objective(cfg, cfg.method, train_counts)
            best, _ = _stage("train", _fit, cfg, ds, split, net, params, split.train,
                             np.array([], dtype=np.int64), obj, rng, cfg.method == "rs",
                             0, record)

        def _final():
            x, y = ds.subset(split.test)
            ev = evaluate(net, best, x, y, ds.k)
            record.per_class = ev.per_class
            groups = group_metrics(ev.per_class, train_counts, cfg.head_threshold, cfg.tail_threshold)
            record.metrics = {"top1": ev.top1, **groups}

        _stage("evaluate", _final)
    except StageError as exc:
        record.status = "failed"
        record.stage = exc.stage
        record.error = str(exc)
        record.wall_clock_s = time.perf_counter() - t0
        exc.record = record
        raise
    record.wall_clock_s = time.perf_counter() - t0
    return record


def trial_seeds(config: ExperimentConfig) -> list[int]:
    return [config.seed + i for i in range(config.trials)]


def run_trials(config: ExperimentConfig, progress=None) -> list[RunRecord]:
    records = []
    for s in trial_seeds(config):
        rec = run_experiment(config.replace(seed=s))
        records.append(rec)
        if progress:
            progress(rec)
    return records


def aggregate_trials(records) -> MetricsReport:
    """Mean and population std of every metric across trials."""
    if not records:
        raise UsageError("need at least one record to aggregate")
    base = {k: v for k, v in records[0].config.items() if k != "seed"}
    for r in records[1:]:
        if {k: v for k, v in r.config.items() if k != "seed"} != base:
            raise UsageError("records come from different configurations")
    mean, std = {}, {}
    for key in METRIC_KEYS:
        vals = [r.metrics.get(key) for r in records]
        vals = [v for v in vals if v is not None]
        mean[key] = float(np.mean(vals)) if vals else None
        std[key] = float(np.std(vals)) if vals else None
    for key in ("epochs_run", "queries"):
        vals = [getattr(r, key) for r in records]
        mean[key] = float(np.mean(vals))
        std[key] = float(np.std(vals))
    k = len(records[0].per_class)
    pc_mean, pc_std = [], []
    for c in range(k):
        vals = [r.per_class[c] for r in records if r.per_class[c] is not None]
        pc_mean.append(float(np.mean(vals)) if vals else None)
        pc_std.append(float(np.std(vals)) if vals else None)
    per_trial = [{"trial_seed": r.seed, **r.metrics, "epochs_run": r.epochs_run,
                  "queries": r.queries} for r in records]
    return MetricsReport(records[0].config["method"], float(records[0].config["ratio"]),
                         [r.seed for r in records], per_trial, mean, std, pc_mean, pc_std)
