"""Mini-batch training loop with lazily-updated (sparse) Adam.

One negative per positive by default, cache refresh passes at epoch
boundaries on the lazy schedule, validation MRR at a configurable cadence
with best-checkpoint retention, and JSON-lines epoch logging.
"""
from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import evaluate
from .data import KnowledgeGraph, relation_stats
from .sampler import EEHyperParams, PositiveSampler, make_sampler
from .scoring import (EmbeddingStore, LossSpec, get_model, init_embeddings,
                      normalize_rows, pair_gradient_batch, save_checkpoint,
                      score_triplets)
from .variance import VarianceTracker

TRANSLATIONAL = ("transe", "transh", "transd")


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, dump_path: str | None = None):
        super().__init__(msg + (f" (state dump: {dump_path})" if dump_path else ""))
        self.dump_path = dump_path


@dataclass
class TrainConfig:
    model: str = "transe"
    loss: str = "margin"
    margin: float = 1.0
    l2: float = 0.0
    dim: int = 50
    batch_size: int = 1024
    lr: float = 1e-3
    epochs: int = 100
    seed: int = 0
    sampler: str = "bernoulli"
    ee: EEHyperParams = field(default_factory=EEHyperParams)
    pretrain_epochs: int = 0
    eval_every: int = 20
    negatives: int = 1
    simple_average: bool = False
    normalize_entities: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.lr <= 0 or self.epochs < 0:
            raise ValueError("batch_size >= 1, lr > 0, epochs >= 0 required")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")

    def loss_spec(self) -> LossSpec:
        return LossSpec(kind=self.loss, margin=self.margin, l2=self.l2)


@dataclass
class AdamState:
    """First/second-moment accumulators shaped like each parameter matrix.

    Wholly untouched rows keep their moments (lazy Adam); the step counter
    advances once per batch.
    """

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init_like(cls, store: EmbeddingStore) -> "AdamState":
        return cls(m={k: np.zeros(a.shape) for k, a in store.matrices.items()},
                   v={k: np.zeros(a.shape) for k, a in store.matrices.items()})


def adam_step(store: EmbeddingStore, state: AdamState,
              grads: dict[str, tuple[np.ndarray, np.ndarray]], lr: float) -> None:
    """Apply one bias-corrected Adam update to the touched rows only."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, (idx, rows) in grads.items():
        m = state.beta1 * state.m[name][idx] + (1.0 - state.beta1) * rows
        v = state.beta2 * state.v[name][idx] + (1.0 - state.beta2) * rows * rows
        state.m[name][idx] = m
        state.v[name][idx] = v
        mat = store.matrices[name]
        mat[idx] -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(mat.dtype)


@dataclass
class TrainResult:
    store: EmbeddingStore
    log: list[dict]
    best_store: EmbeddingStore | None = None
    best_mrr: float = float("nan")
    best_epoch: int = -1
    sampler: object = None
    tracker: VarianceTracker | None = None

    @property
    def selected(self) -> EmbeddingStore:
        """Best-validation store when one was recorded, else the final."""
        return self.best_store if self.best_store is not None else self.store


def train(
    kg: KnowledgeGraph,
    config: TrainConfig,
    store: EmbeddingStore | None = None,
    out_dir: str | None = None,
    log_path: str | None = None,
    snapshot_epochs: tuple[int, ...] = (),
    save_epochs: tuple[int, ...] = (),
    track_triplets: np.ndarray | None = None,
) -> TrainResult:
    """Run the full loop: per batch, sample positives (weighted when the
    cache sampler is active), one negative each, accumulate pair gradients,
    apply one Adam step.  Cache refresh passes run at epochs where the lazy
    schedule is due.  NaN loss aborts with a diagnostic dump.
    """
    stats = relation_stats(kg)
    model = get_model(config.model, simple_average=config.simple_average) \
        if config.model == "simple" else get_model(config.model)
    if store is None:
        store = init_embeddings(config.model, kg, config.dim, config.seed,
                                simple_average=config.simple_average)
    loss = config.loss_spec()
    rng = np.random.default_rng(config.seed)
    neg_sampler = make_sampler(config.sampler, kg, stats, config.ee)
    pos_sampler = PositiveSampler(kg, neg_sampler.cache(),
                                  config.ee.alpha1 if config.sampler == "nscaching" else 0.0)
    adam = AdamState.init_like(store)
    tracker = None
    if track_triplets is not None and len(track_triplets):
        track_triplets = np.asarray(track_triplets).reshape(-1, 3)
        tracker = VarianceTracker(len(track_triplets))

    n = len(kg.train)
    n_batches = max(1, math.ceil(n / config.batch_size))
    log_records: list[dict] = []
    best_store = None
    best_mrr = -1.0
    best_epoch = -1
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None

    try:
        for epoch in range(config.epochs):
            t_start = time.perf_counter()
            t_cache = time.perf_counter()
            neg_sampler.on_epoch_start(epoch, store, rng)
            cache_seconds = time.perf_counter() - t_cache
            pos_sampler.start_epoch()
            loss_sum = 0.0
            norm_sum = 0.0
            pair_count = 0
            for _ in range(n_batches):
                idx = pos_sampler.draw(config.batch_size, rng)
                pos = kg.train[idx]
                if config.negatives > 1:
                    pos = np.repeat(pos, config.negatives, axis=0)
                t_cache = time.perf_counter()
                neg = neg_sampler.sample_batch(pos, store, rng)
                cache_seconds += time.perf_counter() - t_cache
                grads, losses, norms = _batch_gradients(
                    store, loss, pos, neg, model, pool, config.workers)
                if not np.all(np.isfinite(losses)):
                    dump = _dump_state(out_dir, store, epoch, losses)
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}", dump)
                adam_step(store, adam, grads, config.lr)
                if config.model == "transh" and "w_rel" in grads:
                    normalize_rows(store, "w_rel", grads["w_rel"][0])
                loss_sum += float(losses.sum())
                norm_sum += float(norms.sum())
                pair_count += len(losses)
            if config.normalize_entities and config.model in TRANSLATIONAL:
                normalize_rows(store, "ent")

            record = {
                "epoch": epoch,
                "loss": loss_sum / pair_count,
                "grad_norm_mean": norm_sum / pair_count,
                "seconds": time.perf_counter() - t_start,
                "cache_seconds": cache_seconds,
            }
            if tracker is not None:
                tracker.update(score_triplets(
                    store, track_triplets[:, 0], track_triplets[:, 1],
                    track_triplets[:, 2], model))
            if config.eval_every and ((epoch + 1) % config.eval_every == 0
                                      or epoch == config.epochs - 1):
                if len(kg.valid):
                    summary = evaluate.summarize(
                        evaluate.filtered_ranks(kg, store, "valid", model=model))
                    record["mrr_valid"] = summary.mrr
                    if summary.mrr > best_mrr:
                        best_mrr = summary.mrr
                        best_epoch = epoch
                        best_store = store.copy()
            if epoch in snapshot_epochs and neg_sampler.cache() is not None:
                os.makedirs(out_dir or ".", exist_ok=True)
                neg_sampler.cache().export_snapshot(
                    os.path.join(out_dir or ".", f"cache_epoch{epoch}.tsv"))
            if epoch in save_epochs and out_dir:
                os.makedirs(out_dir, exist_ok=True)
                save_checkpoint(store, os.path.join(out_dir, f"checkpoint_epoch{epoch}.bin"),
                                {"epoch": epoch, "seed": config.seed})
            log_records.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
        if pool:
            pool.shutdown()

    return TrainResult(store=store, log=log_records, best_store=best_store,
                       best_mrr=best_mrr if best_mrr >= 0 else float("nan"),
                       best_epoch=best_epoch, sampler=neg_sampler, tracker=tracker)


def _batch_gradients(store, loss, pos, neg, model, pool, workers):
    """Single- or multi-worker pair-gradient computation.  The parallel
    path merges per-chunk row gradients before the Adam step and is not
    bitwise reproducible (summation order varies with scheduling).
    """
    if pool is None or len(pos) < 2 * workers:
        grads, losses, norms, _, _ = pair_gradient_batch(store, loss, pos, neg, model=model)
        return grads, losses, norms
    chunks = np.array_split(np.arange(len(pos)), workers)
    futures = [pool.submit(pair_gradient_batch, store, loss, pos[c], neg[c], model)
               for c in chunks if len(c)]
    merged: dict[str, dict] = {}
    losses_parts, norms_parts = [], []
    for fut in futures:
        grads, losses, norms, _, _ = fut.result()
        losses_parts.append(losses)
        norms_parts.append(norms)
        for name, (idx, rows) in grads.items():
            slot = merged.setdefault(name, {})
            for i, row in zip(idx.tolist(), rows):
                if i in slot:
                    slot[i] = slot[i] + row
                else:
                    slot[i] = row
    out = {}
    for name, slot in merged.items():
        idx = np.fromiter(slot.keys(), dtype=np.int64)
        order = np.argsort(idx)
        rows = np.stack(list(slot.values()))[order]
        out[name] = (idx[order], rows)
    return out, np.concatenate(losses_parts), np.concatenate(norms_parts)


def _dump_state(out_dir, store, epoch, losses):
    path = os.path.join(out_dir or ".", f"diverged_epoch{epoch}.json")
    try:
        info = {
            "epoch": epoch,
            "nonfinite_pairs": int(np.count_nonzero(~np.isfinite(losses))),
            "matrix_norms": {k: float(np.linalg.norm(v))
                             for k, v in store.matrices.items()},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(info, fh, indent=2)
        return path
    except OSError:
        return None


def pretrain_then_switch(kg: KnowledgeGraph, config: TrainConfig,
                         out_dir: str | None = None, **train_kwargs) -> TrainResult:
    """Warm start: Bernoulli sampling for pretrain_epochs, checkpoint, then
    continue with the configured sampler from the warm parameters (caches
    built fresh at the switch).
    """
    if config.pretrain_epochs <= 0:
        return train(kg, config, out_dir=out_dir, **train_kwargs)
    phase1_cfg = replace(config, sampler="bernoulli",
                         epochs=config.pretrain_epochs, pretrain_epochs=0)
    phase1 = train(kg, phase1_cfg, out_dir=out_dir)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(phase1.store, os.path.join(out_dir, "pretrained.bin"),
                        {"epoch": config.pretrain_epochs, "seed": config.seed,
                         "phase": "pretrain"})
    phase2_cfg = replace(config, pretrain_epochs=0)
    return train(kg, phase2_cfg, store=phase1.store, out_dir=out_dir, **train_kwargs)
