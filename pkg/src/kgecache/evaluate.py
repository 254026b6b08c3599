"""Filtered link-prediction metrics, triplet classification, and F1 scores.

Ranks use the filtered protocol: candidates forming any known-true triplet
(train, valid, or test) are excluded, except the answer itself.  Ties are
averaged: rank = 1 + #strictly-greater + #equal-others / 2, which keeps a
constant scorer from claiming rank 1 everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import KnowledgeGraph
from .sampler import NegativeSampler
from .scoring import EmbeddingStore, get_model


@dataclass
class RankResult:
    head_ranks: np.ndarray
    tail_ranks: np.ndarray

    @property
    def all_ranks(self) -> np.ndarray:
        return np.concatenate([self.head_ranks, self.tail_ranks])


@dataclass
class EvalSummary:
    mrr: float
    hit1: float
    hit3: float
    hit10: float
    n: int
    head_mrr: float = float("nan")
    tail_mrr: float = float("nan")

    def to_dict(self) -> dict:
        return {"mrr": self.mrr, "hit1": self.hit1, "hit3": self.hit3,
                "hit10": self.hit10, "n_test": self.n,
                "head_mrr": self.head_mrr, "tail_mrr": self.tail_mrr}


class _TrueIndex:
    """Known-true entities grouped by the fixed part of a corruption:
    true heads per (relation, tail) and true tails per (head, relation).
    """

    def __init__(self, kg: KnowledgeGraph):
        allt = np.concatenate([kg.train, kg.valid, kg.test]).astype(np.int64)
        self.kg = kg
        self._heads = self._group(allt[:, 1] * kg.entity_count + allt[:, 2], allt[:, 0])
        self._tails = self._group(allt[:, 0] * kg.relation_count + allt[:, 1], allt[:, 2])

    @staticmethod
    def _group(keys: np.ndarray, values: np.ndarray):
        order = np.argsort(keys, kind="stable")
        keys_s, values_s = keys[order], values[order]
        uniq, starts = np.unique(keys_s, return_index=True)
        return uniq, np.append(starts, len(keys_s)), values_s

    def _lookup(self, grouped, key: int) -> np.ndarray:
        uniq, bounds, values = grouped
        i = np.searchsorted(uniq, key)
        if i >= len(uniq) or uniq[i] != key:
            return np.empty(0, dtype=np.int64)
        return values[bounds[i]:bounds[i + 1]]

    def true_heads(self, r: int, t: int) -> np.ndarray:
        return self._lookup(self._heads, r * self.kg.entity_count + t)

    def true_tails(self, h: int, r: int) -> np.ndarray:
        return self._lookup(self._tails, h * self.kg.relation_count + r)


def _rank_of(scores: np.ndarray, true_idx: int, filtered: np.ndarray) -> float:
    """Tie-averaged rank of the true entity among the unfiltered candidates."""
    s_true = scores[true_idx]
    keep = np.ones(len(scores), dtype=bool)
    keep[filtered] = False
    keep[true_idx] = True
    kept = scores[keep]
    greater = int(np.count_nonzero(kept > s_true))
    equal_others = int(np.count_nonzero(kept == s_true)) - 1
    return 1.0 + greater + equal_others / 2.0


def filtered_ranks(kg: KnowledgeGraph, store: EmbeddingStore, split: str = "test",
                   model=None, raw: bool = False) -> RankResult:
    """Head- and tail-replacement ranks for every triplet of the split.

    With ``raw=True`` nothing is filtered (diagnostic only).
    """
    model = model or get_model(store.kind, **store.options)
    triplets = kg.split(split)
    index = _TrueIndex(kg)
    head_ranks = np.empty(len(triplets))
    tail_ranks = np.empty(len(triplets))
    empty = np.empty(0, dtype=np.int64)
    for i, (h, r, t) in enumerate(triplets):
        h, r, t = int(h), int(r), int(t)
        scores = model.score_all(store, "tail", r, h)
        filt = empty if raw else index.true_tails(h, r)
        tail_ranks[i] = _rank_of(scores, t, filt)
        scores = model.score_all(store, "head", r, t)
        filt = empty if raw else index.true_heads(r, t)
        head_ranks[i] = _rank_of(scores, h, filt)
    return RankResult(head_ranks=head_ranks, tail_ranks=tail_ranks)


def summarize(ranks: RankResult | np.ndarray) -> EvalSummary:
    """MRR and Hit@{1,3,10} over all ranks (head and tail pooled)."""
    if isinstance(ranks, RankResult):
        pooled = ranks.all_ranks
        head_mrr = float(np.mean(1.0 / ranks.head_ranks)) if len(ranks.head_ranks) else float("nan")
        tail_mrr = float(np.mean(1.0 / ranks.tail_ranks)) if len(ranks.tail_ranks) else float("nan")
    else:
        pooled = np.asarray(ranks, dtype=np.float64)
        head_mrr = tail_mrr = float("nan")
    if pooled.size == 0:
        raise ValueError("summarize needs at least one rank")
    return EvalSummary(
        mrr=float(np.mean(1.0 / pooled)),
        hit1=float(np.mean(pooled <= 1)),
        hit3=float(np.mean(pooled <= 3)),
        hit10=float(np.mean(pooled <= 10)),
        n=int(pooled.size),
        head_mrr=head_mrr,
        tail_mrr=tail_mrr,
    )


def make_classification_set(kg: KnowledgeGraph, sampler: NegativeSampler,
                            split: str, seed: int):
    """Label the split's triplets +1 and pair each with one corrupted
    negative (-1), drawn once with a fixed seed so every model/sampler is
    judged on the identical set.
    """
    rng = np.random.default_rng(seed)
    pos = kg.split(split)
    neg = sampler.sample_batch(pos, None, rng)
    triplets = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos), dtype=np.int64),
                             -np.ones(len(neg), dtype=np.int64)])
    return triplets, labels


@dataclass
class ClassificationModel:
    """Relation-specific score thresholds fit on the valid split; relations
    unseen there fall back to the global threshold.
    """

    thresholds: dict[int, float]
    global_threshold: float

    def predict(self, scores: np.ndarray, relations: np.ndarray) -> np.ndarray:
        cut = np.array([self.thresholds.get(int(r), self.global_threshold)
                        for r in relations])
        return np.where(scores >= cut, 1, -1)


def _best_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy-maximizing cut: predict positive when score >= threshold.
    Candidates are midpoints between adjacent sorted scores plus sentinels
    below/above everything.
    """
    uniq = np.unique(scores)
    cands = np.concatenate([[uniq[0] - 1.0], (uniq[:-1] + uniq[1:]) / 2.0,
                            [uniq[-1] + 1.0]])
    acc = [(np.where(scores >= c, 1, -1) == labels).mean() for c in cands]
    return float(cands[int(np.argmax(acc))])


def fit_thresholds(store: EmbeddingStore, triplets: np.ndarray,
                   labels: np.ndarray, model=None) -> ClassificationModel:
    model = model or get_model(store.kind, **store.options)
    scores = model.score(store, triplets[:, 0], triplets[:, 1], triplets[:, 2])
    global_cut = _best_threshold(scores, labels)
    thresholds = {}
    for r in np.unique(triplets[:, 1]):
        mask = triplets[:, 1] == r
        thresholds[int(r)] = _best_threshold(scores[mask], labels[mask])
    return ClassificationModel(thresholds=thresholds, global_threshold=global_cut)


def classify(clf: ClassificationModel, store: EmbeddingStore, triplets: np.ndarray,
             labels: np.ndarray, model=None) -> float:
    """Fraction of triplets labeled correctly by the fitted thresholds."""
    model = model or get_model(store.kind, **store.options)
    scores = model.score(store, triplets[:, 0], triplets[:, 1], triplets[:, 2])
    preds = clf.predict(scores, triplets[:, 1])
    return float((preds == labels).mean())


def f1_scores(predictions, labels, num_classes: int) -> tuple[float, float]:
    """Micro- and macro-averaged F1 for single-label multiclass output.

    Micro pools TP/FP/FN over classes; macro averages per-class F1, with
    zero-support-and-zero-prediction classes contributing 0.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must have equal length")
    tp_total = fp_total = fn_total = 0
    per_class = []
    for c in range(num_classes):
        tp = int(np.count_nonzero((predictions == c) & (labels == c)))
        fp = int(np.count_nonzero((predictions == c) & (labels != c)))
        fn = int(np.count_nonzero((predictions != c) & (labels == c)))
        tp_total += tp
        fp_total += fp
        fn_total += fn
        denom = 2 * tp + fp + fn
        per_class.append(2 * tp / denom if denom else 0.0)
    micro_denom = 2 * tp_total + fp_total + fn_total
    micro = 2 * tp_total / micro_denom if micro_denom else 0.0
    macro = float(np.mean(per_class)) if per_class else 0.0
    return micro, macro
