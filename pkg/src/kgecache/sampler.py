"""Negative-sampling strategies: uniform, Bernoulli, self-adversarial, and
the cache-based sampler with temperature-softmax sampling and refreshing.

The cache sampler keeps, for every (relation, tail) key, a head cache of
high-scoring corruption candidates, and for every (head, relation) key a
tail cache.  Caches are refreshed by scoring the union of the old cache
and a fresh uniform candidate subset, then sampling without replacement
through a rescaled temperature softmax.  A per-train-triplet positive
weight (the sum of its two caches' stored scores) drives non-uniform
positive sampling.

Exclusion rule: a cached candidate substituted into its key never forms a
*train* triplet.  Valid/test triplets remain eligible (false negatives).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import KnowledgeGraph, RelationStats
from .scoring import EmbeddingStore, get_model, score_triplets

log = logging.getLogger(__name__)

SAMPLER_KINDS = ("uniform", "bernoulli", "selfadv", "nscaching")

# retries for rejection sampling before accepting the last draw; keeps
# dense toy graphs from livelocking
MAX_REJECTION_ROUNDS = 100


@dataclass
class EEHyperParams:
    """Exploration/exploitation knobs: softmax temperatures for positive
    sampling, cache sampling, and cache updating; cache and candidate-subset
    sizes; and the lazy-refresh period.
    """

    alpha1: float = 0.0
    alpha2: float = 0.0
    alpha3: float = 1.0
    n1: int = 50
    n2: int = 50
    lazy_n: int = 0
    variance_nu: float = 0.0

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3, self.variance_nu) < 0:
            raise ValueError("temperatures must be nonnegative")
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("cache sizes must be positive")
        if self.lazy_n < 0:
            raise ValueError("lazy_n must be >= 0")


def weighted_softmax(values, alpha: float) -> np.ndarray:
    """exp(alpha * v_i) / sum_j exp(alpha * v_j), with max-subtraction."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("weighted_softmax needs a nonempty vector")
    z = alpha * (values - values.max())
    w = np.exp(z)
    return w / w.sum()


def rescale(values) -> np.ndarray:
    """Map a vector into [0, 1]: 1 above its 80th percentile, 0 below its
    20th, linear in between; all-equal input maps to 0.5 (degenerate).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("rescale needs a nonempty vector")
    out = kernels.rescale_rows(values[None, :], np.array([values.size]))[0]
    if np.all(out == 0.5):
        log.debug("rescale: degenerate all-equal input")
    return out


def lazy_refresh_due(epoch: int, lazy_n: int) -> bool:
    """True on epochs where the cache refresh pass runs: every epoch for
    lazy_n = 0, every lazy_n + 1 epochs otherwise.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return epoch % (lazy_n + 1) == 0


def _rejection_uniform(kg: KnowledgeGraph, fixed_a, fixed_b, side: str,
                       rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform entities such that substituting them on `side` does not form
    a train triplet; bounded retries, then the last draw is accepted.
    """
    cand = rng.integers(0, kg.entity_count, size=shape, dtype=np.int64)
    if side == "head":
        bad = kg.contains_train(cand, fixed_a, fixed_b)
    else:
        bad = kg.contains_train(fixed_a, fixed_b, cand)
    rounds = 0
    while bad.any() and rounds < MAX_REJECTION_ROUNDS:
        redraw = rng.integers(0, kg.entity_count, size=int(bad.sum()), dtype=np.int64)
        cand[bad] = redraw
        if side == "head":
            bad_vals = kg.contains_train(cand[bad], np.broadcast_to(fixed_a, shape)[bad],
                                         np.broadcast_to(fixed_b, shape)[bad])
        else:
            bad_vals = kg.contains_train(np.broadcast_to(fixed_a, shape)[bad],
                                         np.broadcast_to(fixed_b, shape)[bad], cand[bad])
        nxt = bad.copy()
        nxt[bad] = bad_vals
        bad = nxt
        rounds += 1
    return cand


def _distinct_rejection_uniform(kg, fixed_a, fixed_b, side, rng) -> np.ndarray:
    """Like _rejection_uniform, but rows hold distinct entities (a uniform
    candidate subset rather than a multiset).  Rows keep their last draw
    when the retry budget runs out on saturated toy graphs.
    """
    shape = fixed_a.shape
    cand = rng.integers(0, kg.entity_count, size=shape, dtype=np.int64)
    for _ in range(MAX_REJECTION_ROUNDS):
        if side == "head":
            bad = kg.contains_train(cand, fixed_a, fixed_b)
        else:
            bad = kg.contains_train(fixed_a, fixed_b, cand)
        order = np.sort(cand, axis=1)
        dup_sorted = np.zeros(shape, dtype=bool)
        dup_sorted[:, 1:] = order[:, 1:] == order[:, :-1]
        # mark every later duplicate occurrence, keep the first
        seen = np.zeros(shape, dtype=bool)
        rank = np.argsort(cand, kind="stable", axis=1)
        np.put_along_axis(seen, rank, dup_sorted, axis=1)
        bad |= seen
        if not bad.any():
            break
        cand[bad] = rng.integers(0, kg.entity_count, size=int(bad.sum()),
                                 dtype=np.int64)
    return cand


class _KeyedCaches:
    """Fixed-size caches keyed by (a, b) pairs, one instance per side.

    Key ids are assigned eagerly for every distinct key in the train split
    so positive weights can be gathered by index; cache *content* is filled
    lazily by the first refresh that touches the key.
    """

    def __init__(self, keys_of_triplets: np.ndarray, track_variance: bool):
        uniq, inverse = np.unique(keys_of_triplets, return_inverse=True)
        self.key_of_triplet = inverse.astype(np.int64)
        self.n_keys = uniq.size
        self.key_pairs = uniq  # encoded (a, b); decoded by the owner
        self.cands: list[np.ndarray] = [_EMPTY_I] * self.n_keys
        self.scores: list[np.ndarray] = [_EMPTY_F] * self.n_keys
        self.sums = np.zeros(self.n_keys)
        self.filled = np.zeros(self.n_keys, dtype=bool)
        self.track_variance = track_variance
        if track_variance:
            self.var_count: list[np.ndarray] = [_EMPTY_I] * self.n_keys
            self.var_mean: list[np.ndarray] = [_EMPTY_F] * self.n_keys
            self.var_m2: list[np.ndarray] = [_EMPTY_F] * self.n_keys

    def quality(self, kid: int, nu: float) -> np.ndarray:
        """Stored scores, plus nu * running std when variance tracking is on."""
        s = self.scores[kid]
        if not self.track_variance or nu == 0.0:
            return s
        cnt = self.var_count[kid]
        std = np.zeros_like(s)
        ok = cnt > 1
        std[ok] = np.sqrt(self.var_m2[kid][ok] / (cnt[ok] - 1))
        return s + nu * std


_EMPTY_I = np.empty(0, dtype=np.int64)
_EMPTY_F = np.empty(0, dtype=np.float64)


@dataclass
class NegativeCache:
    """Head and tail caches plus the positive-weight view over train."""

    kg: KnowledgeGraph
    ee: EEHyperParams
    head: _KeyedCaches = field(init=False)
    tail: _KeyedCaches = field(init=False)

    def __post_init__(self):
        train = self.kg.train.astype(np.int64)
        track = self.ee.variance_nu > 0
        # head cache key: (relation, tail); tail cache key: (head, relation)
        self.head = _KeyedCaches(train[:, 1] * self.kg.entity_count + train[:, 2], track)
        self.tail = _KeyedCaches(train[:, 0] * self.kg.relation_count + train[:, 1], track)

    def side(self, name: str) -> _KeyedCaches:
        return self.head if name == "head" else self.tail

    def decode_key(self, side: str, kid: int) -> tuple[int, int]:
        packed = int(self.side(side).key_pairs[kid])
        if side == "head":
            return packed // self.kg.entity_count, packed % self.kg.entity_count
        return packed // self.kg.relation_count, packed % self.kg.relation_count

    def positive_weights(self) -> np.ndarray:
        """Per-train-triplet weight: the sum of stored scores of the
        triplet's two caches (zeros before the first refresh).
        """
        return (self.head.sums[self.head.key_of_triplet]
                + self.tail.sums[self.tail.key_of_triplet])

    def refresh(self, side: str, kids: np.ndarray, store: EmbeddingStore,
                rng: np.random.Generator, model=None) -> None:
        """Refresh the given keys: draw n2 fresh candidates each, score the
        union of old cache and candidates, then keep n1 entries sampled
        without replacement by softmax(alpha3 * rescaled quality).
        """
        if kids.size == 0:
            return
        model = model or get_model(store.kind, **store.options)
        caches = self.side(side)
        ee = self.ee
        k = kids.size
        fixed_a = np.empty(k, dtype=np.int64)
        fixed_b = np.empty(k, dtype=np.int64)
        for j, kid in enumerate(kids):
            fixed_a[j], fixed_b[j] = self.decode_key(side, int(kid))

        fa = np.repeat(fixed_a, ee.n2).reshape(k, ee.n2)
        fb = np.repeat(fixed_b, ee.n2).reshape(k, ee.n2)
        fresh = _rejection_uniform(self.kg, fa, fb, side, rng, (k, ee.n2))
        sentinel = self.kg.entity_count
        # the cache invariant is absolute: candidates still colliding with a
        # train triplet after the retry budget are dropped, not accepted
        if side == "head":
            still_bad = self.kg.contains_train(fresh, fa, fb)
        else:
            still_bad = self.kg.contains_train(fa, fb, fresh)
        fresh = np.where(still_bad, sentinel, fresh)

        old_width = max((caches.cands[int(kid)].size for kid in kids), default=0)
        width = old_width + ee.n2
        pool = np.full((k, width), sentinel, dtype=np.int64)
        pool[:, old_width:] = fresh
        for j, kid in enumerate(kids):
            old = caches.cands[int(kid)]
            pool[j, :old.size] = old

        # per-row dedupe, valid entries compacted to the front
        pool.sort(axis=1)
        dup = np.zeros_like(pool, dtype=bool)
        dup[:, 1:] = pool[:, 1:] == pool[:, :-1]
        dup |= pool == sentinel
        order = np.argsort(dup, axis=1, kind="stable")
        pool = np.take_along_axis(pool, order, axis=1)
        lengths = (~dup).sum(axis=1)

        # score valid entries in one flat pass
        rows = np.repeat(np.arange(k), lengths)
        cols = _ragged_cols(lengths)
        flat_c = pool[rows, cols]
        if side == "head":
            flat_scores = score_triplets(store, flat_c, fixed_a[rows], fixed_b[rows], model)
        else:
            flat_scores = score_triplets(store, fixed_a[rows], fixed_b[rows], flat_c, model)
        scores = np.zeros((k, width))
        scores[rows, cols] = flat_scores

        if caches.track_variance:
            quality, w_count, w_mean, w_m2 = self._welford_quality(
                caches, kids, pool, scores, lengths)
        else:
            quality = scores

        sel = np.full((k, ee.n1), -1, dtype=np.int64)
        counts = np.zeros(k, dtype=np.int64)
        nonempty = lengths > 0
        if nonempty.any():
            sel[nonempty], counts[nonempty] = kernels.refresh_select(
                quality[nonempty], lengths[nonempty], ee.alpha3,
                rng.random((int(nonempty.sum()), width)), ee.n1)
        for j, kid in enumerate(kids):
            kid = int(kid)
            take = sel[j, :counts[j]]
            caches.cands[kid] = pool[j, take].copy()
            picked = scores[j, take].copy()
            caches.scores[kid] = picked
            caches.sums[kid] = picked.sum()
            caches.filled[kid] = True
            if caches.track_variance:
                caches.var_count[kid] = w_count[j, take].copy()
                caches.var_mean[kid] = w_mean[j, take].copy()
                caches.var_m2[kid] = w_m2[j, take].copy()

    def _welford_quality(self, caches, kids, pool, scores, lengths):
        """Update per-entry running mean/M2 with the just-computed scores;
        entries not previously cached start a fresh accumulator.  Returns
        (score + nu * std, count, mean, m2).
        """
        k, width = pool.shape
        count = np.zeros((k, width), dtype=np.int64)
        mean = np.zeros((k, width))
        m2 = np.zeros((k, width))
        for j, kid in enumerate(kids):
            kid = int(kid)
            old_c, old_m, old_s = (caches.var_count[kid], caches.var_mean[kid],
                                   caches.var_m2[kid])
            if old_c.size:
                old_cands = caches.cands[kid]
                match = np.searchsorted(pool[j, :lengths[j]], old_cands)
                match = np.clip(match, 0, lengths[j] - 1)
                hit = pool[j, match] == old_cands
                count[j, match[hit]] = old_c[hit]
                mean[j, match[hit]] = old_m[hit]
                m2[j, match[hit]] = old_s[hit]
        count += 1
        delta = scores - mean
        mean += delta / count
        m2 += delta * (scores - mean)
        std = np.zeros_like(scores)
        ok = count > 1
        std[ok] = np.sqrt(m2[ok] / (count[ok] - 1))
        return scores + self.ee.variance_nu * std, count, mean, m2

    def kids_for(self, side: str, triplets: np.ndarray) -> np.ndarray:
        """Key ids of the given (train) triplets for one side."""
        caches = self.side(side)
        t64 = triplets.astype(np.int64)
        if side == "head":
            packed = t64[:, 1] * self.kg.entity_count + t64[:, 2]
        else:
            packed = t64[:, 0] * self.kg.relation_count + t64[:, 1]
        return np.searchsorted(caches.key_pairs, packed)

    def ensure_filled(self, pos: np.ndarray, store: EmbeddingStore,
                      rng: np.random.Generator, model=None) -> None:
        """First touch of a positive triplet initializes both of its caches
        with one forced refresh.
        """
        for side in ("head", "tail"):
            caches = self.side(side)
            kids = self.kids_for(side, pos)
            need = kids[~caches.filled[kids]]
            if need.size:
                self.refresh(side, np.unique(need), store, rng, model=model)

    def refresh_all(self, store: EmbeddingStore, rng: np.random.Generator,
                    model=None) -> None:
        """Refresh every key whose cache has been initialized."""
        for side in ("head", "tail"):
            caches = self.side(side)
            kids = np.flatnonzero(caches.filled)
            self.refresh(side, kids, store, rng, model=model)

    def export_snapshot(self, path: str) -> None:
        """Dump cache contents as text: ``key<TAB>entity_name<TAB>score``.

        Keys render as side|fixed1|fixed2 with dataset names when known.
        """
        ents = self.kg.entity_names or [str(i) for i in range(self.kg.entity_count)]
        rels = self.kg.relation_names or [str(i) for i in range(self.kg.relation_count)]
        with open(path, "w", encoding="utf-8") as fh:
            for side in ("head", "tail"):
                caches = self.side(side)
                for kid in np.flatnonzero(caches.filled):
                    a, b = self.decode_key(side, int(kid))
                    key = (f"head|{rels[a]}|{ents[b]}" if side == "head"
                           else f"tail|{ents[a]}|{rels[b]}")
                    for cand, sc in zip(caches.cands[kid], caches.scores[kid]):
                        fh.write(f"{key}\t{ents[int(cand)]}\t{sc:.6g}\n")


def _ragged_cols(lengths: np.ndarray) -> np.ndarray:
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    ends = np.cumsum(lengths)
    starts = ends - lengths
    return np.arange(total) - np.repeat(starts, lengths)


def update_cache(cache: NegativeCache, side: str, key: tuple[int, int],
                 store: EmbeddingStore, rng: np.random.Generator) -> None:
    """Refresh one cache key (convenience wrapper over the batched path)."""
    caches = cache.side(side)
    if side == "head":
        packed = key[0] * cache.kg.entity_count + key[1]
    else:
        packed = key[0] * cache.kg.relation_count + key[1]
    kid = np.searchsorted(caches.key_pairs, packed)
    if kid >= caches.n_keys or caches.key_pairs[kid] != packed:
        raise KeyError(f"no {side} cache for key {key}")
    cache.refresh(side, np.array([kid]), store, rng)


class PositiveSampler:
    """Draws train-triplet indices with probability softmax(alpha1 *
    rescaled positive weight); the distribution is rebuilt once per epoch.
    alpha1 = 0 reduces exactly to uniform.
    """

    def __init__(self, kg: KnowledgeGraph, cache: NegativeCache | None,
                 alpha1: float):
        self.kg = kg
        self.cache = cache
        self.alpha1 = alpha1
        self._cum: np.ndarray | None = None
        self.start_epoch()

    def start_epoch(self) -> None:
        n = len(self.kg.train)
        if self.alpha1 == 0.0 or self.cache is None:
            self._cum = None  # uniform fast path
            return
        p = self.cache.positive_weights()
        probs = weighted_softmax(rescale(p), self.alpha1)
        self._cum = np.cumsum(probs)

    def draw(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if self._cum is None:
            return rng.integers(0, len(self.kg.train), size=m, dtype=np.int64)
        u = rng.random(m) * self._cum[-1]
        return np.searchsorted(self._cum, u, side="right").clip(0, len(self.kg.train) - 1)


def sample_positive(kg: KnowledgeGraph, cache: NegativeCache | None,
                    alpha1: float, rng: np.random.Generator) -> int:
    """Single positive-triplet index draw (see PositiveSampler)."""
    return int(PositiveSampler(kg, cache, alpha1).draw(1, rng)[0])


class NegativeSampler:
    """Common surface: sample_batch(pos, store, rng) -> (m, 3) negatives."""

    kind: str

    def __init__(self, kg: KnowledgeGraph, stats: RelationStats, ee: EEHyperParams):
        self.kg = kg
        self.stats = stats
        self.ee = ee

    def on_epoch_start(self, epoch: int, store: EmbeddingStore,
                       rng: np.random.Generator) -> None:
        pass

    def cache(self) -> NegativeCache | None:
        return None

    def _sides(self, pos: np.ndarray, rng: np.random.Generator,
               bernoulli: bool) -> np.ndarray:
        if bernoulli:
            prob = self.stats.head_replace_prob[pos[:, 1]]
        else:
            prob = 0.5
        return rng.random(len(pos)) < prob

    def _substitute(self, pos, head_mask, entities) -> np.ndarray:
        neg = pos.copy()
        neg[head_mask, 0] = entities[head_mask]
        neg[~head_mask, 2] = entities[~head_mask]
        return neg

    def sample_batch(self, pos: np.ndarray, store: EmbeddingStore,
                     rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


class UniformSampler(NegativeSampler):
    """Fair-coin corruption side, uniform entity, train-set rejection."""

    kind = "uniform"
    bernoulli_side = False

    def sample_batch(self, pos, store, rng):
        head_mask = self._sides(pos, rng, bernoulli=self.bernoulli_side)
        ents = np.empty(len(pos), dtype=np.int64)
        if head_mask.any():
            ents[head_mask] = _rejection_uniform(
                self.kg, pos[head_mask, 1], pos[head_mask, 2], "head", rng,
                (int(head_mask.sum()),))
        if (~head_mask).any():
            ents[~head_mask] = _rejection_uniform(
                self.kg, pos[~head_mask, 0], pos[~head_mask, 1], "tail", rng,
                (int((~head_mask).sum()),))
        return self._substitute(pos, head_mask, ents)


class BernoulliSampler(UniformSampler):
    """Uniform entity draw with the corruption side chosen by the
    relation's tph/(tph+hpt) probability.
    """

    kind = "bernoulli"
    bernoulli_side = True


class SelfAdversarialSampler(NegativeSampler):
    """Draws a subset of n1 distinct uniform candidates per positive and
    picks one by softmax of their current model scores at temperature
    alpha2 (no rescaling).
    """

    kind = "selfadv"

    def sample_batch(self, pos, store, rng):
        m = len(pos)
        n1 = self.ee.n1
        head_mask = self._sides(pos, rng, bernoulli=True)
        model = get_model(store.kind, **store.options)
        cands = np.empty((m, n1), dtype=np.int64)
        scores = np.empty((m, n1))
        for side, mask in (("head", head_mask), ("tail", ~head_mask)):
            if not mask.any():
                continue
            sub = pos[mask]
            a = (sub[:, 1] if side == "head" else sub[:, 0])
            b = (sub[:, 2] if side == "head" else sub[:, 1])
            fa = np.repeat(a, n1).reshape(-1, n1)
            fb = np.repeat(b, n1).reshape(-1, n1)
            got = _distinct_rejection_uniform(self.kg, fa, fb, side, rng)
            cands[mask] = got
            flat = got.reshape(-1)
            if side == "head":
                sc = score_triplets(store, flat, fa.reshape(-1), fb.reshape(-1), model)
            else:
                sc = score_triplets(store, fa.reshape(-1), fb.reshape(-1), flat, model)
            scores[mask] = sc.reshape(-1, n1)
        lengths = np.full(m, n1, dtype=np.int64)
        picked = kernels.cache_draw(scores, lengths, self.ee.alpha2, rng.random(m),
                                    apply_rescale=False)
        ents = cands[np.arange(m), picked]
        return self._substitute(pos, head_mask, ents)


class CacheSampler(NegativeSampler):
    """Cache-based sampler: corruption side by Bernoulli probability, then
    a draw from that side's cache by softmax(alpha2 * rescaled quality).
    """

    kind = "nscaching"

    def __init__(self, kg, stats, ee):
        super().__init__(kg, stats, ee)
        self._cache = NegativeCache(kg, ee)

    def cache(self) -> NegativeCache:
        return self._cache

    def on_epoch_start(self, epoch, store, rng):
        if lazy_refresh_due(epoch, self.ee.lazy_n):
            self._cache.refresh_all(store, rng)

    def sample_batch(self, pos, store, rng):
        m = len(pos)
        self._cache.ensure_filled(pos, store, rng)
        head_mask = self._sides(pos, rng, bernoulli=True)
        width = self.ee.n1
        rowscores = np.zeros((m, width))
        lengths = np.empty(m, dtype=np.int64)
        rowcands = np.zeros((m, width), dtype=np.int64)
        for side, mask in (("head", head_mask), ("tail", ~head_mask)):
            if not mask.any():
                continue
            caches = self._cache.side(side)
            kids = self._cache.kids_for(side, pos[mask])
            for out_row, kid in zip(np.flatnonzero(mask), kids):
                q = caches.quality(int(kid), self.ee.variance_nu)
                n = q.size
                lengths[out_row] = n
                rowscores[out_row, :n] = q
                rowcands[out_row, :n] = caches.cands[int(kid)]
        ents = np.empty(m, dtype=np.int64)
        ok = lengths > 0
        if ok.any():
            picked = kernels.cache_draw(rowscores[ok], lengths[ok], self.ee.alpha2,
                                        rng.random(int(ok.sum())))
            ents[ok] = rowcands[ok][np.arange(int(ok.sum())), picked]
        if (~ok).any():
            # degenerate key with no admissible corruption at all (saturated
            # toy graphs): fall back to a uniform entity
            ents[~ok] = rng.integers(0, self.kg.entity_count, size=int((~ok).sum()))
        return self._substitute(pos, head_mask, ents)


def make_sampler(kind: str, kg: KnowledgeGraph, stats: RelationStats,
                 ee: EEHyperParams) -> NegativeSampler:
    try:
        cls = {"uniform": UniformSampler, "bernoulli": BernoulliSampler,
               "selfadv": SelfAdversarialSampler, "nscaching": CacheSampler}[kind]
    except KeyError:
        raise ValueError(f"unknown sampler kind {kind!r}") from None
    return cls(kg, stats, ee)
