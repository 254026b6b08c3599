"""Knowledge-graph loading, indexing, relation statistics, and synthetic
graphs for oracle tests.

Triplets are stored as (n, 3) int32 arrays of (head, relation, tail)
indices.  A loaded graph is immutable and safe to share across threads.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

COLUMN_ORDERS = {"hrt": (0, 1, 2), "htr": (0, 2, 1), "rht": (1, 0, 2)}


def _member(sorted_keys: np.ndarray, keys: np.ndarray) -> np.ndarray:
    if sorted_keys.size == 0:
        return np.zeros(np.shape(keys), dtype=bool)
    pos = np.searchsorted(sorted_keys, keys)
    pos = np.minimum(pos, sorted_keys.size - 1)
    return sorted_keys[pos] == keys


@dataclass(frozen=True)
class Triplet:
    head: int
    relation: int
    tail: int


class KnowledgeGraphError(ValueError):
    pass


@dataclass
class KnowledgeGraph:
    """Indexed triplet store with train/valid/test splits and a membership
    structure over the union of all three (the filter set for evaluation).
    """

    entity_count: int
    relation_count: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    entity_names: list[str] = field(default_factory=list)
    relation_names: list[str] = field(default_factory=list)
    _true_keys: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("train", "valid", "test"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int32)
            if arr.size and (arr.min() < 0 or arr[:, [0, 2]].max() >= self.entity_count
                             or arr[:, 1].max() >= self.relation_count):
                raise KnowledgeGraphError(f"{name} split has out-of-range indices")
            object.__setattr__(self, name, arr.reshape(-1, 3))
        if self._true_keys is None:
            keys = self.encode(*(np.concatenate([self.train, self.valid, self.test]).T))
            object.__setattr__(self, "_true_keys", np.unique(keys))
        self._train_keys = np.unique(self.encode(*self.train.T)) if self.train.size \
            else np.empty(0, dtype=np.int64)

    def encode(self, h, r, t) -> np.ndarray:
        """Pack triplets into sortable int64 keys."""
        h = np.asarray(h, dtype=np.int64)
        r = np.asarray(r, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        return (h * self.relation_count + r) * self.entity_count + t

    def contains(self, h, r, t) -> np.ndarray:
        """Membership in train ∪ valid ∪ test (vectorized)."""
        return _member(self._true_keys, self.encode(h, r, t))

    def contains_train(self, h, r, t) -> np.ndarray:
        """Membership in the train split only (the negative-sampling
        exclusion rule; valid/test triplets stay eligible as negatives).
        """
        return _member(self._train_keys, self.encode(h, r, t))

    @property
    def true_count(self) -> int:
        return int(self._true_keys.size)

    def split(self, name: str) -> np.ndarray:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise KnowledgeGraphError(f"unknown split {name!r}") from None

    def entities_not_in_train(self) -> np.ndarray:
        """Entities appearing only in valid/test; they keep their initial
        embeddings at evaluation time and are reported, not rejected.
        """
        seen = np.zeros(self.entity_count, dtype=bool)
        if self.train.size:
            seen[self.train[:, 0]] = True
            seen[self.train[:, 2]] = True
        ever = np.zeros(self.entity_count, dtype=bool)
        for arr in (self.train, self.valid, self.test):
            if arr.size:
                ever[arr[:, 0]] = True
                ever[arr[:, 2]] = True
        return np.flatnonzero(ever & ~seen)


@dataclass
class RelationStats:
    """Per-relation mean tails-per-head / heads-per-tail and the derived
    probability of corrupting the head when sampling negatives.
    """

    tph: np.ndarray
    hpt: np.ndarray
    head_replace_prob: np.ndarray
    missing_from_train: np.ndarray

    @property
    def tail_replace_prob(self) -> np.ndarray:
        return 1.0 - self.head_replace_prob


def _read_id_map(path: str) -> dict[str, int]:
    mapping: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise KnowledgeGraphError(f"{path}:{lineno}: expected 'name<TAB>id'")
            mapping[parts[0]] = int(parts[1])
    return mapping


def _read_triples(path: str, order: tuple[int, int, int]) -> list[tuple[str, str, str]]:
    if not os.path.exists(path):
        raise KnowledgeGraphError(f"missing triplet file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise KnowledgeGraphError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            rows.append((parts[order[0]], parts[order[1]], parts[order[2]]))
    return rows


def load_dataset(
    train_path: str,
    valid_path: str,
    test_path: str,
    column_order: str = "hrt",
    entity2id: str | None = None,
    relation2id: str | None = None,
) -> KnowledgeGraph:
    """Load TSV triple files and index entities/relations by first
    appearance over train, then valid, then test.  Pre-built id maps, when
    given, pin the assignment instead.
    """
    if column_order not in COLUMN_ORDERS:
        raise KnowledgeGraphError(f"unknown column order {column_order!r}")
    order = COLUMN_ORDERS[column_order]
    raw = {name: _read_triples(path, order)
           for name, path in (("train", train_path), ("valid", valid_path), ("test", test_path))}
    if not raw["train"]:
        raise KnowledgeGraphError("no training triplets")

    ent_ids = _read_id_map(entity2id) if entity2id else {}
    rel_ids = _read_id_map(relation2id) if relation2id else {}
    frozen_ents, frozen_rels = bool(ent_ids), bool(rel_ids)

    def ent(name: str) -> int:
        if name not in ent_ids:
            if frozen_ents:
                raise KnowledgeGraphError(f"entity {name!r} missing from entity2id map")
            ent_ids[name] = len(ent_ids)
        return ent_ids[name]

    def rel(name: str) -> int:
        if name not in rel_ids:
            if frozen_rels:
                raise KnowledgeGraphError(f"relation {name!r} missing from relation2id map")
            rel_ids[name] = len(rel_ids)
        return rel_ids[name]

    splits = {}
    for name in ("train", "valid", "test"):
        arr = np.array([(ent(h), rel(r), ent(t)) for h, r, t in raw[name]],
                       dtype=np.int32).reshape(-1, 3)
        splits[name] = arr

    ent_names = [None] * len(ent_ids)
    for n, i in ent_ids.items():
        ent_names[i] = n
    rel_names = [None] * len(rel_ids)
    for n, i in rel_ids.items():
        rel_names[i] = n

    kg = KnowledgeGraph(
        entity_count=len(ent_ids),
        relation_count=len(rel_ids),
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        entity_names=ent_names,
        relation_names=rel_names,
    )
    unseen = kg.entities_not_in_train()
    if unseen.size:
        log.info("%d entities appear only in valid/test", unseen.size)
    return kg


def write_dataset(kg: KnowledgeGraph, out_dir: str) -> None:
    """Write the indexed graph back as TSV files plus id dictionaries, so
    a run can be replayed from its own outputs.
    """
    os.makedirs(out_dir, exist_ok=True)
    ents = kg.entity_names or [str(i) for i in range(kg.entity_count)]
    rels = kg.relation_names or [str(i) for i in range(kg.relation_count)]
    for name in ("train", "valid", "test"):
        with open(os.path.join(out_dir, f"{name}.txt"), "w", encoding="utf-8") as fh:
            for h, r, t in kg.split(name):
                fh.write(f"{ents[h]}\t{rels[r]}\t{ents[t]}\n")
    write_dictionaries(kg, out_dir)


def write_dictionaries(kg: KnowledgeGraph, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    ents = kg.entity_names or [str(i) for i in range(kg.entity_count)]
    rels = kg.relation_names or [str(i) for i in range(kg.relation_count)]
    with open(os.path.join(out_dir, "entity2id.txt"), "w", encoding="utf-8") as fh:
        for i, n in enumerate(ents):
            fh.write(f"{n}\t{i}\n")
    with open(os.path.join(out_dir, "relation2id.txt"), "w", encoding="utf-8") as fh:
        for i, n in enumerate(rels):
            fh.write(f"{n}\t{i}\n")


def relation_stats(kg: KnowledgeGraph) -> RelationStats:
    """Mean tail-entities-per-head (tph) and head-entities-per-tail (hpt)
    per relation over the train split; head_replace_prob = tph/(tph+hpt).
    Relations absent from train fall back to 0.5 and are flagged.
    """
    if kg.train.size == 0:
        raise KnowledgeGraphError("relation_stats needs a nonempty train split")
    nrel = kg.relation_count
    tph = np.zeros(nrel)
    hpt = np.zeros(nrel)
    missing = np.ones(nrel, dtype=bool)
    h, r, t = kg.train[:, 0], kg.train[:, 1], kg.train[:, 2]
    counts = np.bincount(r, minlength=nrel).astype(np.float64)
    hr = np.unique(np.stack([h.astype(np.int64) * nrel + r]))
    distinct_heads = np.bincount((hr % nrel).astype(np.int64), minlength=nrel)
    rt = np.unique(np.stack([t.astype(np.int64) * nrel + r]))
    distinct_tails = np.bincount((rt % nrel).astype(np.int64), minlength=nrel)
    present = counts > 0
    missing[present] = False
    tph[present] = counts[present] / distinct_heads[present]
    hpt[present] = counts[present] / distinct_tails[present]
    prob = np.full(nrel, 0.5)
    prob[present] = tph[present] / (tph[present] + hpt[present])
    if missing.any():
        log.warning("%d relations absent from train; head_replace_prob=0.5",
                    int(missing.sum()))
    return RelationStats(tph=tph, hpt=hpt, head_replace_prob=prob,
                         missing_from_train=missing)


def generate_synthetic(
    num_entities: int,
    num_relations: int,
    num_triplets: int,
    seed: int,
) -> KnowledgeGraph:
    """Deterministic random graph without duplicate triplets, split
    80/10/10 in draw order.  Useful for brute-force oracles.
    """
    space = num_entities * num_entities * num_relations
    if num_triplets > space:
        raise KnowledgeGraphError(
            f"cannot draw {num_triplets} distinct triplets from a space of {space}"
        )
    rng = np.random.default_rng(seed)
    if space <= 10_000_000:
        codes = rng.choice(space, size=num_triplets, replace=False)
    else:
        chosen: dict[int, None] = {}
        while len(chosen) < num_triplets:
            draw = rng.integers(0, space, size=num_triplets - len(chosen))
            for c in draw.tolist():
                if c not in chosen:
                    chosen[c] = None
                    if len(chosen) == num_triplets:
                        break
        codes = np.array(list(chosen), dtype=np.int64)
    t = codes % num_entities
    hr = codes // num_entities
    r = hr % num_relations
    h = hr // num_relations
    triples = np.stack([h, r, t], axis=1).astype(np.int32)
    n_train = int(num_triplets * 0.8)
    n_valid = int(num_triplets * 0.1)
    return KnowledgeGraph(
        entity_count=num_entities,
        relation_count=num_relations,
        train=triples[:n_train],
        valid=triples[n_train:n_train + n_valid],
        test=triples[n_train + n_valid:],
        entity_names=[f"e{i}" for i in range(num_entities)],
        relation_names=[f"r{i}" for i in range(num_relations)],
    )
