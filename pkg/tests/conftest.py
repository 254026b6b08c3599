import os

import numpy as np
import pytest

from kgecache.data import KnowledgeGraph, generate_synthetic
from kgecache.scoring import get_model, init_embeddings

DATA_ROOT = os.environ.get("KGECACHE_DATA", os.path.join(os.path.dirname(__file__), "..", "data"))


def dataset_dir(name: str) -> str:
    return os.path.join(DATA_ROOT, name)


def has_dataset(name: str) -> bool:
    d = dataset_dir(name)
    return all(os.path.exists(os.path.join(d, f)) for f in ("train.txt", "valid.txt", "test.txt"))


def has_graph_dataset(name: str) -> bool:
    d = dataset_dir(name)
    return (os.path.exists(os.path.join(d, "edges.txt"))
            and os.path.exists(os.path.join(d, "labels.txt")))


requires_wn18rr = pytest.mark.skipif(
    not has_dataset("WN18RR"),
    reason="WN18RR dataset not available (no network in this environment); "
           "place train/valid/test.txt under $KGECACHE_DATA/WN18RR to enable",
)

requires_cora = pytest.mark.skipif(
    not has_graph_dataset("cora"),
    reason="Cora dataset not available (no network in this environment); "
           "place edges.txt/labels.txt under $KGECACHE_DATA/cora to enable",
)


@pytest.fixture(scope="session")
def small_kg() -> KnowledgeGraph:
    return generate_synthetic(30, 3, 200, seed=11)


@pytest.fixture(scope="session")
def six_entity_kg() -> KnowledgeGraph:
    # sparse 6-entity graph: plenty of admissible corruptions per key
    triples = np.array([
        [0, 0, 1], [0, 0, 2], [1, 0, 3], [2, 0, 4],
        [3, 1, 0], [4, 1, 5], [5, 1, 2],
    ])
    return KnowledgeGraph(entity_count=6, relation_count=2,
                          train=triples, valid=np.array([[1, 0, 5]]),
                          test=np.array([[2, 1, 3]]))


def make_store(kind: str, kg, dim=4, seed=0, dtype=np.float64, **options):
    return init_embeddings(kind, kg, dim, seed, dtype=dtype, **options)


def planted_kg(n_entities=120, n_relations=4, per_relation=400, dim=16,
               seed=0, kind="transe", noise=0.15) -> KnowledgeGraph:
    """A KG realizable by the given scoring function: facts are the model's
    own top-scoring tails for random heads, plus a noise fraction of random
    facts.  Embedding models reach meaningful ranks on it, which random
    triplet soups cannot offer.
    """
    rng = np.random.default_rng(seed)
    ref = KnowledgeGraph(entity_count=n_entities, relation_count=n_relations,
                         train=np.array([[0, 0, 0]]), valid=np.empty((0, 3)),
                         test=np.empty((0, 3)))
    store = init_embeddings(kind, ref, dim, seed + 1, dtype=np.float64)
    model = get_model(kind)
    seen = set()
    rows = []
    for r in range(n_relations):
        heads = rng.integers(0, n_entities, size=per_relation)
        for h in heads:
            if rng.random() < noise:
                t = int(rng.integers(0, n_entities))
            else:
                scores = model.score_all(store, "tail", r, int(h))
                top = np.argsort(-scores)[:3]
                t = int(top[rng.integers(len(top))])
            key = (int(h), r, t)
            if key not in seen:
                seen.add(key)
                rows.append(key)
    arr = np.array(rows, dtype=np.int64)
    rng.shuffle(arr)
    n = len(arr)
    n_train, n_valid = int(n * 0.8), int(n * 0.1)
    return KnowledgeGraph(entity_count=n_entities, relation_count=n_relations,
                          train=arr[:n_train], valid=arr[n_train:n_train + n_valid],
                          test=arr[n_train + n_valid:])
