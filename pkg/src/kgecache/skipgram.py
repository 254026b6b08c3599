"""Graph embedding by biased random walks and a skip-gram objective with
negative sampling, where negatives come from per-node caches instead of a
fixed noise distribution.

Walks follow the second-order rule: from (prev -> cur), the unnormalized
move weight to x is 1/p when x == prev, 1 when x neighbors prev, 1/q
otherwise.  The walk corpus is generated once and fixed, so all training
modes see identical positive pairs.

Every node owns one fixed-size cache of (negative node, score) entries.
Candidates are the nodes outside the owner's corpus co-occurrence window;
refreshes score the union of the old cache and fresh uniform candidates
with the current embeddings and keep a temperature-softmax sample, exactly
like the KG cache.  Setting both cache temperatures to zero reduces to
uniform negative sampling over the same candidate set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .evaluate import f1_scores
from .sampler import EEHyperParams

log = logging.getLogger(__name__)


@dataclass
class WalkConfig:
    walks_per_node: int = 10
    walk_length: int = 40
    window: int = 10
    p: float = 0.25
    q: float = 0.25
    negatives: int = 5
    dim: int = 100
    epochs: int = 5
    lr: float = 1e-3
    weight_decay: float = 1e-7
    chunk_size: int = 8192
    ee: EEHyperParams = field(default_factory=lambda: EEHyperParams(
        alpha1=0.0, alpha2=0.0, alpha3=1.0, n1=50, n2=50, lazy_n=0))

    def __post_init__(self):
        if min(self.walks_per_node, self.walk_length, self.window,
               self.negatives, self.dim, self.epochs) < 1:
            raise ValueError("walk/window/negative/dim/epoch counts must be positive")
        if self.p <= 0 or self.q <= 0:
            raise ValueError("p and q must be positive")


class Graph:
    """Undirected graph as sorted adjacency arrays; optional node labels."""

    def __init__(self, n_nodes: int, edges: np.ndarray,
                 labels: np.ndarray | None = None,
                 node_names: list[str] | None = None):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        edges = edges[edges[:, 0] != edges[:, 1]]  # drop self-loops
        both = np.concatenate([edges, edges[:, ::-1]])
        keys = np.unique(both[:, 0] * n_nodes + both[:, 1])
        self.n_nodes = n_nodes
        self.adjacency = _group_by_owner(keys, n_nodes)
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        self.node_names = node_names

    def degree(self, node: int) -> int:
        return len(self.adjacency[node])

    def has_edge(self, a: int, b: int) -> bool:
        adj = self.adjacency[a]
        i = np.searchsorted(adj, b)
        return i < len(adj) and adj[i] == b


def load_edge_list(path: str, label_path: str | None = None) -> Graph:
    """Edge list "src<TAB>dst" with arbitrary node names, plus an optional
    "node<TAB>class" label file.  Node ids follow first appearance.
    """
    names: dict[str, int] = {}

    def nid(name: str) -> int:
        if name not in names:
            names[name] = len(names)
        return names[name]

    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'src<TAB>dst'")
            edges.append((nid(parts[0]), nid(parts[1])))

    labels = None
    if label_path:
        raw: dict[int, str] = {}
        with open(label_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                parts = line.split("\t") if "\t" in line else line.split()
                raw[nid(parts[0])] = parts[1]
        classes = {c: i for i, c in enumerate(sorted(set(raw.values())))}
        labels = np.full(len(names), -1, dtype=np.int64)
        for node, cls in raw.items():
            labels[node] = classes[cls]

    name_list = [None] * len(names)
    for n, i in names.items():
        name_list[i] = n
    return Graph(len(names), np.array(edges, dtype=np.int64), labels=labels,
                 node_names=name_list)


def generate_walks(graph: Graph, cfg: WalkConfig, seed: int):
    """walks_per_node biased walks from every node; isolated nodes emit
    length-1 walks.  Returns (padded int32 matrix, per-walk lengths).
    """
    rng = np.random.default_rng(seed)
    n_walks = cfg.walks_per_node * graph.n_nodes
    walks = np.full((n_walks, cfg.walk_length), -1, dtype=np.int32)
    lengths = np.ones(n_walks, dtype=np.int64)
    w = 0
    for _ in range(cfg.walks_per_node):
        for start in range(graph.n_nodes):
            walks[w, 0] = start
            cur = start
            prev = -1
            steps = 1
            while steps < cfg.walk_length:
                nbrs = graph.adjacency[cur]
                if len(nbrs) == 0:
                    break
                if prev < 0:
                    nxt = int(nbrs[rng.integers(len(nbrs))])
                else:
                    weights = np.where(
                        nbrs == prev, 1.0 / cfg.p,
                        np.where(_adjacent(graph, prev, nbrs), 1.0, 1.0 / cfg.q))
                    cum = np.cumsum(weights)
                    nxt = int(nbrs[np.searchsorted(cum, rng.random() * cum[-1],
                                                   side="right")])
                walks[w, steps] = nxt
                prev, cur = cur, nxt
                steps += 1
            lengths[w] = steps
            w += 1
    return walks, lengths


def _adjacent(graph: Graph, node: int, candidates: np.ndarray) -> np.ndarray:
    adj = graph.adjacency[node]
    if len(adj) == 0:
        return np.zeros(len(candidates), dtype=bool)
    pos = np.searchsorted(adj, candidates).clip(0, len(adj) - 1)
    return adj[pos] == candidates


def _walk_pairs(walks: np.ndarray, lengths: np.ndarray, window: int):
    """All (center, context) pairs within the window, in corpus order."""
    centers, contexts = [], []
    for offset in range(1, window + 1):
        valid = lengths[:, None] > np.arange(walks.shape[1])[None, :] + offset
        rows, cols = np.nonzero(valid[:, :walks.shape[1] - offset])
        a = walks[rows, cols].astype(np.int64)
        b = walks[rows, cols + offset].astype(np.int64)
        centers.append(a)
        contexts.append(b)
        centers.append(b)  # symmetric: each node is center for the other
        contexts.append(a)
    return np.concatenate(centers), np.concatenate(contexts)


def _group_by_owner(sorted_keys: np.ndarray, n_nodes: int) -> list[np.ndarray]:
    """Split sorted owner*n+other keys into one sorted array per owner."""
    bounds = np.searchsorted(sorted_keys, np.arange(n_nodes + 1) * n_nodes)
    return [sorted_keys[bounds[i]:bounds[i + 1]] % n_nodes for i in range(n_nodes)]


def window_cooccurrents(walks, lengths, window: int, n_nodes: int) -> list[np.ndarray]:
    """Per node: sorted array of nodes seen within the window anywhere in
    the fixed corpus, plus the node itself.  This is the candidate
    exclusion set for its negative cache.
    """
    centers, contexts = _walk_pairs(walks, lengths, window)
    keys = np.unique(centers * n_nodes + contexts)
    grouped = _group_by_owner(keys, n_nodes)
    return [np.unique(np.append(g, node)) for node, g in enumerate(grouped)]


class NodeCaches:
    """Dense per-node caches: one row of candidates and scores per node.

    A node whose exclusion window covers the whole graph has no valid
    negatives; its cache stays empty and its pairs train on the positive
    term alone.
    """

    def __init__(self, n_nodes: int, ee: EEHyperParams,
                 excluded: list[np.ndarray]):
        self.ee = ee
        self.n_nodes = n_nodes
        self.excluded = excluded
        self.cands = np.zeros((n_nodes, ee.n1), dtype=np.int64)
        self.scores = np.zeros((n_nodes, ee.n1))
        self.lengths = np.zeros(n_nodes, dtype=np.int64)

    def _fresh(self, node: int, size: int, rng) -> np.ndarray:
        excl = self.excluded[node]
        if len(excl) >= self.n_nodes:
            return np.empty(0, dtype=np.int64)
        cand = rng.integers(0, self.n_nodes, size=size)
        for _ in range(100):
            pos = np.searchsorted(excl, cand).clip(0, len(excl) - 1)
            bad = excl[pos] == cand
            if not bad.any():
                break
            cand[bad] = rng.integers(0, self.n_nodes, size=int(bad.sum()))
        return cand

    def refresh_all(self, emb_in: np.ndarray, emb_out: np.ndarray, rng) -> None:
        ee = self.ee
        width = ee.n1 + ee.n2
        pool = np.full((self.n_nodes, width), self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            old = self.cands[node, :self.lengths[node]]
            pool[node, :len(old)] = old
            fresh = self._fresh(node, ee.n2, rng)
            pool[node, ee.n1:ee.n1 + len(fresh)] = fresh
        pool.sort(axis=1)
        dup = np.zeros_like(pool, dtype=bool)
        dup[:, 1:] = pool[:, 1:] == pool[:, :-1]
        dup |= pool == self.n_nodes
        order = np.argsort(dup, axis=1, kind="stable")
        pool = np.take_along_axis(pool, order, axis=1)
        lengths = (~dup).sum(axis=1)

        nonempty = np.flatnonzero(lengths)
        self.lengths = np.zeros(self.n_nodes, dtype=np.int64)
        if nonempty.size == 0:
            return
        sub_pool = pool[nonempty]
        scores = np.einsum("nd,nwd->nw", emb_in[nonempty].astype(np.float64),
                           emb_out[np.minimum(sub_pool, self.n_nodes - 1)].astype(np.float64))
        sel, counts = kernels.refresh_select(
            scores, lengths[nonempty], ee.alpha3,
            rng.random((nonempty.size, width)), ee.n1)
        take = np.where(sel >= 0, sel, 0)
        self.cands[nonempty] = np.take_along_axis(sub_pool, take, axis=1)
        self.scores[nonempty] = np.take_along_axis(scores, take, axis=1)
        self.lengths[nonempty] = counts

    def draw(self, centers: np.ndarray, n_draws: int, alpha2: float, rng):
        """Up to n_draws negatives per center (with replacement across
        draws) by softmax(alpha2 * rescaled stored score); centers with an
        empty cache get zero negatives.  Returns (negatives, counts).
        """
        rep = np.repeat(centers, n_draws)
        lens = self.lengths[rep]
        out = np.zeros((len(centers), n_draws), dtype=np.int64)
        ok = lens > 0
        if ok.any():
            picked = kernels.cache_draw(self.scores[rep[ok]], lens[ok], alpha2,
                                        rng.random(int(ok.sum())))
            flat = out.reshape(-1)
            flat[ok] = self.cands[rep[ok], picked]
        counts = np.where(self.lengths[centers] > 0, n_draws, 0)
        return out, counts


@dataclass
class SkipgramResult:
    emb_in: np.ndarray
    emb_out: np.ndarray
    epoch_losses: list[float]

    @property
    def embeddings(self) -> np.ndarray:
        return self.emb_in


def train_skipgram(walks: np.ndarray, lengths: np.ndarray, n_nodes: int,
                   cfg: WalkConfig, seed: int, mode: str = "cache") -> SkipgramResult:
    """Skip-gram with negative sampling over a fixed walk corpus.

    mode="cache" draws negatives from per-node caches on the lazy refresh
    schedule; mode="uniform" draws them uniformly from the same candidate
    sets (the fixed-distribution baseline).
    """
    if mode not in ("cache", "uniform"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (n_nodes + cfg.dim))
    emb_in = rng.uniform(-bound, bound, size=(n_nodes, cfg.dim)).astype(np.float32)
    emb_out = rng.uniform(-bound, bound, size=(n_nodes, cfg.dim)).astype(np.float32)
    m_in = np.zeros(emb_in.shape)
    v_in = np.zeros(emb_in.shape)
    m_out = np.zeros(emb_out.shape)
    v_out = np.zeros(emb_out.shape)

    centers, contexts = _walk_pairs(walks, lengths, cfg.window)
    excluded = window_cooccurrents(walks, lengths, cfg.window, n_nodes)
    caches = NodeCaches(n_nodes, cfg.ee, excluded)

    step = 0
    losses = []
    n_pairs = len(centers)
    for epoch in range(cfg.epochs):
        if mode == "cache" and epoch % (cfg.ee.lazy_n + 1) == 0:
            caches.refresh_all(emb_in, emb_out, rng)
        epoch_loss = 0.0
        for start in range(0, n_pairs, cfg.chunk_size):
            u = centers[start:start + cfg.chunk_size]
            v = contexts[start:start + cfg.chunk_size]
            if mode == "cache":
                negs, counts = caches.draw(u, cfg.negatives, cfg.ee.alpha2, rng)
            else:
                negs, counts = _uniform_negatives(u, cfg.negatives, excluded,
                                                  n_nodes, rng)
            step += 1
            epoch_loss += kernels.sg_chunk_update(
                emb_in, emb_out, m_in, v_in, m_out, v_out,
                u, v, negs, counts, cfg.lr, cfg.weight_decay,
                0.9, 0.999, 1e-8, step)
        losses.append(epoch_loss / n_pairs)
        if not np.isfinite(losses[-1]):
            raise RuntimeError(f"skip-gram loss diverged at epoch {epoch}")
    return SkipgramResult(emb_in=emb_in, emb_out=emb_out, epoch_losses=losses)


def _uniform_negatives(centers, n_draws, excluded, n_nodes, rng):
    """Uniform draws over each center's non-window candidate set."""
    negs = np.zeros((len(centers), n_draws), dtype=np.int64)
    counts = np.full(len(centers), n_draws, dtype=np.int64)
    for i, c in enumerate(centers):
        excl = excluded[c]
        if len(excl) >= n_nodes:
            counts[i] = 0
            continue
        row = rng.integers(0, n_nodes, size=n_draws)
        for _ in range(100):
            pos = np.searchsorted(excl, row).clip(0, len(excl) - 1)
            bad = excl[pos] == row
            if not bad.any():
                break
            row[bad] = rng.integers(0, n_nodes, size=int(bad.sum()))
        negs[i] = row
    return negs, counts


def skipgram_pair_loss(u_vec, v_vec, neg_vecs):
    """Loss of one (center, context) pair with its negatives: softplus
    terms of log sigma(v.u) + sum log sigma(-v_n.u), negated for descent.
    """
    pos = float(np.dot(u_vec, v_vec))
    negs = np.asarray(neg_vecs) @ np.asarray(u_vec)
    return float(np.logaddexp(0.0, -pos) + np.logaddexp(0.0, negs).sum())


def skipgram_pair_grad(u_vec, v_vec, neg_vecs):
    """Analytic gradients of skipgram_pair_loss wrt (u, v, negatives)."""
    u_vec = np.asarray(u_vec, dtype=np.float64)
    v_vec = np.asarray(v_vec, dtype=np.float64)
    neg_vecs = np.asarray(neg_vecs, dtype=np.float64)
    pos = np.dot(u_vec, v_vec)
    neg = neg_vecs @ u_vec
    sig_pos = 1.0 / (1.0 + np.exp(-pos))
    sig_neg = 1.0 / (1.0 + np.exp(-neg))
    g_u = -(1.0 - sig_pos) * v_vec + sig_neg @ neg_vecs
    g_v = -(1.0 - sig_pos) * u_vec
    g_negs = sig_neg[:, None] * u_vec[None, :]
    return g_u, g_v, g_negs


def classify_nodes(embeddings: np.ndarray, labels: np.ndarray,
                   train_fraction: float, seed: int, n_splits: int = 5,
                   l2: float = 1e-4, steps: int = 500, lr: float = 0.5) -> dict:
    """One-vs-rest logistic regression by full-batch gradient descent on a
    labeled fraction, averaged over n_splits random splits.  Returns means
    and standard deviations of micro/macro F1 on the held-out nodes.
    """
    labels = np.asarray(labels, dtype=np.int64)
    mask_known = labels >= 0
    idx_known = np.flatnonzero(mask_known)
    num_classes = int(labels[mask_known].max()) + 1
    micro, macro = [], []
    for split in range(n_splits):
        rng = np.random.default_rng(seed + split)
        perm = rng.permutation(idx_known)
        n_train = max(1, int(round(train_fraction * len(perm))))
        tr, te = perm[:n_train], perm[n_train:]
        if len(te) == 0:
            raise ValueError("train_fraction leaves no evaluation nodes")
        present = np.unique(labels[tr])
        if len(present) < num_classes:
            log.warning("split %d: %d classes absent from the labeled set",
                        split, num_classes - len(present))
        preds = _ovr_logreg_predict(embeddings[tr], labels[tr], embeddings[te],
                                    num_classes, l2, steps, lr)
        mi, ma = f1_scores(preds, labels[te], num_classes)
        micro.append(mi)
        macro.append(ma)
    return {
        "micro_f1_mean": float(np.mean(micro)),
        "micro_f1_std": float(np.std(micro)),
        "macro_f1_mean": float(np.mean(macro)),
        "macro_f1_std": float(np.std(macro)),
        "splits": n_splits,
    }


def _ovr_logreg_predict(x_train, y_train, x_test, num_classes, l2, steps, lr):
    mu = x_train.mean(axis=0)
    sd = x_train.std(axis=0)
    sd[sd == 0] = 1.0
    xtr = np.concatenate([(x_train - mu) / sd, np.ones((len(x_train), 1))], axis=1)
    xte = np.concatenate([(x_test - mu) / sd, np.ones((len(x_test), 1))], axis=1)
    n, d = xtr.shape
    weights = np.zeros((num_classes, d))
    for c in range(num_classes):
        y = np.where(y_train == c, 1.0, -1.0)
        w = weights[c]
        for _ in range(steps):
            z = xtr @ w
            sig = 1.0 / (1.0 + np.exp(y * z))
            grad = -(xtr * (y * sig)[:, None]).mean(axis=0) + 2 * l2 * w
            w -= lr * grad
        weights[c] = w
    return np.argmax(xte @ weights.T, axis=1)
