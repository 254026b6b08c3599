"""Diagnostic data emitters: the gradient-norm tail distribution of all
corruptions of a positive triplet, at chosen checkpoints.
"""
from __future__ import annotations

import numpy as np

from .data import KnowledgeGraph
from .scoring import EmbeddingStore, LossSpec, pair_gradient_batch


def grad_norm_ccdf(store: EmbeddingStore, loss: LossSpec, kg: KnowledgeGraph,
                   triplet, side: str = "tail", chunk: int = 4096):
    """For one positive triplet, compute the pair-gradient L2 norm against
    every corruption on the given side, and return (x, P(norm >= x)) sample
    points with x ascending.  P at x=0 is exactly 1.
    """
    h, r, t = (int(triplet[0]), int(triplet[1]), int(triplet[2]))
    n = kg.entity_count
    norms = np.empty(n)
    pos = np.array([[h, r, t]], dtype=np.int64)
    for start in range(0, n, chunk):
        cand = np.arange(start, min(start + chunk, n), dtype=np.int64)
        neg = np.repeat(pos, len(cand), axis=0)
        if side == "tail":
            neg[:, 2] = cand
        else:
            neg[:, 0] = cand
        pos_rep = np.repeat(pos, len(cand), axis=0)
        _, _, batch_norms, _, _ = pair_gradient_batch(store, loss, pos_rep, neg)
        norms[start:start + len(cand)] = batch_norms
    x = np.unique(norms)
    if x[0] > 0.0:
        x = np.concatenate([[0.0], x])
    # P(norm >= x): count of norms at or above each threshold
    sorted_norms = np.sort(norms)
    ccdf = 1.0 - np.searchsorted(sorted_norms, x, side="left") / n
    return x, ccdf


def write_ccdf_tsv(path: str, x: np.ndarray, ccdf: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("grad_norm\tccdf\n")
        for xi, ci in zip(x, ccdf):
            fh.write(f"{xi:.8g}\t{ci:.8g}\n")
