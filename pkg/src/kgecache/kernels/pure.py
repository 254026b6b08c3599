"""NumPy implementations of the sampling and skip-gram hot kernels.

These are the reference semantics; the compiled extension in ``_core.pyx``
implements the same arithmetic in the same order, so both backends produce
identical results for identical inputs.

All kernels operate on padded row matrices: row ``i`` is valid up to
``lengths[i]`` and padding beyond that is ignored.
"""
from __future__ import annotations

import numpy as np

BACKEND = "pure"


def quantile_bounds(sorted_row: np.ndarray, n: int) -> tuple[float, float]:
    """20th/80th percentile of the first ``n`` sorted values ('lower' rule)."""
    lo = sorted_row[(n - 1) // 5]
    hi = sorted_row[(4 * (n - 1)) // 5]
    return lo, hi


def rescale_rows(scores: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Map each row into [0, 1]: 1 above its 80th percentile, 0 below its
    20th, linear in between.  Degenerate rows (both quantiles equal) map
    to 0.5 everywhere.  Padding positions come out clipped but are never
    read by the callers.
    """
    scores = np.asarray(scores, dtype=np.float64)
    k, width = scores.shape
    cols = np.arange(width)
    padded = np.where(cols[None, :] < lengths[:, None], scores, np.inf)
    order = np.sort(padded, axis=1)
    rows = np.arange(k)
    q_lo = order[rows, (lengths - 1) // 5]
    q_hi = order[rows, (4 * (lengths - 1)) // 5]
    span = q_hi - q_lo
    safe = np.where(span > 0.0, span, 1.0)
    out = np.clip((scores - q_lo[:, None]) / safe[:, None], 0.0, 1.0)
    return np.where((span > 0.0)[:, None], out, 0.5)


def cache_draw(
    scores: np.ndarray,
    lengths: np.ndarray,
    alpha: float,
    uniforms: np.ndarray,
    apply_rescale: bool = True,
) -> np.ndarray:
    """Draw one column index per row with probability softmax(alpha * value).

    ``values`` are the rescaled scores when ``apply_rescale`` is set, the raw
    scores otherwise.  One uniform in [0, 1) is consumed per row.
    """
    scores = np.asarray(scores, dtype=np.float64)
    k, width = scores.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    values = rescale_rows(scores, lengths) if apply_rescale else scores
    cols = np.arange(width)
    valid = cols[None, :] < lengths[:, None]
    masked = np.where(valid, values, -np.inf)
    peak = masked.max(axis=1, keepdims=True)
    shifted = np.where(valid, masked - peak, 0.0)
    weights = np.where(valid, np.exp(alpha * shifted), 0.0)
    cum = np.cumsum(weights, axis=1)
    total = cum[np.arange(k), lengths - 1]
    target = uniforms * total
    idx = (cum < target[:, None]).sum(axis=1)
    return np.minimum(idx, lengths - 1).astype(np.int64)


def refresh_select(
    scores: np.ndarray,
    lengths: np.ndarray,
    alpha: float,
    uniforms: np.ndarray,
    n_select: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``min(n_select, length)`` column indices per row, without
    replacement, with per-draw probability softmax(alpha * rescaled score)
    renormalized over the remaining pool.

    Uses the Gumbel racing form of sequential weighted sampling: perturb
    each value with Gumbel noise and keep the top draws, which follows the
    same distribution.  Returns (indices padded with -1, per-row counts);
    indices are in draw order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    k, width = scores.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    values = rescale_rows(scores, lengths)
    cols = np.arange(width)
    valid = cols[None, :] < lengths[:, None]
    gumbel = -np.log(-np.log(uniforms))
    keys = np.where(valid, alpha * values + gumbel, -np.inf)
    order = np.argsort(-keys, axis=1, kind="stable")
    counts = np.minimum(lengths, n_select)
    take_cols = min(n_select, width)
    out = np.full((k, n_select), -1, dtype=np.int64)
    head = np.arange(take_cols)[None, :] < counts[:, None]
    out[:, :take_cols] = np.where(head, order[:, :take_cols], -1)
    return out, counts


def sg_chunk_update(
    emb_in: np.ndarray,
    emb_out: np.ndarray,
    adam_m_in: np.ndarray,
    adam_v_in: np.ndarray,
    adam_m_out: np.ndarray,
    adam_v_out: np.ndarray,
    centers: np.ndarray,
    contexts: np.ndarray,
    negatives: np.ndarray,
    neg_counts: np.ndarray,
    lr: float,
    l2: float,
    beta1: float,
    beta2: float,
    eps: float,
    step: int,
) -> float:
    """One accumulated skip-gram update on a chunk of (center, context,
    negatives) training pairs, followed by a single bias-corrected Adam step
    on the touched rows.  Pair i uses negatives[i, :neg_counts[i]] (zero is
    allowed: positive term only).  Returns the summed chunk loss.
    """
    u = emb_in[centers].astype(np.float64)
    v = emb_out[contexts].astype(np.float64)
    vn = emb_out[negatives].astype(np.float64)
    valid = np.arange(negatives.shape[1])[None, :] < np.asarray(neg_counts)[:, None]

    pos_dot = np.einsum("bd,bd->b", u, v)
    neg_dot = np.einsum("bd,bnd->bn", u, vn)
    loss = float(np.logaddexp(0.0, -pos_dot).sum()
                 + np.logaddexp(0.0, neg_dot[valid]).sum())

    pos_sig = _sigmoid(pos_dot)
    neg_sig = np.where(valid, _sigmoid(neg_dot), 0.0)
    g_u = -(1.0 - pos_sig)[:, None] * v + np.einsum("bn,bnd->bd", neg_sig, vn)
    g_v = -(1.0 - pos_sig)[:, None] * u
    g_vn = (neg_sig[:, :, None] * u[:, None, :])[valid]

    _adam_rows(emb_in, adam_m_in, adam_v_in, centers, g_u,
               lr, l2, beta1, beta2, eps, step)
    out_rows = np.concatenate([contexts, negatives[valid]])
    out_grads = np.concatenate([g_v, g_vn])
    _adam_rows(emb_out, adam_m_out, adam_v_out, out_rows, out_grads,
               lr, l2, beta1, beta2, eps, step)
    return loss


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _adam_rows(param, adam_m, adam_v, rows, grads, lr, l2, beta1, beta2, eps, step):
    """Accumulate duplicate-row gradients, add the L2 term once per distinct
    row, and apply one bias-corrected Adam update to those rows.
    """
    uniq, inverse = np.unique(rows, return_inverse=True)
    acc = np.zeros((uniq.size, param.shape[1]), dtype=np.float64)
    np.add.at(acc, inverse, grads)
    acc += 2.0 * l2 * param[uniq]

    m = beta1 * adam_m[uniq] + (1.0 - beta1) * acc
    v = beta2 * adam_v[uniq] + (1.0 - beta2) * acc * acc
    adam_m[uniq] = m
    adam_v[uniq] = v
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    param[uniq] -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)
