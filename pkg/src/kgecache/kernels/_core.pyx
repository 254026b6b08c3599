# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the kernels in ``pure.py``.

Same formulas on the same inputs: the sampling kernels reproduce the
fallback's draws exactly; the skip-gram kernel matches up to float
summation order.  The win is fusing the per-row loops.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, log, sqrt

cnp.import_array()

BACKEND = "compiled"


cdef void _sort_prefix(double* buf, Py_ssize_t n) noexcept nogil:
    _qsort(buf, 0, n - 1)


cdef void _qsort(double* a, Py_ssize_t lo, Py_ssize_t hi) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double pivot, tmp, key
    while lo < hi:
        if hi - lo < 16:
            for i in range(lo + 1, hi + 1):
                key = a[i]
                j = i - 1
                while j >= lo and a[j] > key:
                    a[j + 1] = a[j]
                    j -= 1
                a[j + 1] = key
            return
        pivot = a[lo + (hi - lo) // 2]
        i = lo
        j = hi
        while i <= j:
            while a[i] < pivot:
                i += 1
            while a[j] > pivot:
                j -= 1
            if i <= j:
                tmp = a[i]; a[i] = a[j]; a[j] = tmp
                i += 1
                j -= 1
        # recurse into the smaller side, loop on the larger
        if j - lo < hi - i:
            _qsort(a, lo, j)
            lo = i
        else:
            _qsort(a, i, hi)
            hi = j


cdef void _argsort_desc(double* keys, cnp.int64_t* idx, Py_ssize_t lo,
                        Py_ssize_t hi) noexcept nogil:
    # sorts keys descending, carrying idx along; ties keep lower idx first
    # because the comparison is strict and partitioning preserves scan order
    cdef Py_ssize_t i, j
    cdef double pivot, tk
    cdef cnp.int64_t ti
    while lo < hi:
        if hi - lo < 16:
            for i in range(lo + 1, hi + 1):
                tk = keys[i]
                ti = idx[i]
                j = i - 1
                while j >= lo and keys[j] < tk:
                    keys[j + 1] = keys[j]
                    idx[j + 1] = idx[j]
                    j -= 1
                keys[j + 1] = tk
                idx[j + 1] = ti
            return
        pivot = keys[lo + (hi - lo) // 2]
        i = lo
        j = hi
        while i <= j:
            while keys[i] > pivot:
                i += 1
            while keys[j] < pivot:
                j -= 1
            if i <= j:
                tk = keys[i]; keys[i] = keys[j]; keys[j] = tk
                ti = idx[i]; idx[i] = idx[j]; idx[j] = ti
                i += 1
                j -= 1
        if j - lo < hi - i:
            _argsort_desc(keys, idx, lo, j)
            lo = i
        else:
            _argsort_desc(keys, idx, i, hi)
            hi = j


cdef inline void _rescale_row(const double* row, Py_ssize_t n, double* scratch,
                              double* out) noexcept nogil:
    cdef Py_ssize_t i
    cdef double q_lo, q_hi, span, val
    for i in range(n):
        scratch[i] = row[i]
    _sort_prefix(scratch, n)
    q_lo = scratch[(n - 1) // 5]
    q_hi = scratch[(4 * (n - 1)) // 5]
    span = q_hi - q_lo
    if span > 0.0:
        for i in range(n):
            val = (row[i] - q_lo) / span
            if val < 0.0:
                val = 0.0
            elif val > 1.0:
                val = 1.0
            out[i] = val
    else:
        for i in range(n):
            out[i] = 0.5


def rescale_rows(scores, lengths):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] lens = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef Py_ssize_t k = s.shape[0], width = s.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((k, width), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scratch = np.empty(width, dtype=np.float64)
    cdef Py_ssize_t i
    for i in range(k):
        _rescale_row(&s[i, 0], lens[i], &scratch[0], &out[i, 0])
    return out


def cache_draw(scores, lengths, double alpha, uniforms, bint apply_rescale=True):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] lens = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t k = s.shape[0], width = s.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(k, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vals = np.empty(width, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scratch = np.empty(width, dtype=np.float64)
    cdef Py_ssize_t i, j, n, idx
    cdef double peak, total, target, cum
    for i in range(k):
        n = lens[i]
        if apply_rescale:
            _rescale_row(&s[i, 0], n, &scratch[0], &vals[0])
        else:
            for j in range(n):
                vals[j] = s[i, j]
        peak = vals[0]
        for j in range(1, n):
            if vals[j] > peak:
                peak = vals[j]
        total = 0.0
        for j in range(n):
            vals[j] = exp(alpha * (vals[j] - peak))
            total += vals[j]
        target = u[i] * total
        cum = 0.0
        idx = n - 1
        for j in range(n):
            cum += vals[j]
            if cum >= target:
                idx = j
                break
        out[i] = idx
    return out


def refresh_select(scores, lengths, double alpha, uniforms, Py_ssize_t n_select):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] lens = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t k = s.shape[0], width = s.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.full((k, n_select), -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.empty(k, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] keys = np.empty(width, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vals = np.empty(width, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scratch = np.empty(width, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.empty(width, dtype=np.int64)
    cdef Py_ssize_t i, j, m, n
    for i in range(k):
        n = lens[i]
        _rescale_row(&s[i, 0], n, &scratch[0], &vals[0])
        for j in range(n):
            keys[j] = alpha * vals[j] - log(-log(u[i, j]))
            order[j] = j
        m = n_select if n_select < n else n
        counts[i] = m
        _argsort_desc(&keys[0], &order[0], 0, n - 1)
        for j in range(m):
            out[i, j] = order[j]
    return out, counts


def sg_chunk_update(emb_in, emb_out,
                    adam_m_in, adam_v_in, adam_m_out, adam_v_out,
                    centers, contexts, negatives, neg_counts,
                    double lr, double l2, double beta1, double beta2,
                    double eps, long step):
    cdef cnp.ndarray[cnp.float32_t, ndim=2] w_in = emb_in
    cdef cnp.ndarray[cnp.float32_t, ndim=2] w_out = emb_out
    cdef cnp.ndarray[cnp.float64_t, ndim=2] m_in = adam_m_in
    cdef cnp.ndarray[cnp.float64_t, ndim=2] v_in = adam_v_in
    cdef cnp.ndarray[cnp.float64_t, ndim=2] m_out = adam_m_out
    cdef cnp.ndarray[cnp.float64_t, ndim=2] v_out = adam_v_out
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cen = np.ascontiguousarray(centers, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ctx = np.ascontiguousarray(contexts, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] neg = np.ascontiguousarray(negatives, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cnt = np.ascontiguousarray(neg_counts, dtype=np.int64)
    cdef Py_ssize_t b = cen.shape[0], n_neg = neg.shape[1], d = w_in.shape[1]

    valid = np.arange(n_neg)[None, :] < np.asarray(cnt)[:, None]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] uniq_in, uniq_out, inv_in, inv_out
    uniq_in, inv_in = _unique_inverse(cen)
    out_rows = np.concatenate([ctx, neg[valid]])
    uniq_out, inv_out = _unique_inverse(out_rows)

    cdef cnp.ndarray[cnp.float64_t, ndim=2] acc_in = np.zeros((uniq_in.shape[0], d))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] acc_out = np.zeros((uniq_out.shape[0], d))
    cdef cnp.ndarray[cnp.int64_t, ndim=1] inv_in_v = inv_in
    cdef cnp.ndarray[cnp.int64_t, ndim=1] inv_out_v = inv_out

    cdef double loss = 0.0, dot, sig, coeff
    cdef Py_ssize_t i, j, q, ui, uo, row, vpos = 0
    for i in range(b):
        ui = inv_in_v[i]
        row = ctx[i]
        dot = 0.0
        for q in range(d):
            dot += <double>w_in[cen[i], q] * <double>w_out[row, q]
        loss += _softplus(-dot)
        sig = _sigmoid_c(dot)
        coeff = -(1.0 - sig)
        uo = inv_out_v[i]
        for q in range(d):
            acc_in[ui, q] += coeff * <double>w_out[row, q]
            acc_out[uo, q] += coeff * <double>w_in[cen[i], q]
        for j in range(cnt[i]):
            row = neg[i, j]
            dot = 0.0
            for q in range(d):
                dot += <double>w_in[cen[i], q] * <double>w_out[row, q]
            loss += _softplus(dot)
            sig = _sigmoid_c(dot)
            uo = inv_out_v[b + vpos]
            vpos += 1
            for q in range(d):
                acc_in[ui, q] += sig * <double>w_out[row, q]
                acc_out[uo, q] += sig * <double>w_in[cen[i], q]

    _adam_apply(w_in, m_in, v_in, uniq_in, acc_in, lr, l2, beta1, beta2, eps, step)
    _adam_apply(w_out, m_out, v_out, uniq_out, acc_out, lr, l2, beta1, beta2, eps, step)
    return loss


cdef inline double _softplus(double x) noexcept nogil:
    if x > 0:
        return x + log(1.0 + exp(-x))
    return log(1.0 + exp(x))


cdef inline double _sigmoid_c(double x) noexcept nogil:
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    return exp(x) / (1.0 + exp(x))


def _unique_inverse(rows):
    uniq, inv = np.unique(rows, return_inverse=True)
    return uniq.astype(np.int64), inv.astype(np.int64)


cdef void _adam_apply(cnp.ndarray[cnp.float32_t, ndim=2] param,
                      cnp.ndarray[cnp.float64_t, ndim=2] adam_m,
                      cnp.ndarray[cnp.float64_t, ndim=2] adam_v,
                      cnp.ndarray[cnp.int64_t, ndim=1] rows,
                      cnp.ndarray[cnp.float64_t, ndim=2] grads,
                      double lr, double l2, double beta1, double beta2,
                      double eps, long step):
    cdef Py_ssize_t n = rows.shape[0], d = param.shape[1]
    cdef double bc1 = 1.0 - beta1 ** step
    cdef double bc2 = 1.0 - beta2 ** step
    cdef Py_ssize_t i, q, r
    cdef double g, m, v
    for i in range(n):
        r = rows[i]
        for q in range(d):
            g = grads[i, q] + 2.0 * l2 * <double>param[r, q]
            m = beta1 * adam_m[r, q] + (1.0 - beta1) * g
            v = beta2 * adam_v[r, q] + (1.0 - beta2) * g * g
            adam_m[r, q] = m
            adam_v[r, q] = v
            param[r, q] -= <float>(lr * (m / bc1) / (sqrt(v / bc2) + eps))
