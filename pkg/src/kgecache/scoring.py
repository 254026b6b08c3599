"""Embedding storage, scoring functions, losses, and analytic gradients.

Seven scoring functions are implemented (transe, transh, transd, distmult,
complex, simple, rotate).  Higher score always means more plausible;
translational scores are negated L1 distances.  Gradients are hand-derived
closed forms, verified against central finite differences in the tests.

Complex-valued models store each complex vector as a real array of length
2d, real parts first.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"KGEC"
CHECKPOINT_VERSION = 1


class ScoringError(ValueError):
    pass


@dataclass
class LossSpec:
    """Pairwise training loss: margin ranking with margin > 0, or logistic
    with +/-1 labels.  l2 penalizes every embedding row a pair touches.
    """

    kind: str = "margin"
    margin: float = 1.0
    l2: float = 0.0

    def __post_init__(self):
        if self.kind not in ("margin", "logistic"):
            raise ScoringError(f"unknown loss kind {self.kind!r}")
        if self.kind == "margin" and self.margin <= 0:
            raise ScoringError("margin must be positive")
        if self.l2 < 0:
            raise ScoringError("l2 penalty must be nonnegative")


@dataclass
class EmbeddingStore:
    kind: str
    dim: int
    entity_count: int
    relation_count: int
    matrices: dict[str, np.ndarray]
    options: dict = field(default_factory=dict)

    def copy(self) -> "EmbeddingStore":
        return EmbeddingStore(
            kind=self.kind, dim=self.dim, entity_count=self.entity_count,
            relation_count=self.relation_count,
            matrices={k: v.copy() for k, v in self.matrices.items()},
            options=dict(self.options),
        )

    def astype(self, dtype) -> "EmbeddingStore":
        out = self.copy()
        out.matrices = {k: v.astype(dtype) for k, v in out.matrices.items()}
        return out


def _sign(x: np.ndarray) -> np.ndarray:
    # L1 subgradient with sign(0) = 0 for determinism
    return np.sign(x)


def _split(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = x.shape[-1] // 2
    return x[..., :d], x[..., d:]


class _Model:
    """One scoring function: matrix layout, batched scores, per-row score
    gradients ("slots"), and all-candidate scoring for ranking.
    """

    name: str

    def matrix_specs(self, n_ent: int, n_rel: int, dim: int) -> dict[str, tuple[int, int]]:
        raise NotImplementedError

    def score(self, store, h, r, t) -> np.ndarray:
        raise NotImplementedError

    def slots(self, store, h, r, t):
        """Return (scores, [(matrix, rows, d_score/d_row), ...]).

        Slot index arrays may repeat rows; callers combine duplicates.
        """
        raise NotImplementedError

    def score_all(self, store, side: str, r: int, e: int) -> np.ndarray:
        """Scores of every entity substituted on `side`, with the other
        entity `e` and relation `r` fixed.
        """
        raise NotImplementedError


class TransE(_Model):
    name = "transe"

    def matrix_specs(self, n_ent, n_rel, dim):
        return {"ent": (n_ent, dim), "rel": (n_rel, dim)}

    def _diff(self, store, h, r, t):
        m = store.matrices
        return m["ent"][h] + m["rel"][r] - m["ent"][t]

    def score(self, store, h, r, t):
        return -np.abs(self._diff(store, h, r, t)).sum(axis=-1)

    def slots(self, store, h, r, t):
        u = self._diff(store, h, r, t)
        s = _sign(u)
        return -np.abs(u).sum(axis=-1), [
            ("ent", h, -s), ("rel", r, -s), ("ent", t, s.copy())]

    def score_all(self, store, side, r, e):
        m = store.matrices
        if side == "head":
            v = m["rel"][r] - m["ent"][e]
            return -np.abs(m["ent"] + v).sum(axis=1)
        v = m["ent"][e] + m["rel"][r]
        return -np.abs(v - m["ent"]).sum(axis=1)


class TransH(_Model):
    name = "transh"

    def matrix_specs(self, n_ent, n_rel, dim):
        return {"ent": (n_ent, dim), "rel": (n_rel, dim), "w_rel": (n_rel, dim)}

    def score(self, store, h, r, t):
        m = store.matrices
        w = m["w_rel"][r]
        eh, et = m["ent"][h], m["ent"][t]
        ph = eh - (eh * w).sum(-1, keepdims=True) * w
        pt = et - (et * w).sum(-1, keepdims=True) * w
        return -np.abs(ph + m["rel"][r] - pt).sum(axis=-1)

    def slots(self, store, h, r, t):
        m = store.matrices
        w = m["w_rel"][r]
        eh, et = m["ent"][h], m["ent"][t]
        ph = eh - (eh * w).sum(-1, keepdims=True) * w
        pt = et - (et * w).sum(-1, keepdims=True) * w
        u = ph + m["rel"][r] - pt
        s = _sign(u)
        sw = (s * w).sum(-1, keepdims=True)
        diff = eh - et
        g_w = sw * diff + (w * diff).sum(-1, keepdims=True) * s
        return -np.abs(u).sum(axis=-1), [
            ("ent", h, -s + sw * w),
            ("ent", t, s - sw * w),
            ("rel", r, -s),
            ("w_rel", r, g_w),
        ]

    def score_all(self, store, side, r, e):
        m = store.matrices
        w = m["w_rel"][r]
        ents = m["ent"]
        proj = ents - (ents @ w)[:, None] * w
        pe = m["ent"][e] - (m["ent"][e] * w).sum() * w
        if side == "head":
            return -np.abs(proj + (m["rel"][r] - pe)).sum(axis=1)
        return -np.abs((pe + m["rel"][r]) - proj).sum(axis=1)


class TransD(_Model):
    name = "transd"

    def matrix_specs(self, n_ent, n_rel, dim):
        return {"ent": (n_ent, dim), "rel": (n_rel, dim),
                "w_ent": (n_ent, dim), "w_rel": (n_rel, dim)}

    def score(self, store, h, r, t):
        m = store.matrices
        wr = m["w_rel"][r]
        eh, et = m["ent"][h], m["ent"][t]
        ph = eh + (m["w_ent"][h] * eh).sum(-1, keepdims=True) * wr
        pt = et + (m["w_ent"][t] * et).sum(-1, keepdims=True) * wr
        return -np.abs(ph + m["rel"][r] - pt).sum(axis=-1)

    def slots(self, store, h, r, t):
        m = store.matrices
        wr = m["w_rel"][r]
        eh, et = m["ent"][h], m["ent"][t]
        wh, wt = m["w_ent"][h], m["w_ent"][t]
        dh = (wh * eh).sum(-1, keepdims=True)
        dt = (wt * et).sum(-1, keepdims=True)
        u = eh + dh * wr + m["rel"][r] - et - dt * wr
        s = _sign(u)
        swr = (s * wr).sum(-1, keepdims=True)
        return -np.abs(u).sum(axis=-1), [
            ("ent", h, -(s + swr * wh)),
            ("ent", t, s + swr * wt),
            ("rel", r, -s),
            ("w_rel", r, -(dh - dt) * s),
            ("w_ent", h, -swr * eh),
            ("w_ent", t, swr * et),
        ]

    def score_all(self, store, side, r, e):
        m = store.matrices
        wr = m["w_rel"][r]
        ents, w_ents = m["ent"], m["w_ent"]
        proj = ents + (w_ents * ents).sum(axis=1)[:, None] * wr
        pe = m["ent"][e] + (m["w_ent"][e] * m["ent"][e]).sum() * wr
        if side == "head":
            return -np.abs(proj + (m["rel"][r] - pe)).sum(axis=1)
        return -np.abs((pe + m["rel"][r]) - proj).sum(axis=1)


class DistMult(_Model):
    name = "distmult"

    def matrix_specs(self, n_ent, n_rel, dim):
        return {"ent": (n_ent, dim), "rel": (n_rel, dim)}

    def score(self, store, h, r, t):
        m = store.matrices
        return (m["ent"][h] * m["rel"][r] * m["ent"][t]).sum(axis=-1)

    def slots(self, store, h, r, t):
        m = store.matrices
        eh, rr, et = m["ent"][h], m["rel"][r], m["ent"][t]
        return (eh * rr * et).sum(axis=-1), [
            ("ent", h, rr * et), ("rel", r, eh * et), ("ent", t, eh * rr)]

    def score_all(self, store, side, r, e):
        m = store.matrices
        return m["ent"] @ (m["rel"][r] * m["ent"][e])


class ComplEx(_Model):
    name = "complex"

    def matrix_specs(self, n_ent, n_rel, dim):
        return {"ent": (n_ent, 2 * dim), "rel": (n_rel, 2 * dim)}

    def score(self, store, h, r, t):
        m = store.matrices
        a, b = _split(m["ent"][h])
        c, d = _split(m["rel"][r])
        u, v = _split(m["ent"][t])
        return ((a * c - b * d) * u + (a * d + b * c) * v).sum(axis=-1)

    def slots(self, store, h, r, t):
        m = store.matrices
        a, b = _split(m["ent"][h])
        c, d = _split(m["rel"][r])
        u, v = _split(m["ent"][t])
        score = ((a * c - b * d) * u + (a * d + b * c) * v).sum(axis=-1)
        g_h = np.concatenate([c * u + d * v, -d * u + c * v], axis=-1)
        g_r = np.concatenate([a * u + b * v, -b * u + a * v], axis=-1)
        g_t = np.concatenate([a * c - b * d, a * d + b * c], axis=-1)
        return score, [("ent", h, g_h), ("rel", r, g_r), ("ent", t, g_t)]

    def score_all(self, store, side, r, e):
        m = store.matrices
        c, d = _split(m["rel"][r])
        e_re, e_im = _split(m["ent"][e])
        all_re, all_im = _split(m["ent"])
        if side == "tail":
            return all_re @ (e_re * c - e_im * d) + all_im @ (e_re * d + e_im * c)
        return all_re @ (c * e_re + d * e_im) + all_im @ (c * e_im - d * e_re)


class SimplE(_Model):
    """Two-term bilinear model; `average=True` halves the sum (a common
    stabilization), default is the plain sum.
    """

    name = "simple"

    def __init__(self, average: bool = False):
        self.scale = 0.5 if average else 1.0

    def matrix_specs(self, n_ent, n_rel, dim):
        return {"ent1": (n_ent, dim), "ent2": (n_ent, dim),
                "rel1": (n_rel, dim), "rel2": (n_rel, dim)}

    def score(self, store, h, r, t):
        m = store.matrices
        t1 = (m["ent1"][h] * m["rel1"][r] * m["ent2"][t]).sum(axis=-1)
        t2 = (m["ent2"][h] * m["rel2"][r] * m["ent1"][t]).sum(axis=-1)
        return self.scale * (t1 + t2)

    def slots(self, store, h, r, t):
        m = store.matrices
        h1, h2 = m["ent1"][h], m["ent2"][h]
        r1, r2 = m["rel1"][r], m["rel2"][r]
        t1, t2 = m["ent1"][t], m["ent2"][t]
        score = self.scale * ((h1 * r1 * t2).sum(axis=-1) + (h2 * r2 * t1).sum(axis=-1))
        s = self.scale
        return score, [
            ("ent1", h, s * r1 * t2), ("rel1", r, s * h1 * t2), ("ent2", t, s * h1 * r1),
            ("ent2", h, s * r2 * t1), ("rel2", r, s * h2 * t1), ("ent1", t, s * h2 * r2),
        ]

    def score_all(self, store, side, r, e):
        m = store.matrices
        if side == "tail":
            part = m["ent2"] @ (m["ent1"][e] * m["rel1"][r])
            part += m["ent1"] @ (m["ent2"][e] * m["rel2"][r])
        else:
            part = m["ent1"] @ (m["rel1"][r] * m["ent2"][e])
            part += m["ent2"] @ (m["rel2"][r] * m["ent1"][e])
        return self.scale * part


class RotatE(_Model):
    """Complex Hadamard rotation; L1 norm over complex moduli."""

    name = "rotate"

    def matrix_specs(self, n_ent, n_rel, dim):
        return {"ent": (n_ent, 2 * dim), "rel": (n_rel, 2 * dim)}

    def _parts(self, store, h, r, t):
        m = store.matrices
        a, b = _split(m["ent"][h])
        c, d = _split(m["rel"][r])
        u, v = _split(m["ent"][t])
        z_re = a * c - b * d - u
        z_im = a * d + b * c - v
        mod = np.sqrt(z_re * z_re + z_im * z_im)
        return a, b, c, d, z_re, z_im, mod

    def score(self, store, h, r, t):
        return -self._parts(store, h, r, t)[-1].sum(axis=-1)

    def slots(self, store, h, r, t):
        a, b, c, d, z_re, z_im, mod = self._parts(store, h, r, t)
        safe = np.where(mod > 0, mod, 1.0)
        g_re = np.where(mod > 0, z_re / safe, 0.0)
        g_im = np.where(mod > 0, z_im / safe, 0.0)
        g_h = np.concatenate([-(g_re * c + g_im * d), g_re * d - g_im * c], axis=-1)
        g_r = np.concatenate([-(g_re * a + g_im * b), g_re * b - g_im * a], axis=-1)
        g_t = np.concatenate([g_re, g_im], axis=-1)
        return -mod.sum(axis=-1), [("ent", h, g_h), ("rel", r, g_r), ("ent", t, g_t)]

    def score_all(self, store, side, r, e):
        m = store.matrices
        c, d = _split(m["rel"][r])
        e_re, e_im = _split(m["ent"][e])
        all_re, all_im = _split(m["ent"])
        if side == "tail":
            z_re = e_re * c - e_im * d - all_re
            z_im = e_re * d + e_im * c - all_im
        else:
            z_re = all_re * c - all_im * d - e_re
            z_im = all_re * d + all_im * c - e_im
        return -np.sqrt(z_re * z_re + z_im * z_im).sum(axis=1)


MODEL_KINDS = ("transe", "transh", "transd", "distmult", "complex", "simple", "rotate")


def get_model(kind: str, simple_average: bool = False) -> _Model:
    if kind == "simple":
        return SimplE(average=simple_average)
    try:
        cls = {"transe": TransE, "transh": TransH, "transd": TransD,
               "distmult": DistMult, "complex": ComplEx, "rotate": RotatE}[kind]
    except KeyError:
        raise ScoringError(f"unknown scoring function {kind!r}") from None
    return cls()


def init_embeddings(kind: str, kg, dim: int, seed: int,
                    dtype=np.float32, **options) -> EmbeddingStore:
    """Xavier-uniform initialization of every matrix, deterministic per
    seed; TransH relation normals are unit-normalized.
    """
    if dim <= 0:
        raise ScoringError("dim must be positive")
    model = get_model(kind, **options)
    rng = np.random.default_rng(seed)
    matrices = {}
    for name, (rows, cols) in model.matrix_specs(kg.entity_count, kg.relation_count, dim).items():
        bound = np.sqrt(6.0 / (rows + cols))
        matrices[name] = rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)
    if kind == "transh":
        w = matrices["w_rel"]
        matrices["w_rel"] = (w / np.linalg.norm(w, axis=1, keepdims=True)).astype(dtype)
    return EmbeddingStore(kind=kind, dim=dim, entity_count=kg.entity_count,
                          relation_count=kg.relation_count, matrices=matrices,
                          options=dict(options))


def score_triplets(store: EmbeddingStore, h, r, t, model: _Model | None = None) -> np.ndarray:
    model = model or get_model(store.kind, **store.options)
    return model.score(store, np.asarray(h), np.asarray(r), np.asarray(t))


def score(store: EmbeddingStore, triplet) -> float:
    h, r, t = (int(x) for x in (triplet.head, triplet.relation, triplet.tail)) \
        if hasattr(triplet, "head") else (int(triplet[0]), int(triplet[1]), int(triplet[2]))
    return float(score_triplets(store, [h], [r], [t])[0])


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def pair_loss(pos_score, neg_score, loss: LossSpec):
    """Margin: max(0, margin - pos + neg).  Logistic: softplus(-pos) +
    softplus(neg), the label form log(1+exp(-y f)); overflow-safe.
    """
    pos_score = np.asarray(pos_score, dtype=np.float64)
    neg_score = np.asarray(neg_score, dtype=np.float64)
    if loss.kind == "margin":
        return np.maximum(0.0, loss.margin - pos_score + neg_score)
    return softplus(-pos_score) + softplus(neg_score)


def _loss_factors(pos_score, neg_score, loss: LossSpec):
    """d pair_loss / d pos_score and d pair_loss / d neg_score."""
    if loss.kind == "margin":
        active = (loss.margin - pos_score + neg_score) > 0.0
        d = active.astype(np.float64)
        return -d, d
    return -sigmoid(-pos_score), sigmoid(neg_score)


def pair_gradient_batch(store: EmbeddingStore, loss: LossSpec,
                        pos: np.ndarray, neg: np.ndarray,
                        model: _Model | None = None):
    """Gradients of pair_loss + l2 over the rows each pair touches.

    Returns (grads, losses, norms, pos_scores, neg_scores) where grads maps
    matrix name -> (row indices, summed gradient rows) with duplicates
    combined, and norms[i] is the L2 norm of pair i's full gradient.
    """
    model = model or get_model(store.kind, **store.options)
    pos = np.asarray(pos).reshape(-1, 3)
    neg = np.asarray(neg).reshape(-1, 3)
    m = pos.shape[0]
    pos_scores, pos_slots = model.slots(store, pos[:, 0], pos[:, 1], pos[:, 2])
    neg_scores, neg_slots = model.slots(store, neg[:, 0], neg[:, 1], neg[:, 2])
    losses = pair_loss(pos_scores, neg_scores, loss)
    d_pos, d_neg = _loss_factors(pos_scores, neg_scores, loss)

    by_matrix: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {}
    for factor, slots in ((d_pos, pos_slots), (d_neg, neg_slots)):
        for name, idx, g in slots:
            by_matrix.setdefault(name, []).append(
                (np.asarray(idx, dtype=np.int64), factor[:, None] * g))

    grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    norms_sq = np.zeros(m)
    for name, entries in by_matrix.items():
        mat = store.matrices[name]
        idx_all = np.concatenate([np.broadcast_to(i, (m,)) for i, _ in entries])
        g_all = np.concatenate([g for _, g in entries], axis=0)
        pair_all = np.tile(np.arange(m), len(entries))
        # combine duplicate rows within each pair
        key = pair_all * mat.shape[0] + idx_all
        order = np.argsort(key, kind="stable")
        key_s, g_s = key[order], g_all[order]
        starts = np.flatnonzero(np.concatenate([[True], key_s[1:] != key_s[:-1]]))
        g_group = np.add.reduceat(g_s, starts, axis=0)
        key_group = key_s[starts]
        pair_group = key_group // mat.shape[0]
        idx_group = key_group % mat.shape[0]
        if loss.l2:
            g_group = g_group + 2.0 * loss.l2 * mat[idx_group]
        norms_sq += np.bincount(pair_group, weights=(g_group * g_group).sum(axis=1),
                                minlength=m)
        uniq, inverse = np.unique(idx_group, return_inverse=True)
        acc = np.zeros((uniq.size, mat.shape[1]))
        np.add.at(acc, inverse, g_group)
        grads[name] = (uniq, acc)
    return grads, losses, np.sqrt(norms_sq), pos_scores, neg_scores


def pair_gradient(store: EmbeddingStore, loss: LossSpec, pos_triplet, neg_triplet,
                  model: _Model | None = None):
    """Single-pair convenience wrapper; returns (grads, gradient_norm)."""
    pos = np.asarray(pos_triplet, dtype=np.int64).reshape(1, 3)
    neg = np.asarray(neg_triplet, dtype=np.int64).reshape(1, 3)
    grads, _, norms, _, _ = pair_gradient_batch(store, loss, pos, neg, model=model)
    return grads, float(norms[0])


def pair_objective(store: EmbeddingStore, loss: LossSpec, pos_triplet, neg_triplet,
                   model: _Model | None = None) -> float:
    """pair_loss plus the l2 penalty over the distinct touched rows; the
    scalar whose gradient pair_gradient returns (finite-difference hook).
    """
    model = model or get_model(store.kind, **store.options)
    pos = np.asarray(pos_triplet, dtype=np.int64).reshape(1, 3)
    neg = np.asarray(neg_triplet, dtype=np.int64).reshape(1, 3)
    p = model.score(store, pos[:, 0], pos[:, 1], pos[:, 2])
    n = model.score(store, neg[:, 0], neg[:, 1], neg[:, 2])
    total = float(pair_loss(p, n, loss)[0])
    if loss.l2:
        touched = set()
        for arr in (pos, neg):
            _, slots = model.slots(store, arr[:, 0], arr[:, 1], arr[:, 2])
            for name, idx, _ in slots:
                touched.add((name, int(idx[0])))
        for name, i in touched:
            row = store.matrices[name][i]
            total += loss.l2 * float((row * row).sum())
    return total


def score_all(store: EmbeddingStore, side: str, r: int, e: int,
              model: _Model | None = None) -> np.ndarray:
    if side not in ("head", "tail"):
        raise ScoringError(f"side must be 'head' or 'tail', got {side!r}")
    model = model or get_model(store.kind, **store.options)
    return model.score_all(store, side, int(r), int(e))


def normalize_rows(store: EmbeddingStore, name: str, rows=None) -> None:
    """Renormalize (a subset of) a matrix's rows to unit L2 length."""
    mat = store.matrices[name]
    if rows is None:
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        np.divide(mat, np.where(norms > 0, norms, 1.0), out=mat)
    else:
        sub = mat[rows]
        norms = np.linalg.norm(sub, axis=1, keepdims=True)
        mat[rows] = sub / np.where(norms > 0, norms, 1.0)


def save_checkpoint(store: EmbeddingStore, path: str, meta: dict | None = None) -> None:
    """Self-describing binary: magic, version, kind, counts, dims, then the
    matrices row-major little-endian float32 in declared order.  A JSON
    sidecar carries run metadata.  Writes are atomic (temp + rename).
    """
    model = get_model(store.kind, **store.options)
    specs = model.matrix_specs(store.entity_count, store.relation_count, store.dim)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        kind_b = store.kind.encode()
        fh.write(struct.pack("<H", len(kind_b)))
        fh.write(kind_b)
        fh.write(struct.pack("<III", store.entity_count, store.relation_count, store.dim))
        fh.write(struct.pack("<H", len(specs)))
        for name, (rows, cols) in specs.items():
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<II", rows, cols))
        for name in specs:
            arr = np.ascontiguousarray(store.matrices[name], dtype="<f4")
            fh.write(arr.tobytes())
    os.replace(tmp, path)

    sidecar = dict(meta or {})
    sidecar.setdefault("kind", store.kind)
    sidecar.setdefault("dim", store.dim)
    sidecar["options"] = store.options
    tmp_meta = path + ".meta.json.tmp"
    with open(tmp_meta, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp_meta, path + ".meta.json")


def load_checkpoint(path: str) -> tuple[EmbeddingStore, dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ScoringError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != CHECKPOINT_VERSION:
            raise ScoringError(f"{path}: unsupported checkpoint version {version}")
        (klen,) = struct.unpack("<H", fh.read(2))
        kind = fh.read(klen).decode()
        n_ent, n_rel, dim = struct.unpack("<III", fh.read(12))
        (n_mat,) = struct.unpack("<H", fh.read(2))
        specs = []
        for _ in range(n_mat):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            rows, cols = struct.unpack("<II", fh.read(8))
            specs.append((name, rows, cols))
        matrices = {}
        for name, rows, cols in specs:
            buf = fh.read(rows * cols * 4)
            if len(buf) != rows * cols * 4:
                raise ScoringError(f"{path}: truncated matrix {name!r}")
            matrices[name] = np.frombuffer(buf, dtype="<f4").reshape(rows, cols).copy()
    meta = {}
    meta_path = path + ".meta.json"
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    options = meta.get("options", {})
    store = EmbeddingStore(kind=kind, dim=dim, entity_count=n_ent,
                           relation_count=n_rel, matrices=matrices,
                           options=options)
    return store, meta
