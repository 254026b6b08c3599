"""The compiled kernel extension and the NumPy fallback must agree."""
import numpy as np
import pytest

from kgecache.kernels import get_backend

pure = get_backend("pure")
try:
    compiled = get_backend("compiled")
except ImportError:
    compiled = None

needs_compiled = pytest.mark.skipif(compiled is None,
                                    reason="compiled extension not built")


def _rows(seed, k=11, width=17):
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=(k, width)) * 3
    lengths = rng.integers(1, width + 1, size=k)
    return rng, scores, lengths


@needs_compiled
@pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0, 100.0, 1e6])
def test_rescale_and_cache_draw_agree_exactly(alpha):
    rng, scores, lengths = _rows(seed=int(alpha) % 7)
    u = rng.random(len(lengths))
    a = pure.cache_draw(scores, lengths, alpha, u)
    b = compiled.cache_draw(scores, lengths, alpha, u)
    assert np.array_equal(a, b)
    ra = pure.rescale_rows(scores, lengths)
    rb = compiled.rescale_rows(scores, lengths)
    for i, n in enumerate(lengths):
        assert np.array_equal(ra[i, :n], rb[i, :n])


@needs_compiled
@pytest.mark.parametrize("alpha", [0.0, 1.0, 50.0])
@pytest.mark.parametrize("n_select", [1, 5, 17, 25])
def test_refresh_select_agrees_exactly(alpha, n_select):
    rng, scores, lengths = _rows(seed=3)
    u = rng.random(scores.shape)
    sa, ca = pure.refresh_select(scores, lengths, alpha, u, n_select)
    sb, cb = compiled.refresh_select(scores, lengths, alpha, u, n_select)
    assert np.array_equal(sa, sb)
    assert np.array_equal(ca, cb)


@needs_compiled
def test_sg_chunk_update_agrees_numerically():
    rng = np.random.default_rng(5)
    n_nodes, d, b, n_neg = 20, 6, 40, 3

    def fresh_state():
        state_rng = np.random.default_rng(9)
        emb_in = state_rng.normal(size=(n_nodes, d)).astype(np.float32)
        emb_out = state_rng.normal(size=(n_nodes, d)).astype(np.float32)
        return (emb_in, emb_out, np.zeros((n_nodes, d)), np.zeros((n_nodes, d)),
                np.zeros((n_nodes, d)), np.zeros((n_nodes, d)))

    centers = rng.integers(0, n_nodes, b)
    contexts = rng.integers(0, n_nodes, b)
    negs = rng.integers(0, n_nodes, (b, n_neg))
    counts = rng.integers(0, n_neg + 1, b)

    out = {}
    for name, impl in (("pure", pure), ("compiled", compiled)):
        emb_in, emb_out, mi, vi, mo, vo = fresh_state()
        losses = []
        for step in range(1, 4):
            losses.append(impl.sg_chunk_update(
                emb_in, emb_out, mi, vi, mo, vo, centers, contexts, negs,
                counts, 0.05, 1e-4, 0.9, 0.999, 1e-8, step))
        out[name] = (emb_in.copy(), emb_out.copy(), losses)

    np.testing.assert_allclose(out["pure"][2], out["compiled"][2], rtol=1e-10)
    np.testing.assert_allclose(out["pure"][0], out["compiled"][0],
                               rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(out["pure"][1], out["compiled"][1],
                               rtol=1e-5, atol=1e-6)


@needs_compiled
def test_backend_selection_env_override(monkeypatch):
    import importlib

    import kgecache.kernels as kmod

    monkeypatch.setenv("KGECACHE_PURE", "1")
    importlib.reload(kmod)
    assert kmod.BACKEND == "pure"
    monkeypatch.delenv("KGECACHE_PURE")
    importlib.reload(kmod)
    assert kmod.BACKEND == "compiled"
