import numpy as np
import pytest

from kgecache.sampler import EEHyperParams
from kgecache.skipgram import (Graph, WalkConfig, classify_nodes, generate_walks,
                               load_edge_list, skipgram_pair_grad,
                               skipgram_pair_loss, train_skipgram,
                               window_cooccurrents)


def _cfg(**kw):
    base = dict(walks_per_node=4, walk_length=10, window=3, dim=8, epochs=3,
                negatives=2, lr=0.02, chunk_size=512)
    base.update(kw)
    cfg = WalkConfig(**{k: v for k, v in base.items() if k != "ee"})
    if "ee" in base:
        cfg.ee = base["ee"]
    return cfg


class TestGraph:
    def test_self_loops_dropped_and_adjacency_symmetric(self):
        g = Graph(4, np.array([[0, 0], [0, 1], [1, 2], [2, 1]]))
        assert g.degree(0) == 1
        assert g.has_edge(1, 2) and g.has_edge(2, 1)
        assert not g.has_edge(0, 0)

    def test_load_edge_list_with_labels(self, tmp_path):
        edges = tmp_path / "edges.txt"
        edges.write_text("a\tb\nb\tc\n")
        labels = tmp_path / "labels.txt"
        labels.write_text("a\tx\nb\ty\nc\tx\n")
        g = load_edge_list(str(edges), str(labels))
        assert g.n_nodes == 3
        assert g.labels.tolist() == [0, 1, 0]


class TestWalks:
    def test_corpus_size_is_walks_per_node_times_nodes(self):
        g = Graph(5, np.array([[0, 1], [1, 2], [2, 3], [3, 4]]))
        walks, lengths = generate_walks(g, _cfg(walks_per_node=7), seed=0)
        assert walks.shape[0] == 7 * 5
        assert np.all(lengths >= 1)
        valid = walks[walks >= 0]
        assert valid.min() >= 0 and valid.max() < 5

    def test_isolated_node_emits_length_one_walks(self):
        g = Graph(3, np.array([[0, 1]]))
        walks, lengths = generate_walks(g, _cfg(walks_per_node=2), seed=1)
        iso = [i for i in range(len(walks)) if walks[i, 0] == 2]
        assert all(lengths[i] == 1 for i in iso)

    def test_unbiased_first_step_on_path_graph(self):
        # a - b - c with p = q = 1: from b both neighbors equally likely
        g = Graph(3, np.array([[0, 1], [1, 2]]))
        cfg = _cfg(walks_per_node=1, walk_length=2, p=1.0, q=1.0)
        rng_hits = []
        for seed in range(100_000 // (3 * 1)):
            walks, _ = generate_walks(g, cfg, seed=seed)
            start_b = walks[walks[:, 0] == 1]
            rng_hits.append(int(start_b[0, 1] == 0))
        freq = np.mean(rng_hits)
        assert freq == pytest.approx(0.5, abs=0.01)

    def test_triangle_second_order_bias(self):
        # triangle, prev = a(0), cur = b(1): neighbors {a, c}; weight to a is
        # 1/p (return), to c is 1 (mutual neighbor of a and b)
        g = Graph(3, np.array([[0, 1], [1, 2], [0, 2]]))
        p, q = 0.25, 0.25
        w_return, w_mutual = 1 / p, 1.0
        expected_return = w_return / (w_return + w_mutual)
        cfg = WalkConfig(walks_per_node=1, walk_length=3, window=1, p=p, q=q,
                         dim=4, epochs=1)
        returns = []
        for seed in range(20_000):
            walks, _ = generate_walks(g, cfg, seed=seed)
            for w in walks:
                if w[1] >= 0 and w[2] >= 0:
                    returns.append(int(w[2] == w[0]))
        freq = np.mean(returns)
        assert freq == pytest.approx(expected_return, abs=0.01)

    def test_line_second_order_out_bias(self):
        # path a - b - c - d, at (prev=a, cur=b): to a weight 1/p, to c
        # weight 1/q (c not adjacent to a)
        g = Graph(4, np.array([[0, 1], [1, 2], [2, 3]]))
        p, q = 0.5, 2.0
        expected_return = (1 / p) / (1 / p + 1 / q)
        cfg = WalkConfig(walks_per_node=1, walk_length=3, window=1, p=p, q=q,
                         dim=4, epochs=1)
        returns = []
        for seed in range(20_000):
            walks, _ = generate_walks(g, cfg, seed=seed)
            for w in walks:
                if w[0] == 0 and w[1] == 1 and w[2] >= 0:
                    returns.append(int(w[2] == 0))
        assert np.mean(returns) == pytest.approx(expected_return, abs=0.015)

    def test_deterministic_per_seed(self):
        g = Graph(6, np.array([[0, 1], [1, 2], [2, 3], [3, 4], [4, 5], [5, 0]]))
        w1, l1 = generate_walks(g, _cfg(), seed=9)
        w2, l2 = generate_walks(g, _cfg(), seed=9)
        assert np.array_equal(w1, w2) and np.array_equal(l1, l2)


class TestSkipgramTraining:
    def test_pair_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        u, v = rng.normal(size=6), rng.normal(size=6)
        negs = rng.normal(size=(4, 6))
        gu, gv, gn = skipgram_pair_grad(u, v, negs)
        eps = 1e-6
        for vec, grad in ((u, gu), (v, gv)):
            for i in range(6):
                orig = vec[i]
                vec[i] = orig + eps
                up = skipgram_pair_loss(u, v, negs)
                vec[i] = orig - eps
                down = skipgram_pair_loss(u, v, negs)
                vec[i] = orig
                fd = (up - down) / (2 * eps)
                assert abs(fd - grad[i]) / max(1.0, abs(fd)) < 1e-4
        for n in range(4):
            for i in range(6):
                orig = negs[n, i]
                negs[n, i] = orig + eps
                up = skipgram_pair_loss(u, v, negs)
                negs[n, i] = orig - eps
                down = skipgram_pair_loss(u, v, negs)
                negs[n, i] = orig
                fd = (up - down) / (2 * eps)
                assert abs(fd - gn[n, i]) / max(1.0, abs(fd)) < 1e-4

    def test_two_node_graph_learns_the_edge(self):
        g = Graph(2, np.array([[0, 1]]))
        cfg = _cfg(walks_per_node=20, walk_length=10, window=2, epochs=30,
                   negatives=1, lr=0.05)
        cfg.ee = EEHyperParams(n1=2, n2=2)
        walks, lengths = generate_walks(g, cfg, seed=1)
        res = train_skipgram(walks, lengths, 2, cfg, seed=2, mode="cache")
        sig = 1 / (1 + np.exp(-(res.emb_in[0] @ res.emb_out[1])))
        assert sig > 0.9

    def test_loss_decreases_on_fixed_corpus(self):
        edges = np.array([[i, (i + 1) % 20] for i in range(20)])
        g = Graph(20, edges)
        cfg = _cfg(epochs=6)
        walks, lengths = generate_walks(g, cfg, seed=4)
        res = train_skipgram(walks, lengths, 20, cfg, seed=5, mode="cache")
        assert res.epoch_losses[-1] < res.epoch_losses[0]

    def test_zero_temperature_reduces_to_uniform_sampling(self):
        # with the cache spanning the whole candidate pool (n1 >= pool) and
        # zero temperatures, cache draws are i.i.d. uniform over exactly the
        # same support as the direct uniform implementation; smaller caches
        # refreshed at epoch granularity correlate within-epoch draws
        edges = np.array([[i, (i + 1) % 50] for i in range(50)]
                         + [[i, (i + 2) % 50] for i in range(50)])
        g = Graph(50, edges)
        cfg = _cfg(walks_per_node=4, walk_length=15, window=3, epochs=5,
                   negatives=3, lr=0.01)
        cfg.ee = EEHyperParams(alpha2=0.0, alpha3=0.0, n1=50, n2=50)
        walks, lengths = generate_walks(g, cfg, seed=4)
        curves = {}
        for mode in ("cache", "uniform"):
            losses = []
            for seed in range(5):
                res = train_skipgram(walks, lengths, 50, cfg, seed=seed, mode=mode)
                losses.append(res.epoch_losses)
            curves[mode] = np.array(losses)
        mean_c, mean_u = curves["cache"].mean(0), curves["uniform"].mean(0)
        spread = curves["cache"].std(0) + curves["uniform"].std(0) + 1e-3
        # overlapping bands: mean curves within 2 pooled standard deviations
        assert np.all(np.abs(mean_c - mean_u) < 2 * spread)

    def test_caches_never_contain_their_owner(self):
        edges = np.array([[i, (i + 1) % 30] for i in range(30)])
        g = Graph(30, edges)
        cfg = _cfg(epochs=2)
        cfg.ee = EEHyperParams(alpha3=1.0, n1=8, n2=8)
        walks, lengths = generate_walks(g, cfg, seed=6)
        centers_excl = window_cooccurrents(walks, lengths, cfg.window, 30)
        for node, excl in enumerate(centers_excl):
            assert node in excl
        from kgecache.skipgram import NodeCaches
        rng = np.random.default_rng(0)
        caches = NodeCaches(30, cfg.ee, centers_excl)
        emb = rng.normal(size=(30, 8)).astype(np.float32)
        caches.refresh_all(emb, emb, rng)
        for node in range(30):
            row = caches.cands[node, :caches.lengths[node]]
            assert node not in row
            assert not np.isin(row, centers_excl[node]).any()


class TestClassifyNodes:
    def test_separable_embeddings(self):
        rng = np.random.default_rng(1)
        emb = np.concatenate([rng.normal(0, 0.05, (40, 6)) + [2, 0, 0, 0, 0, 0],
                              rng.normal(0, 0.05, (40, 6)) + [0, 2, 0, 0, 0, 0],
                              rng.normal(0, 0.05, (40, 6)) + [0, 0, 2, 0, 0, 0]])
        labels = np.repeat([0, 1, 2], 40)
        out = classify_nodes(emb, labels, 0.5, seed=3)
        assert out["micro_f1_mean"] > 0.99

    def test_random_embeddings_score_at_chance(self):
        rng = np.random.default_rng(2)
        emb = rng.normal(size=(300, 8))
        labels = np.repeat([0, 1, 2], 100)
        out = classify_nodes(emb, labels, 0.5, seed=4)
        assert out["micro_f1_mean"] == pytest.approx(1 / 3, abs=0.06)

    def test_unlabeled_nodes_excluded(self):
        rng = np.random.default_rng(3)
        emb = rng.normal(size=(50, 4))
        labels = np.concatenate([np.repeat([0, 1], 20), -np.ones(10, dtype=int)])
        out = classify_nodes(emb, labels, 0.5, seed=5)
        assert out["splits"] == 5
