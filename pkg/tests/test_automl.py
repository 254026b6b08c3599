import json

import numpy as np
import pytest

from kgecache.automl import (SearchSpace, _expected_improvement, random_search,
                             smbo_search)

QUAD_SPACE = SearchSpace(alpha2=(0.0, 30.0))


def quadratic(params):
    return -(params["alpha2"] - 3.0) ** 2


class TestSearchSpace:
    def test_samples_inside_ranges(self):
        space = SearchSpace()
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            p = space.sample(rng)
            assert 0.0 <= p["alpha1"] <= 1.0
            assert 0.0 <= p["alpha2"] <= 100.0
            assert 0.0 <= p["alpha3"] <= 100.0
            assert p["n1"] in (10, 30, 50, 70, 90)
            assert p["n2"] in (10, 30, 50, 70, 90)

    def test_anchor_is_the_zero_temperature_default(self):
        assert SearchSpace().anchor() == {"alpha1": 0.0, "alpha2": 0.0,
                                          "alpha3": 0.0, "n1": 50, "n2": 50}


class TestRandomSearch:
    def test_budget_one_returns_that_trial(self):
        res = random_search(SearchSpace(), 1, quadratic, seed=0)
        assert len(res.history) == 1
        assert res.best is res.history[0]

    def test_deterministic_per_seed(self):
        a = random_search(SearchSpace(), 10, quadratic, seed=4)
        b = random_search(SearchSpace(), 10, quadratic, seed=4)
        assert [t.params for t in a.history] == [t.params for t in b.history]

    def test_finds_the_quadratic_optimum_with_budget_200(self):
        hits = 0
        for seed in range(20):
            res = random_search(QUAD_SPACE, 200, quadratic, seed=seed)
            if abs(res.best.params["alpha2"] - 3.0) <= 0.5:
                hits += 1
        assert hits >= 19  # >= 95% of seeds

    def test_failed_trials_marked_and_search_continues(self):
        def flaky(params):
            if params["alpha2"] < 50.0:
                raise RuntimeError("boom")
            return params["alpha2"]

        res = random_search(SearchSpace(), 30, flaky, seed=1)
        statuses = {t.status for t in res.history}
        assert any(s.startswith("failed") for s in statuses)
        assert res.best.status == "ok"
        assert len(res.history) == 30

    def test_history_file_written_per_trial(self, tmp_path):
        path = tmp_path / "hist.jsonl"
        random_search(SearchSpace(), 5, quadratic, seed=0, history_path=str(path))
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 5
        assert all("objective" in json.loads(ln) for ln in lines)


class TestSMBO:
    def test_anchor_evaluated_first(self):
        res = smbo_search(SearchSpace(), 3, quadratic, seed=5, init_design=3)
        assert res.history[0].params == SearchSpace().anchor()

    def test_history_length_equals_budget(self):
        res = smbo_search(QUAD_SPACE, 12, quadratic, seed=2, init_design=4)
        assert len(res.history) == 12

    def test_incumbent_curve_nondecreasing(self):
        for search in (random_search(QUAD_SPACE, 25, quadratic, seed=3),
                       smbo_search(QUAD_SPACE, 25, quadratic, seed=3)):
            curve = search.incumbent_curve
            assert np.all(np.diff(curve) >= 0)

    def test_init_design_budget_degenerates_to_random_after_anchor(self):
        budget = 9
        sm = smbo_search(SearchSpace(), budget, quadratic, seed=11,
                         init_design=budget)
        rs = random_search(SearchSpace(), budget - 1, quadratic, seed=11)
        assert [t.params for t in sm.history[1:]] == [t.params for t in rs.history]

    def test_degenerate_constant_objective_falls_back_to_random(self):
        res = smbo_search(SearchSpace(), 12, lambda p: 1.0, seed=7, init_design=4)
        assert len(res.history) == 12
        assert all(t.objective == 1.0 for t in res.history)

    def test_beats_random_on_the_quadratic(self):
        # reach within 0.2 of the optimum in at most half the trials random
        # search needs, in the median over 20 seeds
        def trials_to_reach(history, thresh=-0.2):
            for t in history:
                if t.status == "ok" and t.objective >= thresh:
                    return t.trial + 1
            return len(history) + 1

        rs_counts, sm_counts = [], []
        for seed in range(20):
            rs = random_search(QUAD_SPACE, 150, quadratic, seed=seed)
            sm = smbo_search(QUAD_SPACE, 40, quadratic, seed=seed)
            rs_counts.append(trials_to_reach(rs.history))
            sm_counts.append(trials_to_reach(sm.history))
        assert np.median(sm_counts) <= np.median(rs_counts) / 2


class TestExpectedImprovement:
    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        ei = _expected_improvement(rng.normal(size=100), np.abs(rng.normal(size=100)),
                                   incumbent=0.5)
        assert np.all(ei >= 0)

    def test_zero_at_incumbent_with_zero_variance(self):
        ei = _expected_improvement(np.array([1.0]), np.array([0.0]), incumbent=1.0)
        assert ei[0] == 0.0

    def test_positive_variance_gives_positive_ei_at_incumbent(self):
        ei = _expected_improvement(np.array([1.0]), np.array([0.5]), incumbent=1.0)
        assert ei[0] > 0.0
