"""Hyper-parameter search over the exploration/exploitation space: random
search and sequential model-based optimization with a random-forest
surrogate and expected improvement.

The objective is maximized (validation MRR).  Failed trials score 0 so the
surrogate learns to avoid them.  History is appended to a JSON-lines file
after every trial when a path is given, making long searches resumable by
inspection.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np
from sklearn.ensemble import RandomForestRegressor

PARAM_NAMES = ("alpha1", "alpha2", "alpha3", "n1", "n2")


@dataclass
class SearchSpace:
    alpha1: tuple[float, float] = (0.0, 1.0)
    alpha2: tuple[float, float] = (0.0, 100.0)
    alpha3: tuple[float, float] = (0.0, 100.0)
    n1: tuple[int, ...] = (10, 30, 50, 70, 90)
    n2: tuple[int, ...] = (10, 30, 50, 70, 90)

    def sample(self, rng: np.random.Generator) -> dict:
        return {
            "alpha1": float(rng.uniform(*self.alpha1)),
            "alpha2": float(rng.uniform(*self.alpha2)),
            "alpha3": float(rng.uniform(*self.alpha3)),
            "n1": int(rng.choice(self.n1)),
            "n2": int(rng.choice(self.n2)),
        }

    def anchor(self) -> dict:
        """The default starting configuration evaluated first by smbo:
        all temperatures zero, both sizes 50 (Bernoulli-like behavior).
        """
        return {"alpha1": 0.0, "alpha2": 0.0, "alpha3": 0.0, "n1": 50, "n2": 50}


@dataclass
class TrialRecord:
    params: dict
    objective: float = float("nan")
    status: str = "pending"
    seconds: float = 0.0
    trial: int = -1

    def features(self) -> list[float]:
        return [float(self.params[k]) for k in PARAM_NAMES]


@dataclass
class SearchResult:
    best: TrialRecord
    history: list[TrialRecord] = field(default_factory=list)

    @property
    def incumbent_curve(self) -> np.ndarray:
        """Best objective seen after each trial (failed trials count 0)."""
        vals = [t.objective if t.status == "ok" else 0.0 for t in self.history]
        return np.maximum.accumulate(vals)


def _run_trial(params: dict, objective_fn, trial: int,
               history_path: str | None) -> TrialRecord:
    rec = TrialRecord(params=params, trial=trial)
    start = time.perf_counter()
    try:
        rec.objective = float(objective_fn(params))
        rec.status = "ok"
    except Exception as exc:  # noqa: BLE001 - a failed trial must not kill the search
        rec.objective = 0.0
        rec.status = f"failed: {type(exc).__name__}"
    rec.seconds = time.perf_counter() - start
    if history_path:
        with open(history_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(asdict(rec)) + "\n")
    return rec


def _best_of(history: list[TrialRecord]) -> TrialRecord:
    ok = [t for t in history if t.status == "ok"]
    pool = ok or history
    return max(pool, key=lambda t: (t.objective if t.status == "ok" else -math.inf))


def random_search(space: SearchSpace, budget: int, objective_fn, seed: int,
                  history_path: str | None = None) -> SearchResult:
    """budget i.i.d. uniform configurations, evaluated in draw order."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    history = [_run_trial(space.sample(rng), objective_fn, i, history_path)
               for i in range(budget)]
    return SearchResult(best=_best_of(history), history=history)


def _expected_improvement(mu: np.ndarray, sigma: np.ndarray,
                          incumbent: float) -> np.ndarray:
    """EI for maximization; collapses to max(mu - incumbent, 0) at zero
    predictive spread, so a point predicted exactly at the incumbent with
    no variance has EI 0.
    """
    improve = mu - incumbent
    out = np.maximum(improve, 0.0)
    pos = sigma > 0
    if pos.any():
        z = improve[pos] / sigma[pos]
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        cdf = 0.5 * (1.0 + _erf(z / math.sqrt(2.0)))
        out[pos] = improve[pos] * cdf + sigma[pos] * pdf
    return out


def _erf(x: np.ndarray) -> np.ndarray:
    return np.vectorize(math.erf)(x)


def smbo_search(space: SearchSpace, budget: int, objective_fn, seed: int,
                init_design: int = 8, n_candidates: int = 1000,
                n_trees: int = 50, history_path: str | None = None) -> SearchResult:
    """Sequential model-based optimization: the anchor configuration first,
    random trials to fill the initial design, then rounds of fitting a
    random-forest surrogate on history and evaluating the candidate with
    the highest expected improvement among n_candidates random draws.

    Degenerate fits (all objectives equal) fall back to a random proposal
    for that round.  With init_design >= budget no surrogate rounds run and
    trials 2..budget coincide with random_search under the same seed.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    history: list[TrialRecord] = []

    history.append(_run_trial(space.anchor(), objective_fn, 0, history_path))
    while len(history) < min(init_design, budget):
        history.append(_run_trial(space.sample(rng), objective_fn,
                                  len(history), history_path))

    while len(history) < budget:
        x = np.array([t.features() for t in history])
        y = np.array([t.objective if t.status == "ok" else 0.0 for t in history])
        if np.allclose(y, y[0]):
            params = space.sample(rng)
        else:
            forest = RandomForestRegressor(
                n_estimators=n_trees,
                random_state=int(rng.integers(0, 2**31 - 1)),
            )
            forest.fit(x, y)
            cands = [space.sample(rng) for _ in range(n_candidates)]
            cx = np.array([[float(c[k]) for k in PARAM_NAMES] for c in cands])
            per_tree = np.stack([t.predict(cx) for t in forest.estimators_])
            mu = per_tree.mean(axis=0)
            sigma = per_tree.std(axis=0)
            ei = _expected_improvement(mu, sigma, float(y.max()))
            params = cands[int(np.argmax(ei))]
        history.append(_run_trial(params, objective_fn, len(history), history_path))

    return SearchResult(best=_best_of(history), history=history)
