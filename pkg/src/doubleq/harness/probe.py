"""Overestimation probe: how far max_a Q_T(s0, a) drifts above max_a Q*(s0, a)."""
from __future__ import annotations

import math

import numpy as np

from ..mdp import Mdp, optimal_q
from .trial import final_tables


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return float(x.mean()), se


def overestimation_probe(mdp: Mdp, algorithms, horizon: int, seeds, *, omega: float = 0.8,
                         root: int = 0, n_sigma: float = 3.0) -> dict:
    """Bias statistics per algorithm over ``seeds``.

    Double learners are read through Q^A. The first algorithm is taken as the
    baseline: it is compared with every other one seed by seed, so the
    difference gets a paired standard error.
    """
    algorithms = list(algorithms)
    if not algorithms:
        raise ValueError("need at least one algorithm")
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("need at least two seeds for a standard error")
    q_star = optimal_q(mdp)
    truth = float(q_star[root].max())
    bias = {}
    for algo in algorithms:
        vals = []
        for seed in seeds:
            q_a, _ = final_tables(mdp, algo, omega, horizon, seed)
            vals.append(float(q_a[root].max()) - truth)
        bias[algo] = np.array(vals)
    out = {"root": root, "horizon": horizon, "n_seeds": len(seeds), "omega": omega,
           "true_value": truth, "algorithms": {}}
    for algo, vals in bias.items():
        mean, se = _mean_se(vals)
        out["algorithms"][algo] = {"mean_bias": mean, "se": se,
                                   "positive_at_n_sigma": bool(mean > n_sigma * se)}
    base = algorithms[0]
    out["baseline"] = base
    out["differences"] = {}
    for algo in algorithms[1:]:
        mean, se = _mean_se(bias[base] - bias[algo])
        out["differences"][algo] = {"mean": mean, "se": se,
                                    "baseline_exceeds_at_n_sigma": bool(mean > n_sigma * se)}
    return out
