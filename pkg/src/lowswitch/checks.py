"""Quick oracle/property suite behind the ``check`` CLI subcommand."""
from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from .envs import random_gapped
from .function_class import (
    ConfidenceParams,
    Covariate,
    LinearClass,
    SubsampledDataset,
    TabularClass,
    brute_force_sensitivity,
    brute_force_width,
)
from .mdp import EpisodicMdp, exact_q_star
from .oracle import brute_force_policy_values, eluder_dimension_estimate, sandwich_check, verify_eluder
from .subsampler import decide

WIDTH_TOL = 5e-3
Q_TOL = 1e-10


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, horizon: int) -> EpisodicMdp:
    P = rng.dirichlet(np.ones(n_states), size=(horizon, n_states, n_actions))
    r = rng.random((horizon, n_states, n_actions))
    return EpisodicMdp(P, r, int(rng.integers(n_states)))


def random_tabular_instance(rng: np.random.Generator):
    S = int(rng.integers(1, 5))
    A = int(rng.integers(1, 13 // S + 1))
    A = min(A, 12 // S)
    cls = TabularClass(S, A, float(rng.uniform(0.5, 5.0)))
    Z = SubsampledDataset()
    for _ in range(int(rng.integers(0, 30))):
        Z.add(Covariate(int(rng.integers(S)), int(rng.integers(A))), int(rng.integers(1, 4)))
    beta = float(10 ** rng.uniform(-2, 1.5))
    params = ConfidenceParams(beta, float(10 ** rng.uniform(0, 3)))
    q = Covariate(int(rng.integers(S)), int(rng.integers(A)))
    return cls, Z, params, q


def random_linear_instance(rng: np.random.Generator):
    d = int(rng.integers(1, 4))
    S, A = 4, 2
    feats = rng.normal(size=(S, A, d))
    feats /= np.maximum(np.linalg.norm(feats, axis=-1, keepdims=True), 1.0)
    cls = LinearClass(d, float(rng.uniform(0.5, 2.0)), 1.0, feats)
    Z = SubsampledDataset()
    for _ in range(int(rng.integers(0, 12))):
        Z.add(Covariate(int(rng.integers(S)), int(rng.integers(A))), int(rng.integers(1, 3)))
    beta = float(10 ** rng.uniform(-2, 0.5))
    # the linear sensitivity closed form is exact while the cap is inactive
    params = ConfidenceParams(beta, 1e6)
    q = Covariate(int(rng.integers(S)), int(rng.integers(A)))
    return cls, Z, params, q


def check_q_star(rng, budget: int) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(budget):
        A = 3
        S = int(rng.integers(1, 5))
        H = int(rng.integers(1, min(4, 10 // S) + 1))
        mdp = random_mdp(rng, S, A, H)
        _, values = brute_force_policy_values(mdp)
        worst = max(worst, abs(values.max() - exact_q_star(mdp).V[0, mdp.initial_state]))
    return worst <= Q_TOL, f"max |V* - max_pi V^pi| = {worst:.3g} over {budget} MDPs"


def check_widths(rng, budget: int) -> tuple[bool, str]:
    worst = 0.0
    for make in (random_tabular_instance, random_linear_instance):
        for _ in range(budget):
            cls, Z, params, q = make(rng)
            worst = max(worst, abs(cls.width(Z, params, q) - brute_force_width(cls, Z, params, q)))
            worst = max(worst, abs(cls.sensitivity(Z, params, q) - brute_force_sensitivity(cls, Z, params, q)))
    return worst <= WIDTH_TOL, f"max closed-form vs grid deviation = {worst:.3g}"


def check_unbiased(rng, budget: int) -> tuple[bool, str]:
    n = 1000 * budget
    u = rng.random(n)
    copies = np.array([decide(1 / 3, x).copies if decide(1 / 3, x).accepted else 0 for x in u])
    mean, se = copies.mean(), copies.std(ddof=1) / math.sqrt(n)
    return abs(mean - 1.0) <= 3 * se, f"mean copies {mean:.4f} (se {se:.4f}) at p = 1/3"


def check_eluder(rng, budget: int) -> tuple[bool, str]:
    cls = TabularClass(2, 3, 2.0)
    pool = [Covariate(s, a) for s in range(2) for a in range(3)]
    est = eluder_dimension_estimate(cls, 0.1, pool)
    ok = est.length == 6 and verify_eluder(cls, est)
    return ok, f"tabular 6-cell eluder length {est.length}"


def check_sandwich(rng, budget: int) -> tuple[bool, str]:
    cls = TabularClass(2, 2, 2.0)
    Z = SubsampledDataset()
    for _ in range(20):
        Z.add(Covariate(int(rng.integers(2)), int(rng.integers(2))))
    rep = sandwich_check(cls, Z, Z.copy(), 1.0, 0.5)
    empty = sandwich_check(cls, SubsampledDataset(), SubsampledDataset(), 1.0, 0.5)
    return rep.holds and empty.holds, f"identical datasets: {len(rep.violations)} violations"


CHECKS: dict[str, Callable] = {
    "q_star_vs_enumeration": check_q_star,
    "width_sensitivity_vs_grid": check_widths,
    "subsample_unbiased": check_unbiased,
    "eluder_tabular": check_eluder,
    "sandwich_trivial": check_sandwich,
}


def run_checks(budget: int = 10, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        try:
            ok, detail = fn(rng, budget)
        except Exception as exc:  # report, do not abort the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append({"name": name, "passed": bool(ok), "detail": detail,
                        "seconds": round(time.perf_counter() - t0, 3)})
    return {"passed": all(r["passed"] for r in results), "budget": budget, "seed": seed, "checks": results}
