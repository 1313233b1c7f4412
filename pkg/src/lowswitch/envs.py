"""Named environment constructors."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .mdp import EpisodicMdp, LinearMixtureMdp, gap_min


def chain(n: int, horizon: int, gap: float) -> EpisodicMdp:
    """Deterministic chain of ``n`` states plus an absorbing sink (index ``n``).

    Action 1 advances one state; the advance into the last chain state pays 1.
    Action 0 bails out into the zero-reward sink and pays ``1 - gap`` whenever
    the goal is still reachable (0 otherwise).  Every positive gap therefore
    equals ``gap`` and the optimal return from state 0 is 1.
    """
    if n < 2:
        raise ValueError("chain needs n >= 2")
    if n - 1 > horizon:
        raise ValueError(f"goal unreachable: n - 1 = {n - 1} > horizon = {horizon}")
    if not 0.0 < gap <= 1.0:
        raise ValueError("gap must lie in (0, 1]")
    S, A, sink, goal = n + 1, 2, n, n - 1
    P = np.zeros((horizon, S, A, S))
    r = np.zeros((horizon, S, A))
    for h in range(horizon):
        steps_left = horizon - h
        for s in range(S):
            if s in (sink, goal):
                P[h, s, :, s] = 1.0
                continue
            P[h, s, 1, s + 1] = 1.0
            P[h, s, 0, sink] = 1.0
            reachable = goal - s <= steps_left
            if s + 1 == goal:
                r[h, s, 1] = 1.0
            if reachable:
                r[h, s, 0] = 1.0 - gap
    return EpisodicMdp(P, r, 0)


def riverswim(n: int, horizon: int) -> EpisodicMdp:
    """River-swim: swimming right against the current is rewarded at the far bank."""
    if n < 2:
        raise ValueError("riverswim needs n >= 2")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    P1 = np.zeros((n, 2, n))
    r1 = np.zeros((n, 2))
    for s in range(n):
        P1[s, 0, max(s - 1, 0)] = 1.0
        if s == 0:
            P1[s, 1, 0] += 0.4
            P1[s, 1, 1] += 0.6
        elif s == n - 1:
            P1[s, 1, s] += 0.6
            P1[s, 1, s - 1] += 0.4
        else:
            P1[s, 1, s + 1] += 0.35
            P1[s, 1, s] += 0.6
            P1[s, 1, s - 1] += 0.05
    r1[0, 0] = 0.005
    r1[n - 1, 1] = 1.0
    P = np.broadcast_to(P1, (horizon, n, 2, n)).copy()
    r = np.broadcast_to(r1, (horizon, n, 2)).copy()
    return EpisodicMdp(P, r, 0)


def random_gapped(n_states: int, n_actions: int, horizon: int, gap_min_target: float,
                  seed: int = 0, max_tries: int = 100_000) -> EpisodicMdp:
    """Rejection-sample random MDPs until every positive gap is >= ``gap_min_target``.

    Candidates have sparse Dirichlet kernels and rewards on a grid of spacing
    ``gap_min_target`` so that acceptance is not vanishingly rare.
    """
    if not 0.0 < gap_min_target <= 1.0:
        raise ValueError("gap_min_target must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    levels = np.arange(0.0, 1.0 + 1e-12, gap_min_target)
    for _ in range(max_tries):
        P = rng.dirichlet(np.full(n_states, 0.3), size=(horizon, n_states, n_actions))
        # snap most rows to point masses: keeps the accepted family non-degenerate but likely
        det = rng.random((horizon, n_states, n_actions)) < 0.7
        idx = P.argmax(axis=-1)
        P[det] = np.eye(n_states)[idx[det]]
        r = rng.choice(levels, size=(horizon, n_states, n_actions))
        mdp = EpisodicMdp(P / P.sum(-1, keepdims=True), r, 0)
        if gap_min(mdp) >= gap_min_target:
            return mdp
    raise RuntimeError(f"no MDP with gap_min >= {gap_min_target} in {max_tries} tries")


def mixture(d: int, n_states: int, n_actions: int, horizon: int, seed: int = 0) -> LinearMixtureMdp:
    """Random linear mixture MDP.

    Base kernels are scaled random stochastic kernels and the mixing weights a
    scaled point of the simplex, so the mixture is a probability kernel.  The
    scale is chosen so that the feature bound |phi_V| <= sqrt(H) holds exactly.
    """
    if min(d, n_states, n_actions, horizon) < 1:
        raise ValueError("all mixture dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    Qk = rng.dirichlet(np.full(n_states, 0.5), size=(horizon, d, n_states, n_actions))
    weights = rng.dirichlet(np.ones(d))
    rewards = rng.random((horizon, n_states, n_actions))
    unscaled = LinearMixtureMdp(Qk, weights, rewards, 0, theta_bound=1.0, check_features=False)
    scale = math.sqrt(horizon) / unscaled.max_feature_norm()
    return LinearMixtureMdp(Qk * scale, weights / scale, rewards, 0, theta_bound=1.0 / scale)


REGISTRY: dict[str, Callable] = {
    "chain": chain,
    "riverswim": riverswim,
    "random_gapped": random_gapped,
    "mixture": mixture,
}


def env_registry() -> dict[str, Callable]:
    return dict(REGISTRY)


def make_env(spec: dict):
    """Build an environment from ``{"name": ..., **params}``."""
    spec = dict(spec)
    name = spec.pop("name")
    if name not in REGISTRY:
        raise ValueError(f"unknown environment {name!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[name](**spec)
