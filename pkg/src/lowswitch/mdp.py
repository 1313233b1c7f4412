"""Finite-horizon episodic MDPs: exact planning, policy evaluation, gaps, sampling.

Steps are 0-indexed internally (``h = 0 .. H-1``); value tables carry an extra
terminal row ``H`` that is identically zero.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

STOCHASTIC_TOL = 1e-12
IDENTITY_TOL = 1e-10


class MdpValidationError(ValueError):
    """Raised when an MDP definition violates an invariant."""


@dataclass(frozen=True)
class ValueTables:
    """Q of shape (H+1, S, A) and V of shape (H+1, S); row H is zero."""

    Q: np.ndarray
    V: np.ndarray

    @property
    def horizon(self) -> int:
        return self.V.shape[0] - 1


@dataclass(frozen=True)
class Policy:
    """Deterministic Markov policy; ``actions[h, s]`` is the action at step h."""

    actions: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=np.int64))

    def validate(self, mdp: "EpisodicMdp") -> None:
        a = self.actions
        if a.shape != (mdp.horizon, mdp.n_states):
            raise MdpValidationError(f"policy shape {a.shape} != {(mdp.horizon, mdp.n_states)}")
        if a.min() < 0 or a.max() >= mdp.n_actions:
            raise MdpValidationError("policy action index out of range")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Policy) and np.array_equal(self.actions, other.actions)

    def __hash__(self) -> int:
        return hash(self.actions.tobytes())


@dataclass(frozen=True)
class Step:
    h: int
    state: int
    action: int
    reward: float
    next_state: int


Trajectory = list  # list[Step] of length H


@dataclass(frozen=True)
class EpisodicMdp:
    """Tabular episodic MDP with deterministic, known rewards.

    ``transitions`` has shape (H, S, A, S) and ``rewards`` shape (H, S, A).
    """

    transitions: np.ndarray
    rewards: np.ndarray
    initial_state: int = 0
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        P = np.array(self.transitions, dtype=np.float64)
        r = np.array(self.rewards, dtype=np.float64)
        P.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", r)
        _validate_tables(P, r, self.initial_state)
        cdf = np.cumsum(P, axis=-1)
        cdf[..., -1] = 1.0
        object.__setattr__(self, "_cdf", cdf)

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_states(self) -> int:
        return self.rewards.shape[1]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[2]

    def next_state(self, h: int, s: int, a: int, u: float) -> int:
        """Inverse-CDF draw of s' given a uniform variate ``u`` in [0, 1)."""
        return int(np.searchsorted(self._cdf[h, s, a], u, side="right"))

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "horizon": self.horizon,
            "rewards": self.rewards.tolist(),
            "transitions": self.transitions.tolist(),
            "initial_state": int(self.initial_state),
        }


def _validate_tables(P: np.ndarray, r: np.ndarray, s1: int) -> None:
    if r.ndim != 3:
        raise MdpValidationError(f"rewards must be (H, S, A), got shape {r.shape}")
    H, S, A = r.shape
    if H < 1 or S < 1 or A < 1:
        raise MdpValidationError("horizon, n_states and n_actions must all be >= 1")
    if P.shape != (H, S, A, S):
        raise MdpValidationError(f"transitions must have shape {(H, S, A, S)}, got {P.shape}")
    if not np.all(np.isfinite(r)) or not np.all(np.isfinite(P)):
        raise MdpValidationError("non-finite entry in rewards or transitions")
    bad = np.argwhere((r < 0.0) | (r > 1.0))
    if bad.size:
        h, s, a = bad[0]
        raise MdpValidationError(f"reward r[{h}][{s}][{a}]={r[h, s, a]} outside [0, 1]")
    bad = np.argwhere(P < 0.0)
    if bad.size:
        h, s, a, t = bad[0]
        raise MdpValidationError(f"negative probability transitions[{h}][{s}][{a}][{t}]")
    row_err = np.abs(P.sum(axis=-1) - 1.0)
    bad = np.argwhere(row_err > STOCHASTIC_TOL)
    if bad.size:
        h, s, a = bad[0]
        raise MdpValidationError(
            f"transitions[{h}][{s}][{a}] sums to {P[h, s, a].sum()!r}, not 1"
        )
    if not (0 <= int(s1) < S):
        raise MdpValidationError(f"initial_state {s1} out of range [0, {S})")


def exact_q_star(mdp: EpisodicMdp) -> ValueTables:
    """Optimal Q*/V* by backward induction."""
    H, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    Q = np.zeros((H + 1, S, A))
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.rewards[h] + mdp.transitions[h] @ V[h + 1]
        V[h] = Q[h].max(axis=1)
    return ValueTables(Q, V)


def exact_policy_value(mdp: EpisodicMdp, policy: Policy | np.ndarray) -> ValueTables:
    """Q^pi/V^pi by backward induction.

    ``policy`` is either a deterministic :class:`Policy` or an array of action
    probabilities with shape (H, S, A).
    """
    H, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    if isinstance(policy, Policy):
        policy.validate(mdp)
        probs = np.zeros((H, S, A))
        probs[np.arange(H)[:, None], np.arange(S)[None, :], policy.actions] = 1.0
    else:
        probs = np.asarray(policy, dtype=np.float64)
        if probs.shape != (H, S, A):
            raise MdpValidationError(f"stochastic policy must have shape {(H, S, A)}")
    Q = np.zeros((H + 1, S, A))
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.rewards[h] + mdp.transitions[h] @ V[h + 1]
        V[h] = (probs[h] * Q[h]).sum(axis=1)
    return ValueTables(Q, V)


def uniform_policy(mdp: EpisodicMdp) -> np.ndarray:
    return np.full((mdp.horizon, mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def greedy_policy(Q: np.ndarray) -> Policy:
    """Argmax over actions with ties broken to the lowest index."""
    return Policy(np.argmax(Q, axis=-1))


def gaps(mdp: EpisodicMdp, tables: ValueTables | None = None) -> np.ndarray:
    """gap[h, s, a] = V*_h(s) - Q*_h(s, a), shape (H, S, A)."""
    t = tables if tables is not None else exact_q_star(mdp)
    g = t.V[:-1, :, None] - t.Q[:-1]
    # the maximizing entry is exactly zero; clear rounding noise elsewhere
    g[g < IDENTITY_TOL] = 0.0
    return g


def gap_min(mdp: EpisodicMdp) -> float:
    """Smallest strictly positive gap; ``math.inf`` if every gap is zero."""
    g = gaps(mdp)
    pos = g[g > 0.0]
    return float(pos.min()) if pos.size else math.inf


def sample_episode(mdp: EpisodicMdp, policy: Policy, rng: np.random.Generator) -> list[Step]:
    u = rng.random(mdp.horizon)
    s = int(mdp.initial_state)
    traj = []
    for h in range(mdp.horizon):
        a = int(policy.actions[h, s])
        s2 = mdp.next_state(h, s, a, u[h])
        traj.append(Step(h, s, a, float(mdp.rewards[h, s, a]), s2))
        s = s2
    return traj


# ---------------------------------------------------------------------------
# Linear mixture MDPs


@dataclass(frozen=True)
class LinearMixtureMdp:
    """Transition kernel ``P_h(s'|s,a) = <phi_h(s'|s,a), theta>``.

    ``base_kernels`` has shape (H, d, S, A, S) and may hold signed entries; the
    mixture must be a probability kernel and ``|phi_V(s,a)|_2 <= sqrt(H)`` for
    every V with values in [0, H].
    """

    base_kernels: np.ndarray
    theta: np.ndarray
    rewards: np.ndarray
    initial_state: int = 0
    theta_bound: float | None = None
    check_features: bool = field(default=True, repr=False, compare=False)
    mdp: EpisodicMdp = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        phi = np.array(self.base_kernels, dtype=np.float64)
        theta = np.array(self.theta, dtype=np.float64)
        phi.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "base_kernels", phi)
        object.__setattr__(self, "theta", theta)
        if phi.ndim != 5 or phi.shape[2] != phi.shape[4]:
            raise MdpValidationError(f"base_kernels must be (H, d, S, A, S), got {phi.shape}")
        if theta.shape != (phi.shape[1],):
            raise MdpValidationError(f"theta must have shape ({phi.shape[1]},)")
        bound = float(np.linalg.norm(theta)) if self.theta_bound is None else float(self.theta_bound)
        object.__setattr__(self, "theta_bound", bound)
        if np.linalg.norm(theta) > bound * (1 + 1e-12):
            raise MdpValidationError(f"|theta|_2 = {np.linalg.norm(theta)} exceeds bound {bound}")
        P = np.einsum("hjsat,j->hsat", phi, theta)
        P[np.abs(P) < 1e-15] = 0.0
        object.__setattr__(self, "mdp", EpisodicMdp(P, self.rewards, self.initial_state))
        if not self.check_features:
            return
        H = phi.shape[0]
        worst = self.max_feature_norm()
        if worst > math.sqrt(H) * (1 + 1e-9):
            raise MdpValidationError(
                f"max |phi_V(s,a)|_2 = {worst} exceeds sqrt(H) = {math.sqrt(H)}"
            )

    @property
    def dim(self) -> int:
        return self.base_kernels.shape[1]

    @property
    def horizon(self) -> int:
        return self.base_kernels.shape[0]

    def features(self, h: int, V: np.ndarray) -> np.ndarray:
        """phi_V for every (s, a) at step h; shape (S, A, d)."""
        return np.einsum("jsat,t->saj", self.base_kernels[h], V)

    def max_feature_norm(self) -> float:
        """Exact max of |phi_V(s,a)|_2 over V in [0, H]^S.

        A convex function of V is maximised at a vertex of the box, so the
        vertices are enumerated (S is small for every supported instance).
        """
        H, d, S, A, _ = self.base_kernels.shape
        if S > 16:
            # per-coordinate bound: |phi_V|_j <= H * sum of positive parts
            pos = np.clip(self.base_kernels, 0, None).sum(-1)
            neg = np.clip(-self.base_kernels, 0, None).sum(-1)
            per = H * np.maximum(pos, neg)
            return float(np.sqrt((per**2).sum(axis=1)).max())
        verts = ((np.arange(2**S)[:, None] >> np.arange(S)) & 1).astype(float) * H
        feats = np.einsum("hjsat,vt->hsavj", self.base_kernels, verts)
        return float(np.sqrt((feats**2).sum(-1)).max())

    def to_dict(self) -> dict[str, Any]:
        out = self.mdp.to_dict()
        del out["transitions"]
        out.update(
            d=self.dim,
            theta=self.theta.tolist(),
            theta_bound=self.theta_bound,
            base_kernels=self.base_kernels.tolist(),
        )
        return out


# ---------------------------------------------------------------------------
# JSON definition files


def mdp_from_dict(doc: dict[str, Any]) -> EpisodicMdp | LinearMixtureMdp:
    """Build an MDP from its JSON document; the first violated invariant is reported."""
    try:
        H, S, A = int(doc["horizon"]), int(doc["n_states"]), int(doc["n_actions"])
        rewards = np.asarray(doc["rewards"], dtype=np.float64)
        s1 = int(doc.get("initial_state", 0))
    except KeyError as exc:
        raise MdpValidationError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise MdpValidationError(f"malformed field: {exc}") from None
    if rewards.shape != (H, S, A):
        raise MdpValidationError(f"rewards shape {rewards.shape} != {(H, S, A)}")
    if "base_kernels" in doc:
        d = int(doc["d"])
        kernels = np.asarray(doc["base_kernels"], dtype=np.float64)
        if kernels.shape != (H, d, S, A, S):
            raise MdpValidationError(f"base_kernels shape {kernels.shape} != {(H, d, S, A, S)}")
        return LinearMixtureMdp(
            kernels, np.asarray(doc["theta"], dtype=np.float64), rewards, s1,
            doc.get("theta_bound"),
        )
    try:
        P = np.asarray(doc["transitions"], dtype=np.float64)
    except KeyError:
        raise MdpValidationError("missing field 'transitions'") from None
    return EpisodicMdp(P, rewards, s1)


def load_mdp(path: str | Path) -> EpisodicMdp | LinearMixtureMdp:
    with open(path) as fh:
        return mdp_from_dict(json.load(fh))
