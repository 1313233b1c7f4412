"""Ground-truth machinery: policy enumeration, eluder estimates, dataset sandwich checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .function_class import (
    BudgetExceeded,
    ConfidenceParams,
    Covariate,
    FunctionClass,
    LinearClass,
    SubsampledDataset,
    TabularClass,
    _tabular_difference_search,
    linear_pair_search,
)
from .mdp import EpisodicMdp

POLICY_BUDGET = 10**5
CERT_TOL = 1e-6


# ---------------------------------------------------------------------------
# Policy enumeration


def brute_force_policy_values(mdp: EpisodicMdp, budget: int = POLICY_BUDGET,
                              chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Value at the initial state of every deterministic Markov policy.

    Returns ``(policies, values)`` with ``policies`` of shape (N, H, S) in
    lexicographic order and ``values`` of shape (N,).  Values come from
    forward propagation of the state distribution, not backward induction.
    """
    H, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    n = A ** (S * H)
    if n > budget:
        raise BudgetExceeded(f"{A}^({S}*{H}) = {n} policies exceeds budget {budget}")
    digits = A ** np.arange(S * H - 1, -1, -1)
    values = np.empty(n)
    policies = np.empty((n, H, S), dtype=np.int64)
    P, r = mdp.transitions, mdp.rewards
    s_idx = np.arange(S)
    for start in range(0, n, chunk):
        ids = np.arange(start, min(n, start + chunk))
        acts = ((ids[:, None] // digits[None, :]) % A).reshape(-1, H, S)
        policies[ids] = acts
        dist = np.zeros((len(ids), S))
        dist[:, mdp.initial_state] = 1.0
        total = np.zeros(len(ids))
        for h in range(H):
            a = acts[:, h, :]
            total += (dist * r[h][s_idx[None, :], a]).sum(axis=1)
            dist = np.einsum("ns,nst->nt", dist, P[h][s_idx[None, :], a])
        values[ids] = total
    return policies, values


# ---------------------------------------------------------------------------
# Eluder dimension


@dataclass
class EluderEstimate:
    eps: float
    sequence: list[Covariate] = field(default_factory=list)
    certificates: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.sequence)


def _evaluate(cls: FunctionClass, f: np.ndarray, z: Covariate) -> float:
    if isinstance(cls, TabularClass):
        return float(f.flat[cls.cell(z)])
    return float(np.dot(f, cls.features(z)))


def independence_certificate(cls: FunctionClass, prefix: Sequence[Covariate], x: Covariate,
                             eps: float) -> tuple[np.ndarray, np.ndarray] | None:
    """Grid-search a pair (f1, f2) with |f1 - f2|_prefix <= eps and |f1(x) - f2(x)| > eps."""
    Z = SubsampledDataset.from_sequence(prefix)
    params = ConfidenceParams(eps**2, math.inf)
    if isinstance(cls, TabularClass):
        diffs, norms = _tabular_difference_search(cls, Z, x, 1e-3)
        ok = norms <= eps**2 * (1 + 1e-12)
        i = int(np.argmax(np.where(ok, np.abs(diffs), -1.0)))
        best = float(abs(diffs[i]))
        if best <= eps + CERT_TOL:
            return None
        mid = np.full(cls.n_cells, cls.value_range / 2)
        f1, f2 = mid.copy(), mid.copy()
        f1[cls.cell(x)] += best / 2
        f2[cls.cell(x)] -= best / 2
        return f1, f2
    if isinstance(cls, LinearClass):
        best, D = linear_pair_search(cls, Z, params, cls.features(x))
        if best <= eps + CERT_TOL:
            return None
        # shrink into the strict interior of the constraint to absorb rounding
        D = D * (1 - 1e-9)
        if abs(D @ cls.features(x)) <= eps + CERT_TOL:
            return None
        return D / 2, -D / 2
    raise TypeError(f"no eluder oracle for {type(cls).__name__}")


def verify_certificate(cls: FunctionClass, prefix: Sequence[Covariate], x: Covariate, eps: float,
                       cert: tuple[np.ndarray, np.ndarray]) -> bool:
    f1, f2 = cert
    if isinstance(cls, LinearClass) and (np.linalg.norm(f1) > cls.bound * (1 + 1e-9)
                                        or np.linalg.norm(f2) > cls.bound * (1 + 1e-9)):
        return False
    if isinstance(cls, TabularClass) and (
        f1.min() < 0 or f2.min() < 0 or f1.max() > cls.value_range or f2.max() > cls.value_range
    ):
        return False
    sq = sum((_evaluate(cls, f1, z) - _evaluate(cls, f2, z)) ** 2 for z in prefix)
    gap = abs(_evaluate(cls, f1, x) - _evaluate(cls, f2, x))
    return math.sqrt(sq) <= eps * (1 + 1e-9) and gap > eps + CERT_TOL


def eluder_dimension_estimate(cls: FunctionClass, eps: float, pool: Sequence[Covariate],
                              max_length: int = 10_000) -> EluderEstimate:
    """Greedy lower bound on dim_E(F, eps).

    Sweeps the pool repeatedly, appending every element that is certified
    eps-independent of the current sequence, until a sweep adds nothing.
    """
    if isinstance(cls, TabularClass) and cls.n_cells > 12:
        raise BudgetExceeded("eluder oracle limited to 12 tabular cells")
    if isinstance(cls, LinearClass) and cls.dim > 3:
        raise BudgetExceeded("eluder oracle limited to dimension 3")
    est = EluderEstimate(eps)
    grew = True
    while grew and est.length < max_length:
        grew = False
        for x in pool:
            cert = independence_certificate(cls, est.sequence, x, eps)
            if cert is not None:
                est.sequence.append(x)
                est.certificates.append(cert)
                grew = True
                if est.length >= max_length:
                    break
    return est


def verify_eluder(cls: FunctionClass, est: EluderEstimate) -> bool:
    return all(
        verify_certificate(cls, est.sequence[:i], est.sequence[i], est.eps, est.certificates[i])
        for i in range(est.length)
    )


# ---------------------------------------------------------------------------
# Sub-sampled dataset sandwich


@dataclass
class SandwichReport:
    alphas: list[float]
    violations: list[tuple[float, int, int, str]]
    bonus_under: np.ndarray
    bonus_hat: np.ndarray
    bonus_over: np.ndarray

    @property
    def holds(self) -> bool:
        return not self.violations

    @property
    def bonus_ordered(self) -> bool:
        tol = 1e-12
        return bool(np.all(self.bonus_under <= self.bonus_hat + tol)
                    and np.all(self.bonus_hat <= self.bonus_over + tol))


def _cell_counts(cls: TabularClass, Z: SubsampledDataset) -> np.ndarray:
    m = np.zeros(cls.n_cells)
    for z, c in Z.items():
        m[cls.cell(z)] += c
    return m


def sandwich_check(cls: TabularClass, Z: SubsampledDataset, Zhat: SubsampledDataset, beta: float,
                   net_eps: float, cap: float = math.inf, alphas: Sequence[float] | None = None,
                   budget: int = 10**7, max_violations: int = 20) -> SandwichReport:
    """Check the confidence-set containments over every pair of net functions.

    For each radius alpha (default just ``beta``):
    lower set  |f1 - f2|^2_Z <= alpha/100,
    sampled    min{|f1 - f2|^2_Zhat, cap} <= alpha,
    upper set  |f1 - f2|^2_Z <= 100 alpha;
    lower must be inside sampled and sampled inside upper.
    """
    if not isinstance(cls, TabularClass):
        raise TypeError("sandwich check is implemented for tabular classes")
    net = cls.cover(net_eps)
    if len(net) ** 2 > budget:
        raise BudgetExceeded(f"{len(net)}^2 net pairs exceeds budget {budget}")
    alphas = list(alphas) if alphas is not None else [beta]
    mZ, mZh = _cell_counts(cls, Z), _cell_counts(cls, Zhat)
    diffs = net[:, None, :] - net[None, :, :]
    sq = diffs**2
    nZ = sq @ mZ
    nZh = np.minimum(sq @ mZh, cap)
    absd = np.abs(diffs)
    violations = []
    b_under = np.zeros((len(alphas), cls.n_cells))
    b_hat = np.zeros_like(b_under)
    b_over = np.zeros_like(b_under)
    for k, alpha in enumerate(alphas):
        under = nZ <= alpha / 100
        hat = nZh <= alpha
        over = nZ <= 100 * alpha
        for kind, bad in (("under-not-hat", under & ~hat), ("hat-not-over", hat & ~over)):
            for i, j in np.argwhere(bad)[:max_violations]:
                violations.append((alpha, int(i), int(j), kind))
        b_under[k] = np.where(under[..., None], absd, 0).max(axis=(0, 1))
        b_hat[k] = np.where(hat[..., None], absd, 0).max(axis=(0, 1))
        b_over[k] = np.where(over[..., None], absd, 0).max(axis=(0, 1))
    return SandwichReport(alphas, violations, b_under, b_hat, b_over)


def sandwich_holds_along(cls: TabularClass, Z_counts: np.ndarray, Zhat_counts: np.ndarray, net_eps: float,
                         cap: float, alphas: Sequence[float], budget: int = 10**7) -> np.ndarray:
    """Vectorised :func:`sandwich_check` over a sequence of dataset snapshots.

    ``Z_counts`` and ``Zhat_counts`` have shape (n, cells): per-cell
    multiplicities after each arrival.  Returns a boolean array of length n,
    True where every containment holds for every alpha.
    """
    net = cls.cover(net_eps)
    if len(net) ** 2 > budget:
        raise BudgetExceeded(f"{len(net)}^2 net pairs exceeds budget {budget}")
    iu = np.triu_indices(len(net), k=1)  # the pair relation is symmetric
    sq = ((net[iu[0]] - net[iu[1]]) ** 2).T  # (cells, pairs)
    nZ = np.asarray(Z_counts, dtype=float) @ sq
    nZh = np.minimum(np.asarray(Zhat_counts, dtype=float) @ sq, cap)
    ok = np.ones(len(nZ), dtype=bool)
    for alpha in alphas:
        ok &= ~np.any((nZ <= alpha / 100) & (nZh > alpha), axis=1)
        ok &= ~np.any((nZh <= alpha) & (nZ > 100 * alpha), axis=1)
    return ok
