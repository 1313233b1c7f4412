"""Hypothesis classes with least squares, confidence widths, sensitivities and covers.

Two covariate kinds share one type: model-free covariates ``(s, a)`` and
model-based covariates ``(s, a, V)`` where ``V`` is a value vector over states.

Every width and sensitivity is the supremum over pairs of class members whose
(capped) squared data norm is small.  Closed forms live on the classes; the
``brute_force_*`` functions at the bottom compute the same suprema by grid
search and are kept deliberately independent of them.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_COVER_BUDGET = 10**6


class BudgetExceeded(RuntimeError):
    """Raised when an explicit enumeration would exceed its size budget."""


@dataclass(frozen=True)
class Covariate:
    s: int
    a: int
    V: tuple[float, ...] | None = None

    @property
    def model_based(self) -> bool:
        return self.V is not None

    @classmethod
    def with_values(cls, s: int, a: int, V: np.ndarray) -> "Covariate":
        return cls(int(s), int(a), tuple(float(v) for v in V))


@dataclass(frozen=True)
class ConfidenceParams:
    """Confidence radius ``beta`` and truncation cap ``T (H+1)^2``."""

    beta: float
    cap: float
    delta: float = 0.1

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.cap > 0:
            raise ValueError(f"cap must be positive, got {self.cap}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    @classmethod
    def for_run(cls, beta: float, n_episodes: int, horizon: int, delta: float = 0.1):
        T = n_episodes * horizon
        return cls(beta, T * (horizon + 1) ** 2, delta)

    @property
    def vacuous(self) -> bool:
        # min{x, cap} <= beta holds for every x once beta >= cap
        return self.beta >= self.cap


@dataclass
class RegressionDataset:
    """Pairs (x, y) with optional per-pair weights (a weight counts repeats)."""

    covariates: list[Covariate] = field(default_factory=list)
    targets: list[float] = field(default_factory=list)
    weights: list[float] | None = None

    def add(self, x: Covariate, y: float, w: float = 1.0) -> None:
        self.covariates.append(x)
        self.targets.append(float(y))
        if self.weights is None and w != 1.0:
            self.weights = [1.0] * (len(self.targets) - 1)
        if self.weights is not None:
            self.weights.append(float(w))

    def __len__(self) -> int:
        return len(self.targets)

    def weight_array(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(len(self.targets))
        return np.asarray(self.weights, dtype=np.float64)


class SubsampledDataset:
    """Multiset of covariates stored as integer multiplicities.

    Norms weight each distinct covariate by its multiplicity, which is
    identical to storing the copies.  ``changes`` counts insert events.
    """

    def __init__(self) -> None:
        self.counts: dict[Covariate, int] = {}
        self.changes = 0
        self.mass = 0
        self._cache: dict[str, tuple[int, object]] = {}

    def add(self, z: Covariate, copies: int = 1) -> None:
        if copies < 1 or int(copies) != copies:
            raise ValueError("copies must be a positive integer")
        self.counts[z] = self.counts.get(z, 0) + int(copies)
        self.mass += int(copies)
        self.changes += 1

    def multiplicity(self, z: Covariate) -> int:
        return self.counts.get(z, 0)

    def items(self):
        return self.counts.items()

    def __len__(self) -> int:
        return len(self.counts)

    def copy(self) -> "SubsampledDataset":
        out = SubsampledDataset()
        out.counts = dict(self.counts)
        out.changes = self.changes
        out.mass = self.mass
        return out

    def cached(self, key: str, build: Callable[[], object]) -> object:
        hit = self._cache.get(key)
        if hit is not None and hit[0] == self.changes:
            return hit[1]
        value = build()
        self._cache[key] = (self.changes, value)
        return value

    def sq_norm(self, diff: Callable[[Covariate], float]) -> float:
        """sum_z m_z * diff(z)^2, e.g. diff = f1 - f2."""
        return float(sum(m * diff(z) ** 2 for z, m in self.counts.items()))

    @classmethod
    def from_sequence(cls, zs: Iterable[Covariate]) -> "SubsampledDataset":
        out = cls()
        for z in zs:
            out.add(z)
        return out


def snap_to_net(z: Covariate, eps: float | None = None) -> Covariate:
    """Nearest point of the state-action cover.

    A finite state-action space is its own 0-cover, so this is the identity.
    """
    del eps
    return z


class FunctionClass:
    """Interface shared by the concrete classes."""

    def diameter(self, z: Covariate) -> float:
        raise NotImplementedError

    def fit(self, data: RegressionDataset):
        raise NotImplementedError

    def width(self, Z: SubsampledDataset, params: ConfidenceParams, query: Covariate) -> float:
        raise NotImplementedError

    def sensitivity(self, Z: SubsampledDataset, params: ConfidenceParams, z: Covariate) -> float:
        raise NotImplementedError

    def log_cover_size(self, eps: float) -> float:
        raise NotImplementedError

    def cover(self, eps: float, budget: int = DEFAULT_COVER_BUDGET) -> np.ndarray:
        raise NotImplementedError

    def eluder_dim_bound(self, eps: float) -> float:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Tabular


@dataclass(frozen=True)
class TabularClass(FunctionClass):
    """All tables over S x A with values in ``[0, value_range]``."""

    n_states: int
    n_actions: int
    value_range: float

    @classmethod
    def for_horizon(cls, n_states: int, n_actions: int, horizon: int) -> "TabularClass":
        return cls(n_states, n_actions, float(horizon + 1))

    @property
    def n_cells(self) -> int:
        return self.n_states * self.n_actions

    def cell(self, z: Covariate) -> int:
        if not (0 <= z.s < self.n_states and 0 <= z.a < self.n_actions):
            raise IndexError(f"covariate {z} out of range")
        return z.s * self.n_actions + z.a

    def counts(self, Z: SubsampledDataset) -> np.ndarray:
        def build():
            m = np.zeros(self.n_cells)
            for z, c in Z.items():
                m[self.cell(z)] += c
            return m

        return Z.cached(f"tab{self.n_states}x{self.n_actions}", build)

    def diameter(self, z: Covariate | None = None) -> float:
        return self.value_range

    def fit(self, data: RegressionDataset) -> np.ndarray:
        """Per-cell weighted mean, clipped to range; unvisited cells get the midpoint."""
        num = np.zeros(self.n_cells)
        den = np.zeros(self.n_cells)
        w = data.weight_array()
        for x, y, wi in zip(data.covariates, data.targets, w):
            c = self.cell(x)
            num[c] += wi * y
            den[c] += wi
        table = np.full(self.n_cells, self.value_range / 2)
        seen = den > 0
        table[seen] = np.clip(num[seen] / den[seen], 0.0, self.value_range)
        return table.reshape(self.n_states, self.n_actions)

    def width_table(self, Z: SubsampledDataset, params: ConfidenceParams) -> np.ndarray:
        R = self.value_range
        m = self.counts(Z)
        if params.vacuous:
            w = np.full(self.n_cells, R)
        else:
            with np.errstate(divide="ignore"):
                w = np.where(m > 0, np.minimum(R, np.sqrt(params.beta / np.maximum(m, 1e-300))), R)
        return w.reshape(self.n_states, self.n_actions)

    def width(self, Z, params, query):
        return float(self.width_table(Z, params).flat[self.cell(query)])

    def sensitivity_table(self, Z: SubsampledDataset, params: ConfidenceParams) -> np.ndarray:
        R2 = self.value_range**2
        m = self.counts(Z)
        s = R2 / (np.minimum(m * R2, params.cap) + params.beta)
        return np.minimum(s, 1.0).reshape(self.n_states, self.n_actions)

    def sensitivity(self, Z, params, z):
        R2 = self.value_range**2
        m = self.counts(Z)[self.cell(z)]
        return float(min(1.0, R2 / (min(m * R2, params.cap) + params.beta)))

    def _grid(self, eps: float) -> np.ndarray:
        step = 2.0 * eps
        n = int(math.ceil(self.value_range / step - 1e-12))
        return np.minimum(np.arange(n + 1) * step, self.value_range)

    def cover(self, eps: float, budget: int = DEFAULT_COVER_BUDGET) -> np.ndarray:
        """Product grid of step 2*eps per cell; rows are flattened tables."""
        if eps <= 0:
            raise ValueError("eps must be positive")
        g = self._grid(eps)
        if len(g) ** self.n_cells > budget:
            raise BudgetExceeded(
                f"cover of size {len(g)}^{self.n_cells} exceeds budget {budget}"
            )
        return np.array(list(itertools.product(g, repeat=self.n_cells)), dtype=np.float64)

    def log_cover_size(self, eps: float) -> float:
        return self.n_cells * math.log1p(self.value_range / (2.0 * eps))

    def eluder_dim_bound(self, eps: float) -> float:
        return float(self.n_cells)


# ---------------------------------------------------------------------------
# Linear


def _ellipsoid_ball_support(
    Lam: np.ndarray, phis: np.ndarray, beta: float, radius: float, iters: int = 48
) -> np.ndarray:
    """max phi.D subject to D' Lam D <= beta and |D|_2 <= radius, per row of ``phis``.

    Strong duality for two concentric ellipsoids gives
    ``min_{t in [0,1]} phi' (t Lam/beta + (1-t) I/radius^2)^{-1} phi``,
    a convex function of t, minimised here by vectorised golden section.
    """
    lam, U = np.linalg.eigh(Lam)
    lam = np.clip(lam, 0.0, None)
    c2 = (phis @ U) ** 2
    nonzero = c2 != 0.0
    buf = np.empty_like(c2)

    def g(t: np.ndarray) -> np.ndarray:
        den = t[:, None] * lam[None, :] / beta + (1.0 - t[:, None]) / radius**2
        buf.fill(0.0)
        return np.divide(c2, den, out=buf, where=nonzero).sum(axis=1)

    n = phis.shape[0]
    lo, hi = np.zeros(n), np.ones(n)
    inv_phi = (math.sqrt(5) - 1) / 2
    x1 = hi - inv_phi * (hi - lo)
    x2 = lo + inv_phi * (hi - lo)
    f1, f2 = g(x1), g(x2)
    for _ in range(iters):
        # one new evaluation per iteration; the other probe is reused
        left = f1 <= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        xn = np.where(left, hi - inv_phi * (hi - lo), lo + inv_phi * (hi - lo))
        fn = g(xn)
        x1, x2 = np.where(left, xn, x2), np.where(left, x1, xn)
        f1, f2 = np.where(left, fn, f2), np.where(left, f1, fn)
    best = np.minimum(np.minimum(f1, f2), g(np.zeros(n)))
    return np.sqrt(np.maximum(best, 0.0))


@dataclass(frozen=True)
class LinearClass(FunctionClass):
    """f_theta(z) = <theta, phi(z)> with |theta|_2 <= ``bound``.

    ``feature_table`` (S, A, d) supplies model-free features; subclasses may
    override :meth:`features` for model-based covariates.
    """

    dim: int
    bound: float
    feature_norm_bound: float
    feature_table: np.ndarray | None = None

    def features(self, z: Covariate) -> np.ndarray:
        return np.asarray(self.feature_table[z.s, z.a], dtype=np.float64)

    def feature_matrix(self, zs: Sequence[Covariate]) -> np.ndarray:
        if not zs:
            return np.zeros((0, self.dim))
        return np.stack([self.features(z) for z in zs])

    def gram(self, Z: SubsampledDataset) -> np.ndarray:
        def build():
            G = np.zeros((self.dim, self.dim))
            for z, m in Z.items():
                f = self.features(z)
                G += m * np.outer(f, f)
            return G

        return Z.cached(f"gram{id(self)}", build)

    def diameter(self, z: Covariate) -> float:
        return 2.0 * self.bound * float(np.linalg.norm(self.features(z)))

    def solve(self, G: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Ridge-stabilised normal equations, projected onto the parameter ball."""
        tr = float(np.trace(G))
        if tr <= 0.0:
            return np.zeros(self.dim)
        lam = 1e-8 * tr / self.dim
        theta = np.linalg.solve(G + lam * np.eye(self.dim), b)
        norm = float(np.linalg.norm(theta))
        if norm > self.bound:
            theta *= self.bound / norm
        return theta

    def fit(self, data: RegressionDataset) -> np.ndarray:
        X = self.feature_matrix(data.covariates)
        y = np.asarray(data.targets, dtype=np.float64)
        w = data.weight_array()
        return self.solve((X * w[:, None]).T @ X, X.T @ (w * y))

    def width_many(self, Z: SubsampledDataset, params: ConfidenceParams, phis: np.ndarray) -> np.ndarray:
        phis = np.atleast_2d(phis)
        diam = 2.0 * self.bound * np.linalg.norm(phis, axis=1)
        if params.vacuous:
            return diam
        w = _ellipsoid_ball_support(self.gram(Z), phis, params.beta, 2.0 * self.bound)
        return np.minimum(w, diam)

    def width(self, Z, params, query):
        return float(self.width_many(Z, params, self.features(query)[None, :])[0])

    def sensitivity_many(self, Z: SubsampledDataset, params: ConfidenceParams, phis: np.ndarray) -> np.ndarray:
        # On the sphere |D| = 2B the ratio (D.phi)^2 / (D'Lam D + beta) becomes a
        # Rayleigh quotient of Lam + beta/(4B^2) I; exact while the cap is inactive.
        phis = np.atleast_2d(phis)
        G = self.gram(Z)
        r2 = (2.0 * self.bound) ** 2
        M = G + (params.beta / r2) * np.eye(self.dim)
        lev = np.einsum("ij,ij->i", phis, np.linalg.solve(M, phis.T).T)
        lam_max = float(np.linalg.eigvalsh(G)[-1]) if self.dim else 0.0
        if r2 * lam_max > params.cap:
            # cap may bind: fall back to an upper bound (over-samples, never under-samples)
            lev = np.maximum(lev, r2 * (phis**2).sum(axis=1) / (params.cap + params.beta))
        return np.minimum(lev, 1.0)

    def sensitivity(self, Z, params, z):
        return float(self.sensitivity_many(Z, params, self.features(z)[None, :])[0])

    def _grid_step(self, eps: float) -> float:
        # half-diagonal of a grid cube times the feature bound stays below eps
        return 2.0 * eps / (self.feature_norm_bound * math.sqrt(self.dim))

    def cover(self, eps: float, budget: int = DEFAULT_COVER_BUDGET) -> np.ndarray:
        """Cubic parameter grid whose cells cover the ball; rows are parameters."""
        if eps <= 0:
            raise ValueError("eps must be positive")
        step = self._grid_step(eps)
        reach = self.bound + step * math.sqrt(self.dim) / 2
        n = int(math.ceil(reach / step))
        if (2 * n + 1) ** self.dim > budget:
            raise BudgetExceeded(f"cover grid {(2 * n + 1)}^{self.dim} exceeds budget {budget}")
        axis = np.arange(-n, n + 1) * step
        pts = np.array(list(itertools.product(axis, repeat=self.dim)))
        keep = np.linalg.norm(pts, axis=1) <= reach
        return pts[keep]

    def log_cover_size(self, eps: float) -> float:
        return self.dim * math.log1p(2.0 * self.bound * self.feature_norm_bound / eps)

    def eluder_dim_bound(self, eps: float) -> float:
        return self.dim * max(1.0, math.log(2.0 * self.bound * self.feature_norm_bound / eps))


@dataclass(frozen=True)
class MixtureInducedClass(LinearClass):
    """f_theta(s, a, V) = <P_theta(.|s,a), V> over the base kernels of one step."""

    kernels: np.ndarray | None = None  # (d, S, A, S)

    @classmethod
    def from_mixture(cls, mixture, h: int) -> "MixtureInducedClass":
        return cls(
            dim=mixture.dim,
            bound=float(mixture.theta_bound),
            feature_norm_bound=math.sqrt(mixture.horizon),
            kernels=np.asarray(mixture.base_kernels[h]),
        )

    def features(self, z: Covariate) -> np.ndarray:
        if z.V is None:
            raise TypeError("mixture-induced class needs a model-based covariate")
        return self.kernels[:, z.s, z.a, :] @ np.asarray(z.V)

    def feature_grid(self, V: np.ndarray) -> np.ndarray:
        """phi_V for every (s, a); shape (S, A, d)."""
        return np.einsum("jsat,t->saj", self.kernels, V)


# ---------------------------------------------------------------------------
# Brute-force oracles


ORACLE_TABULAR_CELLS = 12
ORACLE_LINEAR_DIM = 3


def _tabular_difference_search(cls: TabularClass, Z: SubsampledDataset, query: Covariate, eps_frac: float):
    """Enumerate pairwise differences on the value grid of every cell.

    Returns the grid of query-cell differences and, for each, the smallest
    attainable squared data norm (other cells contribute independently, so
    their minimum is taken by a per-cell search of the same grid).
    """
    if cls.n_cells > ORACLE_TABULAR_CELLS:
        raise BudgetExceeded(f"oracle limited to {ORACLE_TABULAR_CELLS} cells")
    step = eps_frac * cls.value_range
    n = int(round(cls.value_range / step))
    diffs = np.arange(-n, n + 1) * step
    m = np.zeros(cls.n_cells)
    for z, c in Z.items():
        m[cls.cell(z)] += c
    q = cls.cell(query)
    rest = 0.0
    for c in range(cls.n_cells):
        if c != q:
            rest += float(np.min(m[c] * diffs**2))
    return diffs, m[q] * diffs**2 + rest


def _sphere_directions(dim: int, n: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        ang = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if dim == 3:
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        r = np.sqrt(1 - z**2)
        ang = np.pi * (1 + 5**0.5) * i
        return np.stack([r * np.cos(ang), r * np.sin(ang), z], axis=1)
    raise BudgetExceeded(f"oracle limited to dimension <= {ORACLE_LINEAR_DIM}")


def linear_pair_search(
    cls: LinearClass, Z: SubsampledDataset, params: ConfidenceParams, phi: np.ndarray,
    n_dirs: int | None = None, refine: bool = True,
) -> tuple[float, np.ndarray]:
    """Grid search over difference directions D = theta1 - theta2, |D| <= 2B,
    followed by shrinking random refinement around the best grid direction.

    Returns the best |D.phi| and the maximising difference vector.
    """
    G = np.zeros((cls.dim, cls.dim))
    for z, m in Z.items():
        f = cls.features(z)
        G += m * np.outer(f, f)
    n_dirs = n_dirs or {1: 2, 2: 40000, 3: 400000}.get(cls.dim, 0)
    U = _sphere_directions(cls.dim, n_dirs)

    def score(U):
        quad = np.einsum("ij,jk,ik->i", U, G, U)
        r = np.full(len(U), 2.0 * cls.bound)
        if not params.vacuous:
            with np.errstate(divide="ignore"):
                r = np.minimum(r, np.sqrt(params.beta / np.maximum(quad, 1e-300)))
        return r, r * np.abs(U @ phi)

    r, vals = score(U)
    i = int(np.argmax(vals))
    best_u, best_r, best = U[i], r[i], vals[i]
    # local refinement: resample shrinking neighbourhoods of the incumbent
    if cls.dim > 1 and refine:
        rng = np.random.default_rng(0)
        spread = 4.0 * math.sqrt(4.0 * math.pi / max(len(U), 1))
        for _ in range(30):
            cand = best_u + spread * rng.normal(size=(256, cls.dim))
            cand /= np.linalg.norm(cand, axis=1, keepdims=True)
            r, vals = score(cand)
            j = int(np.argmax(vals))
            if vals[j] > best:
                best_u, best_r, best = cand[j], r[j], vals[j]
            else:
                spread *= 0.6
    return float(best), best_r * best_u * np.sign(best_u @ phi)


def brute_force_width(cls: FunctionClass, Z: SubsampledDataset, params: ConfidenceParams,
                      query: Covariate, eps_frac: float = 1e-4) -> float:
    if isinstance(cls, TabularClass):
        diffs, norms = _tabular_difference_search(cls, Z, query, eps_frac)
        ok = np.minimum(norms, params.cap) <= params.beta
        return float(np.max(np.abs(diffs[ok])))
    if isinstance(cls, LinearClass):
        if cls.dim > ORACLE_LINEAR_DIM:
            raise BudgetExceeded(f"oracle limited to dimension <= {ORACLE_LINEAR_DIM}")
        return linear_pair_search(cls, Z, params, cls.features(query))[0]
    raise TypeError(f"no oracle for {type(cls).__name__}")


def brute_force_sensitivity(cls: FunctionClass, Z: SubsampledDataset, params: ConfidenceParams,
                            z: Covariate, eps_frac: float = 1e-3) -> float:
    if isinstance(cls, TabularClass):
        diffs, norms = _tabular_difference_search(cls, Z, z, eps_frac)
        ratio = diffs**2 / (np.minimum(norms, params.cap) + params.beta)
        return float(min(1.0, ratio.max()))
    if isinstance(cls, LinearClass):
        if cls.dim > ORACLE_LINEAR_DIM:
            raise BudgetExceeded(f"oracle limited to dimension <= {ORACLE_LINEAR_DIM}")
        G = np.zeros((cls.dim, cls.dim))
        for x, m in Z.items():
            f = cls.features(x)
            G += m * np.outer(f, f)
        U = _sphere_directions(cls.dim, {1: 2, 2: 20000, 3: 100000}[cls.dim])
        radii = np.linspace(0.0, 2.0 * cls.bound, 41)[1:]
        phi = cls.features(z)
        num = (U @ phi) ** 2
        quad = np.einsum("ij,jk,ik->i", U, G, U)
        best = 0.0
        for r in radii:
            ratio = r * r * num / (np.minimum(r * r * quad, params.cap) + params.beta)
            best = max(best, float(ratio.max()))
        return min(1.0, best)
    raise TypeError(f"no oracle for {type(cls).__name__}")
