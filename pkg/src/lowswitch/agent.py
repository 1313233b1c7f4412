"""Low-switching-cost optimistic value iteration.

The agent replans only in the first episode and in episodes where some
sub-sampled dataset grew.  Between replans it acts greedily with respect to
the last optimistic Q table, so the deployed policy changes at most that often.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .function_class import (
    ConfidenceParams,
    Covariate,
    FunctionClass,
    LinearClass,
    MixtureInducedClass,
    RegressionDataset,
    SubsampledDataset,
    TabularClass,
    snap_to_net,
)
from .mdp import (
    EpisodicMdp,
    LinearMixtureMdp,
    Policy,
    exact_policy_value,
    exact_q_star,
    gap_min as mdp_gap_min,
    greedy_policy,
)
from .runlog import GapHistogram, RunLog
from .subsampler import Mode, SamplerConfig, decide, inclusion_probability

OPTIMISM_TOL = 1e-9


@dataclass(frozen=True)
class AgentConfig:
    """``beta`` is a positive number (fixed schedule) or the string ``"theory"``."""

    mode: Mode = Mode.MODEL_FREE
    n_episodes: int = 1000
    beta: float | str = 1.0
    delta: float = 0.1
    sampler_C: float = 1.0
    theory_C: float = 1.0
    theory_log_form: str = "episodes"
    seed: int = 0
    always_switch: bool = False
    regress_on_subsample: bool = False
    record_timing: bool = False
    feature_table: tuple | None = None  # (S, A, d) nested lists for a linear model-free class
    feature_bound: float = 1.0

    def __post_init__(self) -> None:
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be >= 1")
        if isinstance(self.beta, str):
            if self.beta != "theory":
                raise ValueError(f"beta must be a positive number or 'theory', got {self.beta!r}")
        elif not self.beta > 0:
            raise ValueError("fixed beta must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.theory_log_form not in ("episodes", "steps"):
            raise ValueError("theory_log_form must be 'episodes' or 'steps'")
        object.__setattr__(self, "mode", Mode(self.mode))


# ---------------------------------------------------------------------------
# Confidence radius


def theory_beta_model_free(log_cover: float, eluder_dim: float, n_cells_sa: int, horizon: int,
                           T: int, delta: float, C: float = 1.0) -> float:
    """C H^2 log(T N(F, d/T^2)/d) dim_E(F, 1/T) log^2 T log(N(SxA, d/T^2) T / d).

    ``log_cover`` is log N(F, delta/T^2); the finite state-action space is its
    own cover, so its covering number is ``n_cells_sa``.
    """
    lt = math.log(T) if T > 1 else 1.0
    return (
        C * horizon**2 * (math.log(T / delta) + log_cover) * eluder_dim * lt**2
        * math.log(n_cells_sa * T / delta)
    )


def theory_beta_model_based(log_cover: float, horizon: int, n_episodes: int, delta: float,
                            C: float = 1.0, log_form: str = "episodes") -> float:
    """4 H^2 log(2 N(F, 1/T)/d) + (4/H)(C + sqrt(H^2/4 * L)).

    ``L`` is log(4K(K+1)/d) with the "episodes" form and log(T/d) with the "steps" form.
    """
    K, H = n_episodes, horizon
    L = math.log(4 * K * (K + 1) / delta) if log_form == "episodes" else math.log(K * H / delta)
    return 4 * H**2 * (math.log(2.0 / delta) + log_cover) + (4.0 / H) * (C + math.sqrt(H**2 / 4 * L))


def compute_beta(config: AgentConfig, classes: Sequence[FunctionClass], horizon: int,
                 n_cells_sa: int) -> float:
    if not isinstance(config.beta, str):
        return float(config.beta)
    T = config.n_episodes * horizon
    if config.mode is Mode.MODEL_FREE:
        eps = config.delta / T**2
        log_cover = max(c.log_cover_size(eps) for c in classes)
        dim_e = max(c.eluder_dim_bound(1.0 / T) for c in classes)
        return theory_beta_model_free(log_cover, dim_e, n_cells_sa, horizon, T, config.delta, config.theory_C)
    log_cover = max(c.log_cover_size(1.0 / T) for c in classes)
    return theory_beta_model_based(log_cover, horizon, config.n_episodes, config.delta,
                                   config.theory_C, config.theory_log_form)


# ---------------------------------------------------------------------------
# Execution history (sufficient statistics of the full history per step)


class StepHistory:
    """Everything observed at one step h across episodes."""

    def __init__(self, n_states: int, n_actions: int, dim: int = 0) -> None:
        self.visits = np.zeros((n_states, n_actions))
        self.next_counts = np.zeros((n_states, n_actions, n_states))
        self.reward_sums = np.zeros((n_states, n_actions))
        self.gram = np.zeros((dim, dim))
        self.moment = np.zeros(dim)
        self.transitions: list[tuple[int, int, float, int]] = []
        # sampled records for regress-on-subsample: (s, a, r, s', V index or -1, copies)
        self.sampled: list[tuple[int, int, float, int, int, int]] = []

    def record(self, s: int, a: int, r: float, s2: int) -> None:
        self.visits[s, a] += 1
        self.next_counts[s, a, s2] += 1
        self.reward_sums[s, a] += r
        self.transitions.append((s, a, r, s2))

    def record_value_target(self, phi: np.ndarray, y: float) -> None:
        self.gram += np.outer(phi, phi)
        self.moment += phi * y


def q_estimate_model_free(
    cls: FunctionClass,
    hist: StepHistory,
    Z: SubsampledDataset,
    V_next: np.ndarray,
    params: ConfidenceParams,
    horizon: int,
    regress_on_subsample: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least squares on all data plus the sub-sample width, clipped at H.

    Returns (Q_h, bonus_h, fitted_h), each of shape (S, A).  The regression
    targets r + V_next(s') are aggregated per cell with their visit counts as
    weights, which leaves the least-squares minimiser unchanged.
    """
    S, A = hist.visits.shape
    data = RegressionDataset()
    if regress_on_subsample:
        for s, a, r, s2, _, copies in hist.sampled:
            data.add(Covariate(s, a), r + V_next[s2], copies)
    else:
        n = hist.visits
        seen = np.argwhere(n > 0)
        means = (hist.reward_sums + hist.next_counts @ V_next) / np.maximum(n, 1)
        for s, a in seen:
            data.add(Covariate(int(s), int(a)), float(means[s, a]), float(n[s, a]))
    if isinstance(cls, TabularClass):
        fitted = cls.fit(data)
        bonus = cls.width_table(Z, params)
    elif isinstance(cls, LinearClass):
        theta = cls.fit(data)
        feats = np.asarray(cls.feature_table, dtype=np.float64)
        fitted = feats @ theta
        bonus = cls.width_many(Z, params, feats.reshape(S * A, -1)).reshape(S, A)
    else:
        raise TypeError(f"unsupported class {type(cls).__name__}")
    Q = np.clip(fitted + bonus, 0.0, horizon)
    return Q, bonus, fitted


def q_estimate_model_based(
    cls: MixtureInducedClass,
    hist: StepHistory,
    Z: SubsampledDataset,
    V_next: np.ndarray,
    params: ConfidenceParams,
    rewards_h: np.ndarray,
    horizon: int,
    regress_on_subsample: bool = False,
    value_bank: Sequence[np.ndarray] = (),
    h: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value-targeted regression plus the sub-sample width, clipped at H.

    Returns (Q_h, bonus_h, theta_hat).  ``value_bank`` and ``h`` are only used
    when regressing on the sub-sample: records point at past value tables.
    """
    if regress_on_subsample:
        G = np.zeros((cls.dim, cls.dim))
        b = np.zeros(cls.dim)
        for s, a, _, s2, vi, copies in hist.sampled:
            V = value_bank[vi][h + 1]
            phi = cls.kernels[:, s, a, :] @ V
            G += copies * np.outer(phi, phi)
            b += copies * phi * V[s2]
        theta = cls.solve(G, b)
    else:
        theta = cls.solve(hist.gram, hist.moment)
    feats = cls.feature_grid(V_next)
    S, A, d = feats.shape
    bonus = cls.width_many(Z, params, feats.reshape(S * A, d)).reshape(S, A)
    Q = np.clip(rewards_h + feats @ theta + bonus, 0.0, horizon)
    return Q, bonus, theta


# ---------------------------------------------------------------------------
# Agent


@dataclass
class Plan:
    Q: np.ndarray  # (H+1, S, A)
    V: np.ndarray  # (H+1, S)
    bonus: np.ndarray  # (H, S, A)
    policy: Policy
    thetas: list[np.ndarray] = field(default_factory=list)
    value_index: int = -1


class LowSwitchAgent:
    """State of one run: datasets, history, current plan and switch counters."""

    def __init__(self, config: AgentConfig, env: EpisodicMdp | LinearMixtureMdp) -> None:
        self.config = config
        if config.mode is Mode.MODEL_BASED:
            if not isinstance(env, LinearMixtureMdp):
                raise TypeError("model-based mode needs a LinearMixtureMdp")
            self.mixture = env
            self.mdp = env.mdp
        else:
            self.mixture = env if isinstance(env, LinearMixtureMdp) else None
            self.mdp = env.mdp if isinstance(env, LinearMixtureMdp) else env
        H, S, A = self.mdp.horizon, self.mdp.n_states, self.mdp.n_actions
        self.horizon = H
        self.classes = self._build_classes()
        self.beta = compute_beta(config, self.classes, H, S * A)
        self.params = ConfidenceParams.for_run(self.beta, config.n_episodes, H, config.delta)
        T = config.n_episodes * H
        self.sampler_cfgs = [
            SamplerConfig.build(c, T, config.delta, config.sampler_C, config.mode) for c in self.classes
        ]
        dim = self.classes[0].dim if config.mode is Mode.MODEL_BASED else 0
        self.history = [StepHistory(S, A, dim) for _ in range(H)]
        self.datasets = [SubsampledDataset() for _ in range(H)]
        self.plan: Plan | None = None
        self.last_replan = 0
        self.n_switch_ds = 0
        self.n_switch_pi = 0
        self.value_bank: list[np.ndarray] = []
        self.prob_sum = 0.0

    def _build_classes(self) -> list[FunctionClass]:
        H, S, A = self.mdp.horizon, self.mdp.n_states, self.mdp.n_actions
        cfg = self.config
        if cfg.mode is Mode.MODEL_BASED:
            return [MixtureInducedClass.from_mixture(self.mixture, h) for h in range(H)]
        if cfg.feature_table is not None:
            feats = np.asarray(cfg.feature_table, dtype=np.float64)
            if feats.shape[:2] != (S, A):
                raise ValueError(f"feature_table must have shape ({S}, {A}, d)")
            cls = LinearClass(feats.shape[2], H + 1.0, cfg.feature_bound, feats)
            return [cls] * H
        return [TabularClass.for_horizon(S, A, H)] * H

    def replan(self) -> Plan:
        """Backward pass through the configured estimator."""
        H, S, A = self.mdp.horizon, self.mdp.n_states, self.mdp.n_actions
        Q = np.zeros((H + 1, S, A))
        V = np.zeros((H + 1, S))
        bonus = np.zeros((H, S, A))
        thetas = []
        for h in range(H - 1, -1, -1):
            if self.config.mode is Mode.MODEL_BASED:
                Q[h], bonus[h], theta = q_estimate_model_based(
                    self.classes[h], self.history[h], self.datasets[h], V[h + 1], self.params,
                    self.mdp.rewards[h], H, self.config.regress_on_subsample, self.value_bank, h,
                )
                thetas.append(theta)
            else:
                Q[h], bonus[h], _ = q_estimate_model_free(
                    self.classes[h], self.history[h], self.datasets[h], V[h + 1], self.params, H,
                    self.config.regress_on_subsample,
                )
            V[h] = Q[h].max(axis=1)
        thetas.reverse()
        plan = Plan(Q, V, bonus, greedy_policy(Q[:H]), thetas)
        if self.config.mode is Mode.MODEL_BASED:
            self.value_bank.append(V.copy())
            plan.value_index = len(self.value_bank) - 1
        return plan

    def covariate(self, h: int, s: int, a: int) -> Covariate:
        if self.config.mode is Mode.MODEL_BASED:
            return Covariate.with_values(s, a, self.plan.V[h + 1])
        return Covariate(s, a)

    def offer(self, h: int, z: Covariate, u: float, record: tuple | None = None) -> bool:
        """Run the sampling routine for step h; True if the dataset changed."""
        cls = self.classes[h]
        Z = self.datasets[h]
        if self.config.mode is Mode.MODEL_FREE:
            z = snap_to_net(z)
        p = inclusion_probability(cls.sensitivity(Z, self.params, z), self.sampler_cfgs[h])
        self.prob_sum += p
        dec = decide(p, u)
        if dec.accepted:
            Z.add(z, dec.copies)
            if record is not None:
                self.history[h].sampled.append(record + (dec.copies,))
        return dec.accepted


def run(config: AgentConfig, env: EpisodicMdp | LinearMixtureMdp, *, track: bool = True,
        rng: np.random.Generator | None = None) -> RunLog:
    """Execute K episodes and log regret, switches and diagnostics.

    With ``track`` the summary also carries optimism checks against Q*, the
    bonus sum at visited pairs and the suboptimality histogram.
    """
    agent = LowSwitchAgent(config, env)
    mdp = agent.mdp
    H, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    K = config.n_episodes
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    star = exact_q_star(mdp)
    v_star = float(star.V[0, mdp.initial_state])
    gmin = mdp_gap_min(mdp)
    hist = GapHistogram(gmin, H)
    log = RunLog(seed=config.seed)
    Qstar = star.Q[:H]

    prev_steps: list[tuple[int, int, float, int]] | None = None
    prev_vi = -1
    inst = 0.0
    pi_values = None
    optimistic_visits = 0
    visits_total = 0
    all_visited_optimistic = True
    optimistic_cells = 0.0
    bonus_sum = 0.0
    per_episode_bonus = np.zeros(K) if track else None

    for k in range(K):
        changed = False
        u = rng.random(2 * H)
        if k >= 1:
            for h in range(H - 1, -1, -1):
                s, a, r, s2 = prev_steps[h]
                if config.mode is Mode.MODEL_BASED:
                    z = Covariate.with_values(s, a, agent.value_bank[prev_vi][h + 1])
                    rec = (s, a, r, s2, prev_vi)
                else:
                    z = Covariate(s, a)
                    rec = (s, a, r, s2, -1)
                changed |= agent.offer(h, z, float(u[H + h]), rec)
        switched_ds = k == 0 or changed or config.always_switch
        switched_pi = False
        ms = 0.0
        if switched_ds:
            t0 = time.perf_counter()
            new_plan = agent.replan()
            if config.record_timing:
                ms = (time.perf_counter() - t0) * 1e3
            switched_pi = agent.plan is not None and new_plan.policy != agent.plan.policy
            if agent.plan is None or switched_pi:
                pi_values = exact_policy_value(mdp, new_plan.policy)
                inst = v_star - float(pi_values.V[0, mdp.initial_state])
            agent.plan = new_plan
            agent.last_replan = k
            agent.n_switch_ds += 1
            agent.n_switch_pi += int(switched_pi)
            if track:
                optimistic_cells_now = float(np.mean(new_plan.Q[:H] >= Qstar - OPTIMISM_TOL))
        plan = agent.plan
        if track:
            optimistic_cells += optimistic_cells_now

        # act
        s = mdp.initial_state
        steps = []
        V_use = plan.V
        for h in range(H):
            a = int(plan.policy.actions[h, s])
            s2 = mdp.next_state(h, s, a, u[h])
            r = float(mdp.rewards[h, s, a])
            steps.append((s, a, r, s2))
            agent.history[h].record(s, a, r, s2)
            if config.mode is Mode.MODEL_BASED:
                phi = agent.classes[h].kernels[:, s, a, :] @ V_use[h + 1]
                agent.history[h].record_value_target(phi, float(V_use[h + 1][s2]))
            if track:
                ok = plan.Q[h, s, a] >= Qstar[h, s, a] - OPTIMISM_TOL
                optimistic_visits += int(ok)
                all_visited_optimistic &= bool(ok)
                visits_total += 1
                b = float(plan.bonus[h, s, a])
                bonus_sum += b
                per_episode_bonus[k] += b
                hist.add(star.V[h, s] - pi_values.Q[h, s, a])
            s = s2
        prev_steps = steps
        prev_vi = plan.value_index
        log.append(inst, switched_ds, switched_pi, sum(Z.mass for Z in agent.datasets), ms)

    summary = {
        "n_switch_ds": agent.n_switch_ds,
        "n_switch_pi": agent.n_switch_pi,
        "regret": log.regret,
        "gap_min": gmin,
        "beta": agent.beta,
        "v_star": v_star,
        "n_episodes": K,
        "inclusion_prob_sum": agent.prob_sum,
    }
    if track:
        summary.update(
            histogram=hist.counts,
            histogram_below=hist.below,
            bonus_sum=bonus_sum,
            optimistic_visit_fraction=optimistic_visits / max(visits_total, 1),
            all_visited_optimistic=all_visited_optimistic,
            optimistic_cell_fraction=optimistic_cells / K,
        )
    if config.mode is Mode.MODEL_BASED:
        final = agent.replan()
        summary["theta_hat"] = [t.tolist() for t in final.thetas]
        summary["theta_star"] = agent.mixture.theta.tolist()
    log.summary = summary
    log._agent = agent  # in-process diagnostics; not serialised
    log._bonus_per_episode = per_episode_bonus
    return log
