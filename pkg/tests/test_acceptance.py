"""Acceptance gate: each criterion runs at its stated tolerance and reports one line."""
from __future__ import annotations

import math
import time

import numpy as np
import pytest

from lowswitch.agent import AgentConfig, run
from lowswitch.checks import random_linear_instance, random_mdp, random_tabular_instance
from lowswitch.envs import chain, mixture
from lowswitch.function_class import (
    ConfidenceParams,
    Covariate,
    LinearClass,
    SubsampledDataset,
    TabularClass,
    brute_force_sensitivity,
    brute_force_width,
)
from lowswitch.harness import ExperimentConfig, make_rng, run_experiment, summarize, write_results
from lowswitch.mdp import exact_q_star
from lowswitch.oracle import brute_force_policy_values, eluder_dimension_estimate, sandwich_holds_along, verify_eluder
from lowswitch.subsampler import SamplerConfig, decide, inclusion_probability, maybe_add

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []


def report(cid: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] C{cid:<2d} {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. exact Q* against policy enumeration


def test_c01_oracle_equivalence():
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    worst, shapes = 0.0, set()
    for _ in range(50):
        S = int(rng.integers(1, 5))
        # 3^(S*H) policies must stay within the enumeration budget of 1e5
        H = int(rng.integers(1, min(4, 10 // S) + 1))
        mdp = random_mdp(rng, S, 3, H)
        _, values = brute_force_policy_values(mdp)
        worst = max(worst, abs(values.max() - exact_q_star(mdp).V[0, mdp.initial_state]))
        shapes.add((S, H))
    secs = time.perf_counter() - t0
    report(1, "oracle equivalence", worst <= 1e-10 and secs < 10,
           f"max deviation {worst:.2e} (tol 1e-10) over 50 MDPs, {len(shapes)} (S,H) shapes, {secs:.1f}s (< 10s)")


# ---------------------------------------------------------------------------
# 2. closed-form widths and sensitivities against grid search


def test_c02_width_sensitivity_closed_forms():
    rng = np.random.default_rng(1002)
    t0 = time.perf_counter()
    worst = {"tabular": 0.0, "linear": 0.0}
    for kind, make, n in (("tabular", random_tabular_instance, 200), ("linear", random_linear_instance, 100)):
        for _ in range(n):
            cls, Z, params, q = make(rng)
            w = abs(cls.width(Z, params, q) - brute_force_width(cls, Z, params, q))
            s = abs(cls.sensitivity(Z, params, q) - brute_force_sensitivity(cls, Z, params, q))
            worst[kind] = max(worst[kind], w, s)
    secs = time.perf_counter() - t0
    ok = max(worst.values()) <= 5e-3 and secs < 120
    report(2, "width/sensitivity closed forms", ok,
           f"max deviation tabular {worst['tabular']:.2e}, linear {worst['linear']:.2e} (tol 5e-3), "
           f"{secs:.1f}s (< 120s)")


# ---------------------------------------------------------------------------
# 3. sub-sampling is unbiased


def test_c03_subsampling_unbiased():
    t0 = time.perf_counter()
    cfg = SamplerConfig(C=0.3, delta=0.1, T=1000, log_net=1.0)
    p = inclusion_probability(1.0, cfg)
    assert p == 1 / 3
    rng = make_rng(1003)
    cls = TabularClass(1, 1, 1.0)
    params = ConfidenceParams(1.0, math.inf)
    n = 10**5
    added = np.empty(n)
    u = rng.random(n)
    for i in range(n):
        # a fresh dataset per trial keeps the sensitivity, hence p, fixed
        Z, _, dec = maybe_add(SubsampledDataset(), Covariate(0, 0), cls, params, cfg, float(u[i]))
        assert dec.p == p
        added[i] = Z.multiplicity(Covariate(0, 0))
    mean, se = added.mean(), added.std(ddof=1) / math.sqrt(n)
    direct = np.array([decide(p, x).copies for x in u]).mean()
    secs = time.perf_counter() - t0
    ok = abs(mean - 1.0) <= 3 * se and direct == mean and secs < 30
    report(3, "sub-sampling unbiased", ok,
           f"mean multiplicity {mean:.4f}, |mean-1| = {abs(mean - 1):.4f} vs 3 sigma = {3 * se:.4f}, "
           f"{secs:.1f}s (< 30s)")


# ---------------------------------------------------------------------------
# 4. dataset sandwich


def sandwich_run(seed: int, n: int = 300, beta: float = 1.0, delta: float = 0.1) -> bool:
    cls = TabularClass(2, 2, 2.0)
    cells = [Covariate(s, a) for s in range(2) for a in range(2)]
    probs = np.array([0.55, 0.3, 0.1, 0.05])
    cap = n * cls.value_range**2
    params = ConfidenceParams(beta, cap)
    cfg = SamplerConfig.build(cls, n, delta, C=1.0)
    rng = make_rng(seed)
    Z, Zh = SubsampledDataset(), SubsampledDataset()
    zc = np.zeros((n, 4))
    hc = np.zeros((n, 4))
    for t in range(n):
        z = cells[int(rng.choice(4, p=probs))]
        maybe_add(Zh, z, cls, params, cfg, rng)
        Z.add(z)
        zc[t] = [Z.multiplicity(c) for c in cells]
        hc[t] = [Zh.multiplicity(c) for c in cells]
    alphas = [beta * 100.0**j for j in range(10) if beta * 100.0**j <= cap]
    return bool(sandwich_holds_along(cls, zc, hc, 0.5, cap, alphas).all())


def test_c04_dataset_sandwich():
    t0 = time.perf_counter()
    held = sum(sandwich_run(4000 + i) for i in range(200))
    secs = time.perf_counter() - t0
    ok = held >= math.ceil((1 - 0.1) * 200) and secs < 300
    report(4, "dataset sandwich", ok, f"containments held in {held}/200 runs (need >= 180), {secs:.1f}s (< 300s)")


# ---------------------------------------------------------------------------
# 5. optimism under the theory radius


@pytest.mark.parametrize("setting", ["chain(2,1,0.4)", "mixture(3,3,2,3)"])
def test_c05_optimism(setting):
    if setting.startswith("chain"):
        env, mode = chain(2, 1, 0.4), "model_free"
    else:
        env, mode = mixture(3, 3, 2, 3, seed=0), "model_based"
    t0 = time.perf_counter()
    optimistic = 0
    for seed in range(100):
        cfg = AgentConfig(mode=mode, beta="theory", n_episodes=512, seed=seed)
        log = run(cfg, env, rng=make_rng(seed))
        optimistic += bool(log.summary["all_visited_optimistic"])
    secs = time.perf_counter() - t0
    ok = optimistic >= 95 and secs < 300
    report(5, f"optimism {setting}", ok,
           f"Q >= Q* at all visited pairs in {optimistic}/100 runs (need >= 95), {secs:.1f}s (< 300s)")


# ---------------------------------------------------------------------------
# 6-8. shared chain(5,4,0.2) sweep

SWEEP_K = [2**i for i in range(8, 15)]
SWEEP_ENV = {"name": "chain", "n": 5, "horizon": 4, "gap": 0.2}


@pytest.fixture(scope="module")
def sweep():
    t0 = time.perf_counter()
    tuned = ExperimentConfig.from_dict({
        "env": SWEEP_ENV,
        "agent": {"mode": "model_free", "sampler_C": 0.02},
        "K": SWEEP_K,
        "seeds": {"base": 0, "count": 20},
        "beta_grid": [0.5, 1, 2, 4],
        "baselines": ["always-switch", "uniform-random"],
    })
    theory = ExperimentConfig.from_dict({
        "env": SWEEP_ENV,
        "agent": {"mode": "model_free", "sampler_C": 0.02, "beta": "theory"},
        "K": SWEEP_K,
        "seeds": {"base": 0, "count": 20},
    })
    tuned_results = run_experiment(tuned, workers=None)
    theory_results = run_experiment(theory, workers=None)
    secs = time.perf_counter() - t0
    summary = summarize(tuned_results)
    summary["variants"]["agent[beta=theory]"] = summarize(theory_results)["variants"]["agent"]
    always = [r.log for r in tuned_results if r.cell.variant == "always-switch"]
    return {"summary": summary, "always": always, "seconds": secs}


def test_c06_switching_logarithmic(sweep):
    s = sweep["summary"]
    best = s["best_tuned"]
    entry = s["variants"][best]
    fit = entry["switch_fit"]
    n_last = entry["median"]["n_switch_ds"][-1]
    exact = all(log.n_switch_ds == log.summary["n_episodes"] for log in sweep["always"])
    ok = fit["r2"] >= 0.9 and n_last <= 0.02 * 2**14 and exact and sweep["seconds"] < 1800
    report(6, "switching logarithmic", ok,
           f"{best}: median switches {entry['median']['n_switch_ds']}, (log K)^2 fit R^2 = {fit['r2']:.3f} "
           f"(need >= 0.9), N(2^14) = {n_last:g} (limit {0.02 * 2**14:g}); "
           f"always-switch exact K in {sum(l.n_switch_ds == l.summary['n_episodes'] for l in sweep['always'])}"
           f"/{len(sweep['always'])} runs; sweep {sweep['seconds']:.0f}s (< 1800s)")


def loglog_slope(K, y) -> float:
    return float(np.polyfit(np.log(np.asarray(K, float)), np.log(np.maximum(y, 1e-12)), 1)[0])


def test_c07_regret_sublinear(sweep):
    s = sweep["summary"]
    best = s["best_tuned"]
    K = s["variants"][best]["K"]
    reg = dict(zip(K, s["variants"][best]["median"]["regret"]))
    concave = {k: reg[2 * k] - reg[k] <= reg[k] - reg[k // 2] for k in (2**11, 2**12, 2**13)}
    unif = s["variants"]["uniform-random"]["median"]["regret"][-1]
    beats = reg[2**14] <= 0.25 * unif
    th = s["variants"]["agent[beta=theory]"]
    # sublinear: the fitted exponent of median regret in K stays below 0.95
    slope = loglog_slope(th["K"], th["median"]["regret"])
    ok = all(concave.values()) and beats and slope <= 0.95 and sweep["seconds"] < 1800
    incr = [round(reg[2 * k] - reg[k], 1) for k in K[:-1]]
    report(7, "regret sublinear, gap-sensitive", ok,
           f"{best}: regret increments {incr}, concave for K >= 2^11: {all(concave.values())}; "
           f"Regret(2^14) = {reg[2**14]:.1f} vs 0.25 x uniform {0.25 * unif:.1f}; "
           f"theory-beta log-log slope {slope:.3f} (need <= 0.95)")


def test_c08_histogram_saturation(sweep):
    s = sweep["summary"]
    best = s["best_tuned"]
    hist = s["variants"][best]["histogram"]
    meds = {int(k): np.asarray(v["median"]) for k, v in hist.items()}
    monotone = all(np.all(np.diff(m) <= 0) for m in meds.values())
    h13, h14 = meds[2**13], meds[2**14]
    rel = np.where(h13 > 0, np.abs(h14 - h13) / np.maximum(h13, 1e-300), np.where(h14 > 0, np.inf, 0.0))
    ok = monotone and bool(np.all(rel <= 0.05))
    report(8, "gap histogram saturation", ok,
           f"{best}: buckets at 2^13 {h13.tolist()}, at 2^14 {h14.tolist()}; nonincreasing: {monotone}; "
           f"max relative change {float(rel.max()):.3f} (need <= 0.05)")


# ---------------------------------------------------------------------------
# 9. eluder dimension estimates


def multiscale_linear_pool(n_dirs: int = 8, n_scales: int = 25):
    ang = np.arange(n_dirs) * np.pi / n_dirs
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    norms = 2.0 ** (-np.arange(n_scales)[::-1] / 2)
    feats = (norms[:, None, None] * dirs[None]).reshape(-1, 2)
    cls = LinearClass(2, 1.0, 1.0, feats[:, None, :])
    return cls, [Covariate(i, 0) for i in range(len(feats))]


def test_c09_eluder():
    t0 = time.perf_counter()
    tab = TabularClass(2, 3, 2.0)
    est = eluder_dimension_estimate(tab, 0.1, [Covariate(s, a) for s in range(2) for a in range(3)])
    tab_ok = est.length == 6 and verify_eluder(tab, est)
    cls, pool = multiscale_linear_pool()
    eps = [0.5, 0.1, 0.02]
    lengths = []
    for e in eps:
        le = eluder_dimension_estimate(cls, e, pool)
        assert verify_eluder(cls, le)
        lengths.append(le.length)
    x = 2 * np.log(1 / np.asarray(eps))
    y = np.asarray(lengths, float)
    c = float(x @ y / (x @ x))
    r2 = 1 - float(((y - c * x) ** 2).sum()) / float(((y - y.mean()) ** 2).sum())
    secs = time.perf_counter() - t0
    nondec = all(b >= a for a, b in zip(lengths, lengths[1:]))
    ok = tab_ok and nondec and r2 >= 0.85 and secs < 120
    report(9, "eluder estimates", ok,
           f"tabular length {est.length} (need 6); linear lengths {lengths} at eps {eps}, "
           f"c*d*log(1/eps) fit c = {c:.2f}, R^2 = {r2:.3f} (need >= 0.85), {secs:.1f}s (< 120s)")


# ---------------------------------------------------------------------------
# 10. model-based regression consistency


def test_c10_regression_consistency():
    env = mixture(3, 4, 2, 3, seed=0)
    t0 = time.perf_counter()
    errs = []
    for seed in range(20):
        cfg = AgentConfig(mode="model_based", beta="theory", n_episodes=1024, seed=seed)
        log = run(cfg, env, rng=make_rng(seed))
        th_hat = np.asarray(log.summary["theta_hat"])
        th_star = np.asarray(log.summary["theta_star"])
        # the last step regresses onto a zero value function and carries no signal
        errs.append(float(np.linalg.norm(th_hat[:-1] - th_star, axis=1).max()))
    secs = time.perf_counter() - t0
    good = sum(e <= 0.05 for e in errs)
    ok = good >= 18 and secs < 300
    report(10, "model-based regression consistency", ok,
           f"|theta_hat - theta*| <= 0.05 in {good}/20 seeds (need >= 18), median error {np.median(errs):.3f}, "
           f"{secs:.1f}s (< 300s)")


# ---------------------------------------------------------------------------
# 11. determinism


def test_c11_determinism(tmp_path):
    doc = {"env": {"name": "chain", "n": 3, "horizon": 2, "gap": 0.3}, "agent": {"beta": 1.0},
           "K": [64, 256], "seeds": [0, 7], "baselines": ["always-switch", "uniform-random"]}
    mb = {"env": {"name": "mixture", "d": 2, "n_states": 3, "n_actions": 2, "horizon": 2, "seed": 1},
          "agent": {"mode": "model_based", "beta": "theory"}, "K": [32, 64], "seeds": [3]}
    identical, total = True, 0
    for i, d in enumerate((doc, mb)):
        cfg = ExperimentConfig.from_dict(d)
        a = write_results(run_experiment(cfg, workers=1), tmp_path / f"a{i}")
        b = write_results(run_experiment(cfg, workers=2), tmp_path / f"b{i}")
        for pa, pb in zip(sorted(a), sorted(b)):
            if pa.suffix == ".csv":
                total += 1
                identical &= pa.read_bytes() == pb.read_bytes()
        identical &= [p.name for p in sorted(a)] == [p.name for p in sorted(b)]
    report(11, "determinism", identical and total > 0,
           f"{total} CSV files byte-identical across repeated runs (serial vs process pool): {identical}")
