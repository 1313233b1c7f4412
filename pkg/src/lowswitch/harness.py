"""Experiment configuration, seeding, baselines, sweeps and result summaries.

Seeding
-------
A run with integer seed ``s`` draws all of its randomness from
``numpy.random.Generator(PCG64(splitmix64(s)))`` where ``splitmix64`` is the
standard 64-bit finaliser (Steele, Lea and Flood)::

    z = (s + 0x9E3779B97F4A7C15) mod 2^64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2^64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2^64
    z = z ^ (z >> 31)

Seeds given as ``{"base": b, "count": n}`` expand to ``b, b + 1, ..., b + n - 1``.
The same seed is reused across the K grid, so runs at different K share a
common random stream.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .agent import AgentConfig, run
from .envs import make_env
from .mdp import EpisodicMdp, LinearMixtureMdp, exact_q_star, exact_policy_value, gap_min, load_mdp, uniform_policy
from .runlog import GapHistogram, RunLog, _jsonable

BASELINES = ("always-switch", "uniform-random")
AGENT_VARIANT = "agent"
_MASK64 = (1 << 64) - 1
# AgentConfig fields supplied by the sweep grid rather than the config file
_GRID_FIELDS = {"n_episodes", "seed"}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


class InsufficientDataError(ValueError):
    pass


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(splitmix64(int(seed))))


def config_hash(doc: Any) -> str:
    """sha256 of canonical JSON (sorted keys, no whitespace)."""
    canon = json.dumps(_jsonable(doc), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    env: dict
    agent: dict
    K: list[int]
    seeds: list[int]
    baselines: list[str] = field(default_factory=list)
    beta_grid: list[float] | None = None
    out: str | None = None

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path | None = None) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("$", "config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in doc:
            if key not in known:
                raise ConfigError(key, "unknown field")
        for key in ("env", "agent", "K", "seeds"):
            if key not in doc:
                raise ConfigError(key, "required field missing")

        env = doc["env"]
        if isinstance(env, str):
            env = {"file": env}
        if not isinstance(env, dict):
            raise ConfigError("env", "must be an object or a file path")
        if "file" in env:
            p = Path(env["file"])
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            env = {"file": str(p)}
        elif "name" not in env:
            raise ConfigError("env.name", "required field missing")

        agent = doc["agent"]
        if not isinstance(agent, dict):
            raise ConfigError("agent", "must be an object")
        agent_fields = {f.name for f in fields(AgentConfig)} - _GRID_FIELDS
        for key in agent:
            if key not in agent_fields:
                raise ConfigError(f"agent.{key}", "unknown field")
        try:
            AgentConfig(**agent)
        except (ValueError, TypeError) as exc:
            raise ConfigError("agent", str(exc)) from None

        K = doc["K"]
        if not isinstance(K, list) or not K:
            raise ConfigError("K", "must be a nonempty list")
        for i, k in enumerate(K):
            if not isinstance(k, int) or isinstance(k, bool) or k < 1:
                raise ConfigError(f"K[{i}]", "must be a positive integer")
        if any(b <= a for a, b in zip(K, K[1:])):
            raise ConfigError("K", "must be strictly increasing")

        seeds = doc["seeds"]
        if isinstance(seeds, dict):
            try:
                seeds = [int(seeds["base"]) + i for i in range(int(seeds["count"]))]
            except (KeyError, TypeError, ValueError):
                raise ConfigError("seeds", "expected {'base': int, 'count': int}") from None
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("seeds", "must be nonempty")
        for i, s in enumerate(seeds):
            if not isinstance(s, int) or isinstance(s, bool) or s < 0:
                raise ConfigError(f"seeds[{i}]", "must be a nonnegative integer")

        baselines = doc.get("baselines", [])
        if not isinstance(baselines, list):
            raise ConfigError("baselines", "must be a list")
        for i, b in enumerate(baselines):
            if b not in BASELINES:
                raise ConfigError(f"baselines[{i}]", f"unknown baseline {b!r}; known: {list(BASELINES)}")

        beta_grid = doc.get("beta_grid")
        if beta_grid is not None:
            if not isinstance(beta_grid, list) or not beta_grid:
                raise ConfigError("beta_grid", "must be a nonempty list")
            for i, b in enumerate(beta_grid):
                if isinstance(b, bool) or not isinstance(b, (int, float)) or not b > 0:
                    raise ConfigError(f"beta_grid[{i}]", "must be a positive number")
            beta_grid = [float(b) for b in beta_grid]

        out = doc.get("out")
        if out is not None and not isinstance(out, str):
            raise ConfigError("out", "must be a string")
        return cls(env=env, agent=dict(agent), K=list(K), seeds=list(seeds), baselines=list(baselines),
                   beta_grid=beta_grid, out=out)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError("$", f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("$", f"invalid JSON: {exc}") from None
        return cls.from_dict(doc, base_dir=path.parent)

    def to_dict(self) -> dict:
        doc = {"env": self.env, "agent": self.agent, "K": self.K, "seeds": self.seeds,
               "baselines": self.baselines}
        if self.beta_grid is not None:
            doc["beta_grid"] = self.beta_grid
        return doc

    @property
    def hash(self) -> str:
        # output location is not semantically meaningful
        return config_hash(self.to_dict())

    def cells(self) -> list["RunCell"]:
        """Every (variant, K, seed) combination, in a fixed order."""
        variants: list[tuple[str, dict]] = []
        if self.beta_grid is None:
            variants.append((AGENT_VARIANT, dict(self.agent)))
        else:
            for b in self.beta_grid:
                variants.append((f"{AGENT_VARIANT}[beta={b:g}]", {**self.agent, "beta": b}))
        if "always-switch" in self.baselines:
            variants.append(("always-switch", {**self.agent, "always_switch": True}))
        if "uniform-random" in self.baselines:
            variants.append(("uniform-random", {}))
        return [RunCell(v, a, self.env, k, s) for v, a in variants for k in self.K for s in self.seeds]


@dataclass(frozen=True)
class RunCell:
    variant: str
    agent: dict
    env: dict
    K: int
    seed: int

    def to_dict(self) -> dict:
        return {"variant": self.variant, "agent": self.agent, "env": self.env, "K": self.K}

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    @property
    def name(self) -> str:
        return f"{self.variant}/K{self.K}_seed{self.seed}"


def build_env(spec: dict) -> EpisodicMdp | LinearMixtureMdp:
    if "file" in spec:
        try:
            return load_mdp(spec["file"])
        except OSError as exc:
            raise ConfigError("env.file", f"cannot read environment: {exc}") from None
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError("env.file", f"invalid environment: {exc}") from None
    try:
        return make_env(spec)
    except TypeError as exc:
        raise ConfigError("env", str(exc)) from None


# ---------------------------------------------------------------------------
# Execution


def uniform_random_log(env: EpisodicMdp | LinearMixtureMdp, K: int, seed: int) -> RunLog:
    """Exact-regret log of the uniformly random policy (never switches)."""
    mdp = env.mdp if isinstance(env, LinearMixtureMdp) else env
    s0 = mdp.initial_state
    v_star = float(exact_q_star(mdp).V[0, s0])
    v_unif = float(exact_policy_value(mdp, uniform_policy(mdp)).V[0, s0])
    inst = v_star - v_unif
    log = RunLog(seed=seed)
    for _ in range(K):
        log.append(inst, False, False, 0, 0.0)
    log.summary = {"n_switch_ds": 0, "n_switch_pi": 0, "regret": log.regret, "gap_min": gap_min(mdp),
                   "beta": None, "v_star": v_star, "n_episodes": K}
    return log


def run_cell(cell: RunCell) -> RunLog:
    env = build_env(cell.env)
    if cell.variant == "uniform-random":
        log = uniform_random_log(env, cell.K, cell.seed)
    else:
        cfg = AgentConfig(**{**cell.agent, "n_episodes": cell.K, "seed": cell.seed})
        log = run(cfg, env, rng=make_rng(cell.seed))
        for attr in ("_agent", "_bonus_per_episode"):
            log.__dict__.pop(attr, None)
    log.config_hash = cell.hash
    log.summary["variant"] = cell.variant
    return log


@dataclass
class RunResult:
    cell: RunCell
    log: RunLog


def run_experiment(config: ExperimentConfig, workers: int | None = 1) -> list[RunResult]:
    """Execute every cell; ``workers > 1`` uses a process pool.

    Results come back in cell order whatever the completion order, so the
    collector's output is independent of scheduling.
    """
    cells = config.cells()
    build_env(config.env)  # fail fast on a bad environment
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(cells) <= 1:
        logs = [run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            logs = list(pool.map(run_cell, cells))
    return [RunResult(c, log) for c, log in zip(cells, logs)]


def write_results(results: Sequence[RunResult], out: str | Path) -> list[Path]:
    out = Path(out)
    paths = []
    for r in results:
        p = out / r.cell.name
        r.log.write(p)
        paths.append(p.with_suffix(".csv"))
    return paths


# ---------------------------------------------------------------------------
# Summaries


def _linear_fit(x: np.ndarray, y: np.ndarray) -> dict:
    """Least squares y ~ c1 + c2 x; a constant response is a perfect fit (R^2 = 1)."""
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float((resid**2).sum())
    if ss_tot <= 1e-24 * max(1.0, float((y**2).sum())):
        r2 = 1.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return {"c1": float(coef[0]), "c2": float(coef[1]), "r2": r2}


def fit_log_squared(K: Sequence[int], y: Sequence[float]) -> dict:
    return _linear_fit(np.log(np.asarray(K, dtype=float)) ** 2, np.asarray(y, dtype=float))


def summarize(results: Sequence[RunResult]) -> dict:
    """Medians over seeds per (variant, K), switch and regret fits, histogram aggregates."""
    by_variant: dict[str, dict[int, list[RunLog]]] = {}
    for r in results:
        by_variant.setdefault(r.cell.variant, {}).setdefault(r.cell.K, []).append(r.log)
    doc: dict[str, Any] = {"variants": {}}
    for variant, by_k in by_variant.items():
        Ks = sorted(by_k)
        if len(Ks) < 2:
            raise InsufficientDataError(f"variant {variant!r} needs at least 2 distinct K values")
        med = {
            key: [float(np.median([getattr(l, attr) for l in by_k[k]])) for k in Ks]
            for key, attr in (("regret", "regret"), ("n_switch_ds", "n_switch_ds"), ("n_switch_pi", "n_switch_pi"))
        }
        logK = np.log(np.asarray(Ks, dtype=float))
        reg = np.asarray(med["regret"])
        entry: dict[str, Any] = {
            "K": Ks,
            "n_seeds": [len(by_k[k]) for k in Ks],
            "median": med,
            "switch_fit": fit_log_squared(Ks, med["n_switch_ds"]),
            "switch_pi_fit": fit_log_squared(Ks, med["n_switch_pi"]),
            "regret_fits": {
                "log": _linear_fit(logK, reg),
                "log_squared": _linear_fit(logK**2, reg),
                "sqrt": _linear_fit(np.sqrt(np.asarray(Ks, dtype=float)), reg),
            },
            "zero_regret": bool(all(l.regret == 0.0 for k in Ks for l in by_k[k])),
        }
        hists = {}
        for k in Ks:
            rows = [l.summary.get("histogram") for l in by_k[k]]
            if all(r is not None for r in rows) and rows:
                arr = np.asarray(rows, dtype=float)
                hists[str(k)] = {"median": np.median(arr, axis=0).tolist(), "sum": arr.sum(axis=0).tolist()}
        if hists:
            entry["histogram"] = hists
        betas = {l.summary.get("beta") for k in Ks for l in by_k[k]}
        entry["beta"] = betas.pop() if len(betas) == 1 else sorted(b for b in betas if b is not None)
        doc["variants"][variant] = entry
    tuned = {v: e for v, e in doc["variants"].items() if v.startswith(AGENT_VARIANT + "[")}
    if tuned:
        doc["best_tuned"] = min(tuned, key=lambda v: (tuned[v]["median"]["regret"][-1], v))
    return doc


def write_summary(summary: dict, config: ExperimentConfig, out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "summary.json"
    doc = {"config_hash": config.hash, "config": config.to_dict(), "summary": summary}
    path.write_text(json.dumps(_jsonable(doc), sort_keys=True, indent=1))
    return path


def aggregate_histogram(logs: Sequence[RunLog], gmin: float, horizon: int) -> GapHistogram:
    """Sum per-run histograms into one."""
    h = GapHistogram(gmin, horizon)
    for log in logs:
        for i, c in enumerate(log.summary.get("histogram", [])):
            h.counts[i] += int(c)
        h.below += int(log.summary.get("histogram_below", 0))
    return h
