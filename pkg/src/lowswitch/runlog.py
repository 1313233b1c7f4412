"""Per-run records and their CSV/JSON serialisation.

CSV columns, in order::

    episode,inst_regret,cum_regret,switch_ds,switch_pi,zhat_mass,replan_ms

Floats are written with 17 significant digits so files round-trip bit-exactly.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

CSV_COLUMNS = ("episode", "inst_regret", "cum_regret", "switch_ds", "switch_pi", "zhat_mass", "replan_ms")


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class GapHistogram:
    """Counts of step suboptimalities in dyadic buckets [2^(n-1) g, 2^n g), n = 1..N."""

    gap_min: float
    horizon: int
    counts: list[int] = field(default_factory=list)
    below: int = 0

    def __post_init__(self) -> None:
        if not self.counts:
            self.counts = [0] * self.n_buckets

    @property
    def n_buckets(self) -> int:
        if not math.isfinite(self.gap_min):
            return 1
        return max(1, math.ceil(math.log2(self.horizon / self.gap_min)))

    def bucket(self, x: float) -> int | None:
        """0-based bucket index for a suboptimality ``x``; None if below gap_min."""
        if not math.isfinite(self.gap_min):
            return None
        if x < self.gap_min * (1 - 1e-9):
            return None
        n = int(math.floor(math.log2(x / self.gap_min) + 1e-12)) + 1
        return min(max(n, 1), self.n_buckets) - 1

    def add(self, x: float) -> None:
        b = self.bucket(x)
        if b is None:
            if x > 1e-12:
                self.below += 1
        else:
            self.counts[b] += 1

    def add_many(self, xs: np.ndarray) -> None:
        for x in np.asarray(xs, dtype=np.float64).ravel():
            self.add(float(x))

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass
class RunLog:
    inst_regret: list[float] = field(default_factory=list)
    cum_regret: list[float] = field(default_factory=list)
    switch_ds: list[int] = field(default_factory=list)
    switch_pi: list[int] = field(default_factory=list)
    zhat_mass: list[int] = field(default_factory=list)
    replan_ms: list[float] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    config_hash: str = ""
    seed: int = 0

    def append(self, inst: float, switched_ds: bool, switched_pi: bool, mass: int, ms: float = 0.0) -> None:
        prev = self.cum_regret[-1] if self.cum_regret else 0.0
        self.inst_regret.append(float(inst))
        self.cum_regret.append(prev + float(inst))
        self.switch_ds.append(int(switched_ds))
        self.switch_pi.append(int(switched_pi))
        self.zhat_mass.append(int(mass))
        self.replan_ms.append(float(ms))

    @property
    def n_episodes(self) -> int:
        return len(self.inst_regret)

    @property
    def n_switch_ds(self) -> int:
        return sum(self.switch_ds)

    @property
    def n_switch_pi(self) -> int:
        return sum(self.switch_pi)

    @property
    def regret(self) -> float:
        return self.cum_regret[-1] if self.cum_regret else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for k in range(self.n_episodes):
            w.writerow([
                k + 1,
                fmt_float(self.inst_regret[k]),
                fmt_float(self.cum_regret[k]),
                self.switch_ds[k],
                self.switch_pi[k],
                self.zhat_mass[k],
                fmt_float(self.replan_ms[k]),
            ])
        return buf.getvalue()

    def summary_json(self) -> str:
        doc = {"config_hash": self.config_hash, "seed": self.seed, "summary": self.summary}
        return json.dumps(_jsonable(doc), sort_keys=True, indent=1)

    def write(self, path: str | Path) -> None:
        """Write ``<path>.csv`` and ``<path>.json``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.with_suffix(".csv").write_text(self.to_csv())
        path.with_suffix(".json").write_text(self.summary_json())

    @classmethod
    def read(cls, path: str | Path) -> "RunLog":
        path = Path(path)
        log = cls()
        with open(path.with_suffix(".csv"), newline="") as fh:
            rows = list(csv.reader(fh))
        if tuple(rows[0]) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {rows[0]}")
        for row in rows[1:]:
            log.inst_regret.append(float(row[1]))
            log.cum_regret.append(float(row[2]))
            log.switch_ds.append(int(row[3]))
            log.switch_pi.append(int(row[4]))
            log.zhat_mass.append(int(row[5]))
            log.replan_ms.append(float(row[6]))
        meta_path = path.with_suffix(".json")
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            log.config_hash = meta["config_hash"]
            log.seed = meta["seed"]
            log.summary = meta["summary"]
        return log


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return x
    if hasattr(x, "__dataclass_fields__"):
        return _jsonable(asdict(x))
    return x
