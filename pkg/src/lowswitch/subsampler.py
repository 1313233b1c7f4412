"""Online sensitivity sub-sampling with reciprocal-integer inclusion probabilities."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .function_class import (
    ConfidenceParams,
    Covariate,
    FunctionClass,
    SubsampledDataset,
    snap_to_net,
)


class Mode(str, Enum):
    MODEL_FREE = "model_free"
    MODEL_BASED = "model_based"


def net_log_factor(cls: FunctionClass, T: int, delta: float) -> float:
    """log(T * N(F, sqrt(delta / (64 T^3))) / delta) from the analytic cover bound."""
    eps = math.sqrt(delta / (64.0 * T**3))
    return math.log(T / delta) + cls.log_cover_size(eps)


@dataclass(frozen=True)
class SamplerConfig:
    C: float
    delta: float
    T: int
    log_net: float
    mode: Mode = Mode.MODEL_FREE

    def __post_init__(self) -> None:
        if not self.C > 0:
            raise ValueError("sampler constant C must be positive")
        if self.log_net < 0:
            raise ValueError("log_net must be nonnegative")
        if self.T < 1:
            raise ValueError("T must be >= 1")

    @classmethod
    def build(cls, fclass: FunctionClass, T: int, delta: float, C: float = 1.0,
              mode: Mode = Mode.MODEL_FREE) -> "SamplerConfig":
        return cls(C, delta, T, net_log_factor(fclass, T, delta), mode)


@dataclass(frozen=True)
class SampleDecision:
    p: float
    accepted: bool
    copies: int


def round_to_reciprocal(x: float) -> float:
    """Smallest p >= x of the form 1/m with m a positive integer."""
    if not 0.0 < x <= 1.0:
        raise ValueError(f"expected x in (0, 1], got {x}")
    m = math.floor(1.0 / x)
    # 1/x can round across an integer in floating point
    if 1.0 / (m + 1) >= x:
        m += 1
    while m > 1 and 1.0 / m < x:
        m -= 1
    return 1.0 / m


def inclusion_probability(sensitivity: float, cfg: SamplerConfig) -> float:
    raw = min(1.0, cfg.C * sensitivity * cfg.log_net)
    raw = max(raw, 1.0 / cfg.T**2)
    return round_to_reciprocal(raw)


def decide(p: float, u: float) -> SampleDecision:
    """Accept with probability ``p`` given a uniform variate ``u``."""
    copies = int(round(1.0 / p))
    accepted = u < p
    return SampleDecision(p, accepted, copies if accepted else 0)


def maybe_add(
    Z: SubsampledDataset,
    z: Covariate,
    fclass: FunctionClass,
    params: ConfidenceParams,
    cfg: SamplerConfig,
    rng: np.random.Generator | float,
) -> tuple[SubsampledDataset, bool, SampleDecision]:
    """Score ``z`` against ``Z`` and insert ``1/p`` copies with probability ``p``.

    ``rng`` may be a generator or a pre-drawn uniform variate.  ``Z`` is
    updated in place and returned together with the change flag.
    """
    if cfg.mode is Mode.MODEL_FREE:
        z = snap_to_net(z)
    p = inclusion_probability(fclass.sensitivity(Z, params, z), cfg)
    u = rng if isinstance(rng, float) else float(rng.random())
    dec = decide(p, u)
    if dec.accepted:
        Z.add(z, dec.copies)
    return Z, dec.accepted, dec
