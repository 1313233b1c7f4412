"""Low-switching-cost optimistic value iteration for episodic MDPs."""
from .agent import AgentConfig, LowSwitchAgent, run
from .envs import chain, env_registry, make_env, mixture, random_gapped, riverswim
from .function_class import (
    ConfidenceParams,
    Covariate,
    LinearClass,
    MixtureInducedClass,
    SubsampledDataset,
    TabularClass,
)
from .harness import ExperimentConfig, run_experiment, summarize
from .mdp import EpisodicMdp, LinearMixtureMdp, Policy, exact_policy_value, exact_q_star, gap_min, gaps
from .runlog import GapHistogram, RunLog
from .subsampler import Mode, SamplerConfig, inclusion_probability

__all__ = [
    "AgentConfig", "LowSwitchAgent", "run",
    "chain", "env_registry", "make_env", "mixture", "random_gapped", "riverswim",
    "ConfidenceParams", "Covariate", "LinearClass", "MixtureInducedClass", "SubsampledDataset", "TabularClass",
    "ExperimentConfig", "run_experiment", "summarize",
    "EpisodicMdp", "LinearMixtureMdp", "Policy", "exact_policy_value", "exact_q_star", "gap_min", "gaps",
    "GapHistogram", "RunLog",
    "Mode", "SamplerConfig", "inclusion_probability",
]
