"""Amortized learned proposals for importance sampling and sequential Monte Carlo
in directed graphical models.

The pieces, bottom up:

- :mod:`amortsmc.graph` -- Bayes-net models, ancestral sampling, log joint, d-separation
- :mod:`amortsmc.inverse` -- inverse factorizations that condition latents on observations
- :mod:`amortsmc.made` -- masked autoregressive conditional density networks
- :mod:`amortsmc.training` -- amortized training on synthetic data
- :mod:`amortsmc.smc` -- importance sampling, SMC and divide-and-conquer SMC
- :mod:`amortsmc.models` -- ready-made example models and exact oracles
- :mod:`amortsmc.cli` -- command-line front end
"""

from .graph import (
    GraphModel,
    Node,
    Plate,
    VariableId,
    ancestral_sample,
    d_separated,
    log_joint,
    markov_blanket,
    topological_sort,
    var,
)
from .inverse import InverseModel, build_inverse, check_proposition_1, invert
from .made import MaskedNetwork, NetworkShape, build_masks, init_network
from .smc import (
    DegenerateWeights,
    LearnedProposal,
    ParticleSystem,
    PriorProposal,
    ResamplingScheme,
    TargetSequence,
    dc_smc,
    ess,
    estimate,
    importance_sample,
    log_marginal_likelihood,
    resample,
    run_smc,
    smc_step,
    unique_ancestries,
)
from .training import TrainArtifact, TrainConfig, train_all

__all__ = [
    "GraphModel", "Node", "Plate", "VariableId", "ancestral_sample", "d_separated", "log_joint",
    "markov_blanket", "topological_sort", "var",
    "InverseModel", "build_inverse", "check_proposition_1", "invert",
    "MaskedNetwork", "NetworkShape", "build_masks", "init_network",
    "DegenerateWeights", "LearnedProposal", "ParticleSystem", "PriorProposal", "ResamplingScheme",
    "TargetSequence", "dc_smc", "ess", "estimate", "importance_sample", "log_marginal_likelihood",
    "resample", "run_smc", "smc_step", "unique_ancestries",
    "TrainArtifact", "TrainConfig", "train_all",
]
