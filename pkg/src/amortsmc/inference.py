"""Per-model inference plans shared by the command line and the demos."""

from __future__ import annotations

import numpy as np

from .graph import topological_sort
from .models import ModelBundle
from .smc import (
    LearnedProposal,
    ParticleSystem,
    PriorProposal,
    ResamplingScheme,
    TargetSequence,
    dc_smc,
    importance_sample,
    inverse_blocks,
    run_smc,
    step_rng,
)
from .training import TrainArtifact

PROPOSALS = ("prior", "learned")


def prior_blocks(bundle: ModelBundle) -> list[tuple]:
    """Latent blocks in generative order for bootstrap runs."""
    if bundle.name == "pump":
        # hyperparameters first, then one step per pump
        order = [v for v in topological_sort(bundle.model) if not bundle.model.node(v).observed]
        top = tuple(v for v in order if v.index is None)
        return [top] + [(v,) for v in order if v.index is not None]
    if bundle.name == "fhmm":
        return [tuple(reversed(b)) for b in inverse_blocks(bundle.inverse)]
    return [tuple(bundle.model.latents)]


def run_inference(
    bundle: ModelBundle,
    proposal: str,
    K: int,
    seed: int,
    artifact: TrainArtifact | None = None,
    data: dict | None = None,
    scheme: ResamplingScheme = ResamplingScheme(),
) -> ParticleSystem:
    """Importance sampling for single-block models, SMC otherwise, D&C SMC for the learned pump.

    A run is a pure function of its arguments.
    """
    if proposal not in PROPOSALS:
        raise ValueError(f"unknown proposal {proposal!r}; choose from {PROPOSALS}")
    if K < 1:
        raise ValueError("need at least one particle")
    obs = bundle.observed_values(data)
    if proposal == "learned":
        if artifact is None:
            raise ValueError("learned proposal needs a trained artifact")
        if artifact.model_name != bundle.name:
            raise ValueError(f"artifact was trained for {artifact.model_name!r}, not {bundle.name!r}")
        prop = LearnedProposal(artifact, bundle.inverse)
        if bundle.name == "pump":
            return dc_smc(bundle.model, bundle.inverse, obs, K, step_rng(seed, 0), artifact, scheme=scheme)
        blocks = inverse_blocks(bundle.inverse)
    else:
        prop = PriorProposal(bundle.model)
        blocks = prior_blocks(bundle)
    target = TargetSequence.from_model(bundle.model, obs, blocks)
    if target.n_steps == 1:
        return importance_sample(target, prop, K, step_rng(seed, 1))
    return run_smc(target, prop, K, seed, scheme)


def posterior_summary(ps: ParticleSystem) -> list[dict]:
    """Weighted mean and standard deviation of every latent in the final particles."""
    w = ps.normalized_weights
    rows = []
    for v in sorted(ps.values):
        x = np.asarray(ps.values[v], dtype=float)
        m = float(np.sum(w * x))
        sd = float(np.sqrt(max(np.sum(w * (x - m) ** 2), 0.0)))
        rows.append({"variable": str(v), "mean": m, "stdev": sd})
    return rows
