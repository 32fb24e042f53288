"""Importance sampling, SMC and two-level divide-and-conquer SMC.

Weights are kept in log space. A :class:`ParticleSystem` carries the
unnormalized log weights accumulated since the last resampling, the evidence
banked at earlier resampling events, and the per-step ancestor indices.
Steps are numbered from 1.
"""

from __future__ import annotations

import io
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from . import made
from .graph import GraphModel, VariableId, log_density, topological_sort
from .inverse import InverseModel
from .training import FEATURES, TrainArtifact, feature_dim, network_key


class DegenerateWeights(RuntimeError):
    pass


# -- targets and proposals -----------------------------------------------------

@dataclass(frozen=True)
class TargetSequence:
    """Blocks of latents introduced per step plus the log increment ``log gamma_n - log gamma_{n-1}``.

    ``increment(n, values)`` receives the 1-based step and a mapping holding
    the observed values and every latent sampled so far (arrays of length K).
    """

    blocks: tuple[tuple[VariableId, ...], ...]
    increment: Callable[[int, Mapping], np.ndarray]
    observed: Mapping = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.blocks)

    @classmethod
    def from_model(cls, model: GraphModel, observed: Mapping, blocks: Sequence[Sequence[VariableId]]) -> "TargetSequence":
        """Each step adds the densities of nodes that become fully assigned.

        Nodes involving only observed values are folded into step 1, so the
        final target is the full joint ``p(x, y)`` at the observed ``y``.
        """
        blocks = tuple(tuple(b) for b in blocks)
        latents = [v for b in blocks for v in b]
        if sorted(latents) != sorted(model.latents) or len(set(latents)) != len(latents):
            raise ValueError("blocks must cover every latent exactly once")
        missing = [str(y) for y in model.observed if y not in observed]
        if missing:
            raise ValueError(f"no value for observed {missing[:5]}")
        assigned = set(model.observed)
        done: set = set()
        per_step = []
        for b in blocks:
            assigned |= set(b)
            new = [v for v in topological_sort(model)
                   if v not in done and v in assigned and all(p in assigned for p in model.parents(v))]
            done |= set(new)
            per_step.append(tuple(new))
        steps = tuple(per_step)

        def increment(n, values):
            total = 0.0
            for v in steps[n - 1]:
                total = total + log_density(model, v, values)
            return total

        return cls(blocks, increment, dict(observed))


class Proposal:
    """Draws a block of latents given the values sampled so far."""

    kind = "custom"

    def propose(self, block, values: Mapping, rng: np.random.Generator, K: int):
        raise NotImplementedError


class FunctionProposal(Proposal):
    def __init__(self, fn):
        self.fn = fn

    def propose(self, block, values, rng, K):
        return self.fn(block, values, rng, K)


class PriorProposal(Proposal):
    """Sample each block member from its conditional under the model (bootstrap)."""

    kind = "prior"

    def __init__(self, model: GraphModel):
        self.model = model
        self._pos = {v: i for i, v in enumerate(topological_sort(model))}

    def propose(self, block, values, rng, K):
        vals = dict(values)
        out, logq = {}, np.zeros(K)
        for v in sorted(block, key=self._pos.__getitem__):
            node = self.model.node(v)
            try:
                params = node.dist.params(vals[p] for p in node.parents)
            except KeyError as exc:
                raise ValueError(f"prior proposal for {v} needs {exc.args[0]} first") from None
            params = tuple(np.broadcast_to(np.asarray(p, dtype=float), (K,)) for p in params)
            x = node.dist.impl.sample(rng, *params, size=K)
            vals[v] = out[v] = x
            logq = logq + log_density(self.model, v, vals)
        return out, logq


class LearnedProposal(Proposal):
    """Propose a block from the trained network serving the inverse factor with those targets.

    Networks are looked up by share key, so a model with more replicated
    factors than at training time reuses the shared network.
    """

    kind = "learned"

    def __init__(self, artifact: TrainArtifact, inverse: InverseModel):
        self.artifact = artifact
        self.inverse = inverse
        self._by_block = {}
        for i, f in enumerate(inverse.factors):
            key = network_key(f, i)
            if key not in artifact.specs:
                raise made.DimensionMismatch(f"artifact has no network {key!r} for factor {f.describe()}")
            spec = artifact.specs[key]
            if feature_dim(f, spec.feature) != spec.shape.n_cond or len(f.targets) != spec.shape.n_targets:
                raise made.DimensionMismatch(
                    f"network {key!r} was trained for {spec.shape.n_cond} conditioning inputs and "
                    f"{spec.shape.n_targets} targets, factor {f.describe()} needs "
                    f"{feature_dim(f, spec.feature)} and {len(f.targets)}"
                    f"{_trained_size(artifact.model_config)}")
            self._by_block[f.targets] = (f, spec, artifact.networks[key])

    def propose(self, block, values, rng, K):
        try:
            factor, spec, net = self._by_block[tuple(block)]
        except KeyError:
            raise ValueError(f"no inverse factor targets {[str(b) for b in block]}") from None
        cond = FEATURES[spec.feature](values, factor, K)
        x, logq = made.sample(net, cond, rng)
        return {t: x[:, j] for j, t in enumerate(factor.targets)}, logq


def _trained_size(model_config: dict) -> str:
    sizes = [f"{k}={model_config[k]}" for k in ("N", "D") if k in model_config]
    return f" (artifact trained with {', '.join(sizes)})" if sizes else ""


def inverse_blocks(inverse: InverseModel) -> list[tuple[VariableId, ...]]:
    return [f.targets for f in inverse.factors]


# -- particles -------------------------------------------------------------------

@dataclass(frozen=True)
class ResamplingScheme:
    kind: str = "systematic"  # "multinomial" | "systematic"
    trigger: str = "ess"  # "always" | "ess"
    threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("multinomial", "systematic"):
            raise ValueError(f"unknown resampling kind {self.kind!r}")
        if self.trigger not in ("always", "ess"):
            raise ValueError(f"unknown trigger {self.trigger!r}")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold fraction must lie in (0, 1]")

    def triggered(self, ess_value: float, K: int) -> bool:
        return self.trigger == "always" or ess_value < self.threshold * K


@dataclass
class ParticleSystem:
    K: int
    values: dict
    log_weights: np.ndarray
    ancestry: list = field(default_factory=list)
    banked_log_evidence: float = 0.0
    step: int = 0
    history: list = field(default_factory=list)

    @property
    def normalized_weights(self) -> np.ndarray:
        return np.exp(self.log_weights - logsumexp(self.log_weights))

    @property
    def log_evidence(self) -> float:
        return log_marginal_likelihood(self)


def _normalize_log(lw: np.ndarray) -> np.ndarray:
    return np.exp(lw - logsumexp(lw))


def resample(weights, K: int, scheme: ResamplingScheme | str, rng: np.random.Generator) -> np.ndarray:
    """Ancestor indices (0-based) drawn from normalized ``weights``."""
    kind = scheme if isinstance(scheme, str) else scheme.kind
    w = np.asarray(weights, dtype=float)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    if kind == "multinomial":
        u = rng.random(K)
    elif kind == "systematic":
        u = (rng.random() + np.arange(K)) / K
    else:
        raise ValueError(f"unknown resampling kind {kind!r}")
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(w) - 1)


def ess(ps: ParticleSystem | np.ndarray) -> float:
    w = ps.normalized_weights if isinstance(ps, ParticleSystem) else np.asarray(ps, dtype=float)
    return float(1.0 / np.sum(w * w))


def unique_ancestries(ps: ParticleSystem, t: int | None = None) -> int:
    """Distinct step-1 ancestors among the particles alive at step ``t``."""
    t = ps.step if t is None else t
    if not 1 <= t <= len(ps.ancestry):
        raise ValueError(f"ancestry not recorded through step {t}")
    idx = np.arange(ps.K)
    for s in range(t, 1, -1):
        idx = ps.ancestry[s - 1][idx]
    return int(np.unique(idx).size)


def log_marginal_likelihood(ps: ParticleSystem) -> float:
    return float(ps.banked_log_evidence + logsumexp(ps.log_weights) - np.log(ps.K))


def estimate(ps: ParticleSystem, h: Callable[[Mapping], np.ndarray]) -> float:
    """Weighted average of ``h`` over the final particles."""
    vals = np.broadcast_to(np.asarray(h(ps.values), dtype=float), (ps.K,))
    return float(np.sum(ps.normalized_weights * vals))


def _check(lw: np.ndarray, where: str) -> None:
    if not np.any(np.isfinite(lw)) or np.any(np.isnan(lw)):
        bad = int(np.sum(~np.isfinite(lw)))
        raise DegenerateWeights(f"{where}: {bad} of {lw.size} log weights are not finite")


def init_particles(K: int) -> ParticleSystem:
    if K < 1:
        raise ValueError("need at least one particle")
    return ParticleSystem(K, {}, np.zeros(K))


def smc_step(
    ps: ParticleSystem,
    target: TargetSequence,
    n: int,
    proposal: Proposal,
    scheme: ResamplingScheme,
    rng: np.random.Generator,
) -> ParticleSystem:
    """Resample if triggered, extend every particle by block ``n``, reweight."""
    if n != ps.step + 1:
        raise ValueError(f"particle system is at step {ps.step}, cannot run step {n}")
    K = ps.K
    values = ps.values
    log_w = ps.log_weights
    banked = ps.banked_log_evidence
    resampled = False
    if n > 1 and scheme.triggered(ess(ps), K):
        banked += float(logsumexp(log_w) - np.log(K))
        anc = resample(_normalize_log(log_w), K, scheme, rng)
        values = {v: x[anc] for v, x in values.items()}
        log_w = np.zeros(K)
        resampled = True
    else:
        anc = np.arange(K)
    current = dict(target.observed)
    current.update(values)
    new, logq = proposal.propose(target.blocks[n - 1], current, rng, K)
    current.update(new)
    inc = np.broadcast_to(np.asarray(target.increment(n, current), dtype=float), (K,))
    log_w = log_w + inc - logq
    log_w = np.where(np.isnan(log_w), -np.inf, log_w)
    _check(log_w, f"step {n}")
    out = ParticleSystem(K, {**values, **new}, log_w, ps.ancestry + [anc], banked, n, list(ps.history))
    out.history.append({
        "step": n, "ess": ess(out), "unique_ancestries": unique_ancestries(out, n),
        "log_evidence": log_marginal_likelihood(out), "resampled": int(resampled),
    })
    return out


def step_rng(seed: int, n: int) -> np.random.Generator:
    """Independent stream for step ``n`` of a run seeded with ``seed``."""
    return np.random.default_rng([seed, n])


def run_smc(
    target: TargetSequence,
    proposal: Proposal,
    K: int,
    seed: int = 0,
    scheme: ResamplingScheme = ResamplingScheme(),
) -> ParticleSystem:
    ps = init_particles(K)
    for n in range(1, target.n_steps + 1):
        ps = smc_step(ps, target, n, proposal, scheme, step_rng(seed, n))
    return ps


def importance_sample(target: TargetSequence, proposal: Proposal, K: int, rng: np.random.Generator) -> ParticleSystem:
    if target.n_steps != 1:
        raise ValueError("importance sampling needs a single-block target")
    return smc_step(init_particles(K), target, 1, proposal, ResamplingScheme(), rng)


# -- divide and conquer ----------------------------------------------------------

def dc_smc(
    model: GraphModel,
    inverse: InverseModel,
    observed: Mapping,
    K: int,
    rng: np.random.Generator,
    artifact: TrainArtifact | None = None,
    local_proposal: Proposal | None = None,
    merge_proposal: Proposal | None = None,
    scheme: ResamplingScheme | str = "systematic",
) -> ParticleSystem:
    """Two-level divide-and-conquer SMC for plate-replicated latents under shared hyperparameters.

    Every shared-group factor is a leaf: ``K`` draws from its proposal,
    weighted by the densities that become complete given the leaf alone,
    then resampled. The remaining factors are proposed jointly for each
    merged particle and weighted by all outstanding densities.

    The history holds one row per leaf (local ESS and banked evidence) and a
    final row for the merge. Leaves are independent populations, so ancestry
    is recorded as identity and every row reports ``K`` lineages.
    """
    kind = scheme if isinstance(scheme, str) else scheme.kind
    if artifact is not None:
        learned = LearnedProposal(artifact, inverse)
        local_proposal = local_proposal or learned
        merge_proposal = merge_proposal or learned
    if local_proposal is None or merge_proposal is None:
        raise ValueError("dc_smc needs an artifact or explicit proposals")
    leaves = [f for f in inverse.factors if f.share_group is not None]
    tops = [f for f in inverse.factors if f.share_group is None]
    if not leaves:
        raise ValueError("no plate-replicated factors to divide over")
    obs = dict(observed)
    observed_ids = set(model.observed)

    def completes(extra: set):
        have = observed_ids | extra
        return [v for v in model.ids if v in have and all(p in have for p in model.parents(v))]

    const_nodes = completes(set())
    const = sum(float(np.sum(log_density(model, v, obs))) for v in const_nodes)
    used = set(const_nodes)

    values: dict = {}
    banked = const
    history = []
    for f in leaves:
        new, logq = local_proposal.propose(f.targets, obs, rng, K)
        local = [v for v in completes(set(f.targets)) if v not in used]
        used |= set(local)
        cur = {**obs, **new}
        lw = sum((log_density(model, v, cur) for v in local), np.zeros(K)) - logq
        lw = np.where(np.isnan(lw), -np.inf, lw)
        _check(lw, f"leaf {[str(t) for t in f.targets]}")
        banked += float(logsumexp(lw) - np.log(K))
        w = _normalize_log(lw)
        history.append({"step": len(history) + 1, "ess": ess(w), "unique_ancestries": K,
                        "log_evidence": banked, "resampled": 1})
        anc = resample(w, K, kind, rng)
        values.update({v: x[anc] for v, x in new.items()})

    cur = {**obs, **values}
    logq = np.zeros(K)
    for f in tops:
        new, lq = merge_proposal.propose(f.targets, cur, rng, K)
        cur.update(new)
        values.update(new)
        logq = logq + lq
    rest = [v for v in model.ids if v not in used]
    lw = sum((log_density(model, v, cur) for v in rest), np.zeros(K)) - logq
    lw = np.where(np.isnan(lw), -np.inf, lw)
    _check(lw, "merge")
    n = len(history) + 1
    ps = ParticleSystem(K, values, lw, [np.arange(K)] * n, banked, n, history)
    ps.history.append({"step": n, "ess": ess(ps), "unique_ancestries": K,
                       "log_evidence": log_marginal_likelihood(ps), "resampled": 0})
    return ps


# -- diagnostics -------------------------------------------------------------

DIAGNOSTIC_FIELDS = ("step", "ess", "unique_ancestries", "log_evidence", "resampled")


def diagnostics_csv(ps: ParticleSystem) -> str:
    buf = io.StringIO()
    buf.write(",".join(DIAGNOSTIC_FIELDS) + "\n")
    for row in ps.history:
        buf.write(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k])
                           for k in DIAGNOSTIC_FIELDS) + "\n")
    return buf.getvalue()
