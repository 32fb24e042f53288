"""Offline training of inverse-factor proposals on synthetic joint samples."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import made
from .graph import GraphModel, VariableId, ancestral_sample
from .inverse import InverseFactor, InverseModel
from .made import MaskedNetwork, NetworkShape

log = logging.getLogger(__name__)

ARTIFACT_FORMAT = "amortsmc.train-artifact"
ARTIFACT_VERSION = 1


class EmptyDataset(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class AdamConfig:
    step_size: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    n_train: int = 10000
    n_validate: int = 1000
    minibatch: int = 100
    max_steps_per_epoch: int = 500
    n_epochs: int = 50
    adam: AdamConfig = AdamConfig()
    seed: int = 0
    tolerance: float = 1e-6

    def __post_init__(self):
        for name in ("n_train", "n_validate", "minibatch", "n_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_steps_per_epoch < 0:
            raise ValueError("max_steps_per_epoch must be nonnegative")
        if self.minibatch > self.n_train:
            raise ValueError("minibatch cannot exceed n_train")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["adam"] = AdamConfig(**d.get("adam", {}))
        return cls(**d)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: list, grads: list, state: AdamState, config: AdamConfig = AdamConfig()):
    """Bias-corrected Adam update, applied in place; returns ``(params, state)``."""
    if len(params) != len(grads) or any(np.shape(p) != np.shape(g) for p, g in zip(params, grads)):
        raise ShapeMismatch("parameter and gradient shapes differ")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.step_size * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params, state


# -- features ----------------------------------------------------------------

_LOG1P_FAMILIES = {"poisson", "gamma", "exponential"}


def raw_features(values: dict, factor: InverseFactor, n: int) -> np.ndarray:
    if not factor.conditioners:
        return np.zeros((n, 0))
    return np.column_stack([np.broadcast_to(np.asarray(values[c], dtype=float), (n,))
                            for c in factor.conditioners])


def plate_summary_features(values: dict, factor: InverseFactor, n: int) -> np.ndarray:
    """Mean, mean log, stdev of log, and count of replicated positive conditioners."""
    th = np.column_stack([np.broadcast_to(np.asarray(values[c], dtype=float), (n,))
                          for c in factor.conditioners])
    lg = np.log(th)
    return np.column_stack([th.mean(1), lg.mean(1), lg.std(1), np.full(n, th.shape[1], dtype=float)])


FEATURES = {"raw": raw_features, "plate_summary": plate_summary_features}


def feature_transforms(model: GraphModel, factor: InverseFactor, feature: str) -> tuple[str, ...]:
    if feature == "plate_summary":
        return ("log1p", "identity", "identity", "identity")
    return tuple("log1p" if model.node(c).dist.family in _LOG1P_FAMILIES else "identity"
                 for c in factor.conditioners)


def feature_dim(factor: InverseFactor, feature: str) -> int:
    return 4 if feature == "plate_summary" else len(factor.conditioners)


@dataclass(frozen=True)
class FactorSpec:
    """One trainable network: the factors it serves and how inputs are built."""

    key: str
    factor_indices: tuple[int, ...]
    shape: NetworkShape
    feature: str = "raw"
    cond_transform: tuple[str, ...] = ()
    target_transform: tuple[str, ...] = ()


def network_key(factor: InverseFactor, index: int) -> str:
    return factor.share_group or f"factor{index}"


def make_specs(
    model: GraphModel,
    inv: InverseModel,
    hidden: dict | tuple,
    components: dict | int = 1,
    features: dict | None = None,
) -> dict[str, FactorSpec]:
    """One :class:`FactorSpec` per share group or ungrouped factor.

    ``hidden``/``components``/``features`` may be single values or dicts
    keyed by network key.
    """
    features = features or {}
    groups: dict[str, list[int]] = {}
    for i, f in enumerate(inv.factors):
        groups.setdefault(network_key(f, i), []).append(i)
    specs = {}
    for key, idx in groups.items():
        f = inv.factors[idx[0]]
        fams = [model.node(t).dist.family for t in f.targets]
        binary = all(fam == "bernoulli" for fam in fams)
        if not binary and any(model.node(t).support == "discrete" for t in f.targets):
            raise NotImplementedError(f"mixed or non-binary discrete block {f.describe()}")
        feat = features.get(key, "raw")
        hid = hidden.get(key) if isinstance(hidden, dict) else hidden
        D = components.get(key, 1) if isinstance(components, dict) else components
        shape = NetworkShape(len(f.targets), feature_dim(f, feat), tuple(hid),
                             "bernoulli" if binary else "mixture", 1 if binary else D)
        ttrans = tuple("log" if model.node(t).dist.impl.positive else "identity" for t in f.targets)
        specs[key] = FactorSpec(key, tuple(idx), shape, feat, feature_transforms(model, f, feat),
                                ("identity",) * len(f.targets) if binary else ttrans)
    return specs


# -- datasets ----------------------------------------------------------------

@dataclass
class FactorDataset:
    cond: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return self.targets.shape[0]


def project(values: dict, inv: InverseModel, spec: FactorSpec, n: int) -> FactorDataset:
    """Stack rows for every factor a spec serves (pooling plate instances)."""
    conds, tgts = [], []
    feat = FEATURES[spec.feature]
    for i in spec.factor_indices:
        f = inv.factors[i]
        conds.append(feat(values, f, n))
        tgts.append(np.column_stack([np.broadcast_to(np.asarray(values[t], dtype=float), (n,))
                                     for t in f.targets]))
    cond, targets = np.concatenate(conds), np.concatenate(tgts)
    ok = np.isfinite(cond).all(1) & np.isfinite(targets).all(1)
    return FactorDataset(cond[ok], targets[ok])


def _default_specs(inv: InverseModel) -> dict[str, FactorSpec]:
    merged: dict = {}
    for i, f in enumerate(inv.factors):
        merged.setdefault(network_key(f, i), []).append(i)
    return {k: FactorSpec(k, tuple(v), None) for k, v in merged.items()}


def synth_dataset(
    model: GraphModel,
    inv: InverseModel,
    n: int,
    rng: np.random.Generator,
    specs: dict[str, FactorSpec] | None = None,
) -> dict[str, FactorDataset]:
    """Ancestrally sample ``n`` joint draws and project them onto each network's rows."""
    return synth_datasets(model, inv, (n,), rng, specs)[0]


def synth_datasets(
    model: GraphModel,
    inv: InverseModel,
    sizes: tuple[int, ...],
    rng: np.random.Generator,
    specs: dict[str, FactorSpec] | None = None,
) -> list[dict[str, FactorDataset]]:
    """One ancestral pass split into consecutive, independent datasets of the given sizes."""
    specs = specs if specs is not None else _default_specs(inv)
    values = ancestral_sample(model, rng, size=sum(sizes))
    out, start = [], 0
    for n in sizes:
        part = {v: np.asarray(x)[start:start + n] for v, x in values.items()}
        out.append({key: project(part, inv, spec, n) for key, spec in specs.items()})
        start += n
    return out


def validation_nll(net: MaskedNetwork, dataset: FactorDataset) -> float:
    if len(dataset) == 0:
        raise EmptyDataset("validation set is empty")
    return float(-np.mean(made.log_prob(net, dataset.cond, dataset.targets)))


def _robust_location_scale(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # median and IQR: heavy-tailed priors (e.g. underflowing gamma draws) would swamp mean/std
    if x.shape[1] == 0:
        return np.zeros(0), np.zeros(0)
    q25, med, q75 = np.percentile(x, [25, 50, 75], axis=0)
    scale = (q75 - q25) / 1.349
    sd = x.std(0)
    scale = np.where(scale > 1e-12, scale, np.where(sd > 1e-12, sd, 1.0))
    return med, scale


def fit_normalization(net: MaskedNetwork, data: FactorDataset) -> None:
    """Set per-input location/scale from a batch of (transformed) rows."""
    c = made._transform_columns(net.cond_transform, data.cond)
    net.cond_mean, net.cond_scale = _robust_location_scale(c)
    if net.shape.head == "mixture":
        t = made._transform_columns(net.target_transform, data.targets)
        net.target_mean, net.target_scale = _robust_location_scale(t)


@dataclass
class TraceRow:
    epoch: int
    step: int
    validation_nll: float


def train_factor(
    model: GraphModel,
    inv: InverseModel,
    spec: FactorSpec,
    net: MaskedNetwork,
    config: TrainConfig,
    rng: np.random.Generator,
    normalize: bool = True,
) -> tuple[MaskedNetwork, list[TraceRow]]:
    """Hybrid epoch loop: fresh synthetic data per epoch, Adam steps while validation improves."""
    if net.shape != spec.shape:
        raise ShapeMismatch(f"network shape {net.shape} does not match {spec.shape}")
    net = net.copy()
    trace: list[TraceRow] = []
    if config.max_steps_per_epoch == 0:
        return net, trace
    state = AdamState.zeros_like(net.params)
    specs = {spec.key: spec}
    for epoch in range(config.n_epochs):
        train, val = (d[spec.key] for d in synth_datasets(
            model, inv, (config.n_train, config.n_validate), rng, specs))
        if normalize and epoch == 0:
            fit_normalization(net, train)
        best = validation_nll(net, val)
        trace.append(TraceRow(epoch, 0, best))
        for step in range(1, config.max_steps_per_epoch + 1):
            idx = rng.choice(len(train), size=min(config.minibatch, len(train)), replace=False)
            grads = made.backward(net, train.cond[idx], train.targets[idx]).grads
            adam_step(net.params, grads, state, config.adam)
            current = validation_nll(net, val)
            trace.append(TraceRow(epoch, step, current))
            if current > best + config.tolerance:
                break
            best = min(best, current)
        log.info("%s epoch %d: validation nll %.5f after %d steps", spec.key, epoch, best, step)
    return net, trace


# -- artifacts ---------------------------------------------------------------

@dataclass
class TrainArtifact:
    model_name: str
    model_config: dict
    inverse: list[dict]
    specs: dict[str, FactorSpec]
    networks: dict[str, MaskedNetwork]
    config: TrainConfig
    build_timestamp: int | None = None
    traces: dict[str, list[TraceRow]] = field(default_factory=dict)

    def network_for(self, factor_index: int) -> tuple[FactorSpec, MaskedNetwork]:
        for key, spec in self.specs.items():
            if factor_index in spec.factor_indices:
                return spec, self.networks[key]
        raise KeyError(f"no network serves factor {factor_index}")

    def to_dict(self) -> dict:
        return {
            "format": ARTIFACT_FORMAT,
            "version": ARTIFACT_VERSION,
            "manifest": {
                "model": self.model_name,
                "model_config": self.model_config,
                "inverse": self.inverse,
                "config": self.config.to_dict(),
                "seed": self.config.seed,
                "build_timestamp": self.build_timestamp,
                "specs": {
                    k: {"factors": list(s.factor_indices), "feature": s.feature,
                        "cond_transform": list(s.cond_transform),
                        "target_transform": list(s.target_transform)}
                    for k, s in self.specs.items()
                },
            },
            "networks": {k: made.network_to_dict(n) for k, n in self.networks.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainArtifact":
        if d.get("format") != ARTIFACT_FORMAT:
            raise made.VersionMismatch(f"not a training artifact: {d.get('format')!r}")
        if d.get("version") != ARTIFACT_VERSION:
            raise made.VersionMismatch(f"unsupported artifact version {d.get('version')!r}")
        man = d["manifest"]
        nets = {k: made.network_from_dict(v) for k, v in d["networks"].items()}
        specs = {
            k: FactorSpec(k, tuple(s["factors"]), nets[k].shape, s["feature"],
                          tuple(s["cond_transform"]), tuple(s["target_transform"]))
            for k, s in man["specs"].items()
        }
        return cls(man["model"], man["model_config"], man["inverse"], specs, nets,
                   TrainConfig.from_dict(man["config"]), man["build_timestamp"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TrainArtifact":
        return cls.from_dict(json.loads(Path(path).read_text()))


def describe_inverse(inv: InverseModel) -> list[dict]:
    return [{"targets": [str(t) for t in f.targets],
             "conditioners": [str(c) for c in f.conditioners],
             "share_group": f.share_group} for f in inv.factors]


def _build_timestamp() -> int | None:
    # reproducible-build convention; wall-clock time would break byte-identical artifacts
    raw = os.environ.get("SOURCE_DATE_EPOCH")
    return int(raw) if raw else None


def train_all(
    model: GraphModel,
    inv: InverseModel,
    specs: dict[str, FactorSpec],
    config: TrainConfig,
    model_config: dict | None = None,
    configs: dict[str, TrainConfig] | None = None,
) -> TrainArtifact:
    """Train one network per spec, each from its own seeded stream.

    ``configs`` optionally overrides ``config`` per network key.
    """
    configs = configs or {}
    root = np.random.SeedSequence(config.seed)
    streams = root.spawn(len(specs))
    nets, traces = {}, {}
    for (key, spec), ss in zip(specs.items(), streams):
        rng = np.random.default_rng(ss)
        net = made.init_network(spec.shape, rng, cond_transform=spec.cond_transform,
                                target_transform=spec.target_transform)
        nets[key], traces[key] = train_factor(model, inv, spec, net, configs.get(key, config), rng)
    return TrainArtifact(model.name, model_config or {}, describe_inverse(inv), specs, nets,
                         config, _build_timestamp(), traces)
