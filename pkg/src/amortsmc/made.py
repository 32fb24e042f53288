"""Conditional masked autoregressive density networks.

A feedforward ReLU network over ``[conditioning inputs, target inputs]`` whose
binary masks make the head for target ``i`` a function of the conditioning
inputs and targets ``1..i-1`` only. Hidden units carry integer labels in
``0..N-1``; label-0 units see only the conditioning inputs. Heads emit either
a univariate Gaussian mixture or a Bernoulli probability per target.

Everything here is plain numpy with hand-written reverse mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, log_softmax, logsumexp, softmax

SIGMA_FLOOR = 1e-3
FORMAT = "amortsmc.masked-network"
VERSION = 1
_LOG_2PI = np.log(2.0 * np.pi)


class DimensionMismatch(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class NetworkShape:
    n_targets: int
    n_cond: int
    hidden_sizes: tuple[int, ...]
    head: str = "mixture"  # "mixture" | "bernoulli"
    n_components: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("need at least one nonempty hidden layer")
        if self.n_targets < 1 or self.n_cond < 0 or self.n_components < 1:
            raise ValueError(f"invalid network shape {self}")
        if self.head not in ("mixture", "bernoulli"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def n_inputs(self) -> int:
        return self.n_cond + self.n_targets

    @property
    def outputs_per_target(self) -> int:
        return 3 * self.n_components if self.head == "mixture" else 1


@dataclass(frozen=True)
class MaskSet:
    unit_labels: tuple[np.ndarray, ...]
    masks: tuple[np.ndarray, ...]  # one per weight matrix, shaped (out, in)


@dataclass
class MixtureParams:
    """Per-target mixture parameters, each shaped ``(batch, N, D)``.

    Values live in the network's normalized target space.
    """

    weights: np.ndarray
    means: np.ndarray
    stdevs: np.ndarray


@dataclass
class GradientSet:
    grads: list[np.ndarray]
    value: float


def build_masks(shape: NetworkShape, labeling_seed: int | None = None) -> MaskSet:
    """Round-robin hidden labels (or shuffled with ``labeling_seed``) and derived masks."""
    N = shape.n_targets
    rng = np.random.default_rng(labeling_seed) if labeling_seed is not None else None
    labels = []
    for h in shape.hidden_sizes:
        lab = np.arange(h) % N
        if rng is not None:
            lab = rng.permutation(lab)
        labels.append(lab)

    return _masks_from_labels(shape, labels)


@dataclass
class MaskedNetwork:
    shape: NetworkShape
    masks: MaskSet
    params: list[np.ndarray]  # [W_0, b_0, ..., W_L, b_L]; last pair is the output layer
    cond_transform: tuple[str, ...] = ()
    target_transform: tuple[str, ...] = ()
    cond_mean: np.ndarray = field(default=None)
    cond_scale: np.ndarray = field(default=None)
    target_mean: np.ndarray = field(default=None)
    target_scale: np.ndarray = field(default=None)
    sigma_floor: float = SIGMA_FLOOR

    def __post_init__(self):
        s = self.shape
        if not self.cond_transform:
            self.cond_transform = ("identity",) * s.n_cond
        if not self.target_transform:
            self.target_transform = ("identity",) * s.n_targets
        self.cond_transform = tuple(self.cond_transform)
        self.target_transform = tuple(self.target_transform)
        if self.cond_mean is None:
            self.cond_mean = np.zeros(s.n_cond)
        if self.cond_scale is None:
            self.cond_scale = np.ones(s.n_cond)
        if self.target_mean is None:
            self.target_mean = np.zeros(s.n_targets)
        if self.target_scale is None:
            self.target_scale = np.ones(s.n_targets)
        if len(self.cond_transform) != s.n_cond or len(self.target_transform) != s.n_targets:
            raise DimensionMismatch("transform lists do not match the network shape")

    @property
    def weights(self) -> list[np.ndarray]:
        return self.params[0::2]

    @property
    def biases(self) -> list[np.ndarray]:
        return self.params[1::2]

    def copy(self) -> "MaskedNetwork":
        return MaskedNetwork(
            self.shape, self.masks, [p.copy() for p in self.params],
            self.cond_transform, self.target_transform,
            self.cond_mean.copy(), self.cond_scale.copy(),
            self.target_mean.copy(), self.target_scale.copy(), self.sigma_floor,
        )


def init_network(
    shape: NetworkShape,
    rng: np.random.Generator,
    labeling_seed: int | None = None,
    **kwargs,
) -> MaskedNetwork:
    """Glorot-uniform masked weights, zero biases, mixture means spread over [-2, 2]."""
    masks = build_masks(shape, labeling_seed)
    params = []
    for m in masks.masks:
        fan_out, fan_in = m.shape
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-lim, lim, size=m.shape) * m)
        params.append(np.zeros(fan_out))
    if shape.head == "mixture":
        D = shape.n_components
        spread = np.linspace(-2.0, 2.0, D) if D > 1 else np.zeros(1)
        params[-1].reshape(shape.n_targets, 3, D)[:, 1, :] = spread
    return MaskedNetwork(shape, masks, params, **kwargs)


def zero_network(shape: NetworkShape, **kwargs) -> MaskedNetwork:
    masks = build_masks(shape)
    params = []
    for m in masks.masks:
        params += [np.zeros(m.shape), np.zeros(m.shape[0])]
    return MaskedNetwork(shape, masks, params, **kwargs)


def _apply(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return x
    if kind == "log":
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(x)
    if kind == "log1p":
        return np.log1p(np.maximum(x, 0.0))
    raise ValueError(f"unknown transform {kind!r}")


def _transform_columns(kinds, x):
    if all(k == "identity" for k in kinds):
        return x
    out = np.empty_like(x)
    for j, k in enumerate(kinds):
        out[:, j] = _apply(k, x[:, j])
    return out


def _as_batch(net: MaskedNetwork, cond, targets):
    cond = np.asarray(cond, dtype=float)
    targets = np.asarray(targets, dtype=float)
    single = targets.ndim == 1
    cond = np.atleast_2d(cond) if cond.size or cond.ndim > 1 else np.zeros((1, 0))
    targets = np.atleast_2d(targets)
    if cond.shape[0] == 1 and targets.shape[0] > 1:
        cond = np.broadcast_to(cond, (targets.shape[0], cond.shape[1]))
    if cond.shape[1] != net.shape.n_cond or targets.shape[1] != net.shape.n_targets:
        raise DimensionMismatch(
            f"expected cond dim {net.shape.n_cond} and target dim {net.shape.n_targets}, "
            f"got {cond.shape[1]} and {targets.shape[1]}")
    if cond.shape[0] != targets.shape[0]:
        raise DimensionMismatch("cond and targets disagree on batch size")
    return cond, targets, single


def normalize_inputs(net: MaskedNetwork, cond, targets):
    c = (_transform_columns(net.cond_transform, cond) - net.cond_mean) / net.cond_scale
    t = (_transform_columns(net.target_transform, targets) - net.target_mean) / net.target_scale
    return c, t


def _forward(net: MaskedNetwork, cond, targets):
    c, z = normalize_inputs(net, cond, targets)
    h = np.concatenate([c, z], axis=1)
    acts = [h]
    pre = []
    n_hidden = len(net.shape.hidden_sizes)
    for k in range(n_hidden):
        W, b, M = net.params[2 * k], net.params[2 * k + 1], net.masks.masks[k]
        a = h @ (W * M).T + b
        pre.append(a)
        h = np.maximum(a, 0.0)
        acts.append(h)
    V, c_out, Mv = net.params[-2], net.params[-1], net.masks.masks[-1]
    out = h @ (V * Mv).T + c_out
    return z, acts, pre, out


def _mixture_terms(net: MaskedNetwork, out: np.ndarray):
    D = net.shape.n_components
    o = out.reshape(out.shape[0], net.shape.n_targets, 3, D)
    logits, means, raw = o[:, :, 0, :], o[:, :, 1, :], o[:, :, 2, :]
    soft = np.logaddexp(0.0, raw)
    sig = np.maximum(soft, net.sigma_floor)
    return logits, means, raw, sig


def forward(net: MaskedNetwork, cond, targets):
    """Head parameters: :class:`MixtureParams` or Bernoulli probabilities ``(batch, N)``.

    Single (1-D) inputs give a batch of one.
    """
    cond, targets, _ = _as_batch(net, cond, targets)
    _, _, _, out = _forward(net, cond, targets)
    if net.shape.head == "bernoulli":
        return expit(out)
    logits, means, _, sig = _mixture_terms(net, out)
    return MixtureParams(softmax(logits, axis=-1), means, sig)


def _log_jacobian(net: MaskedNetwork, targets: np.ndarray) -> np.ndarray:
    """log |dz/dx| summed over target dimensions."""
    if net.shape.head == "bernoulli":
        return np.zeros(targets.shape[0])
    out = -np.sum(np.log(net.target_scale)) * np.ones(targets.shape[0])
    for j, k in enumerate(net.target_transform):
        if k == "log":
            with np.errstate(divide="ignore", invalid="ignore"):
                out = out - np.log(targets[:, j])
    return out


def _head_logq(net: MaskedNetwork, z, out, targets):
    """Per-target log density in normalized space, plus intermediates."""
    if net.shape.head == "bernoulli":
        # Bernoulli targets are fed raw (0/1), never normalized
        x = targets
        logq = x * out - np.logaddexp(0.0, out)
        return logq, None
    logits, means, raw, sig = _mixture_terms(net, out)
    logw = log_softmax(logits, axis=-1)
    r = (z[:, :, None] - means) / sig
    comp = logw - 0.5 * _LOG_2PI - np.log(sig) - 0.5 * r * r
    logq = logsumexp(comp, axis=-1)
    return logq, (logits, means, raw, sig, logw, comp, r)


def log_prob(net: MaskedNetwork, cond, targets):
    """Total log density of ``targets`` under the network, in the original space."""
    cond, targets, single = _as_batch(net, cond, targets)
    z, _, _, out = _forward(net, cond, targets)
    logq, _ = _head_logq(net, z, out, targets)
    total = logq.sum(axis=1) + _log_jacobian(net, targets)
    total = np.where(np.isnan(total), -np.inf, total)
    return float(total[0]) if single else total


def sample(net: MaskedNetwork, cond, rng: np.random.Generator, n: int | None = None):
    """Draw targets one dimension at a time; returns ``(samples, log_prob)``.

    ``cond`` may be one conditioning vector (optionally repeated ``n`` times)
    or a ``(batch, n_cond)`` array with one row per draw.
    """
    cond = np.asarray(cond, dtype=float)
    single = cond.ndim == 1 and n is None
    cond = np.atleast_2d(cond) if cond.ndim == 1 else cond
    if n is not None:
        cond = np.broadcast_to(cond, (n, net.shape.n_cond)) if cond.shape[0] == 1 else cond
    B, N = cond.shape[0], net.shape.n_targets
    x = np.zeros((B, N))
    if net.shape.head == "mixture":
        # placeholder values must be valid under the target transform
        for j, k in enumerate(net.target_transform):
            if k == "log":
                x[:, j] = 1.0
    for i in range(N):
        params = forward(net, cond, x)
        if net.shape.head == "bernoulli":
            x[:, i] = (rng.random(B) < params[:, i]).astype(float)
            continue
        w, mu, sd = params.weights[:, i, :], params.means[:, i, :], params.stdevs[:, i, :]
        u = rng.random(B)[:, None]
        comp = np.minimum((np.cumsum(w, axis=1) < u).sum(axis=1), w.shape[1] - 1)
        rows = np.arange(B)
        z = mu[rows, comp] + sd[rows, comp] * rng.standard_normal(B)
        v = z * net.target_scale[i] + net.target_mean[i]
        if net.target_transform[i] == "log":
            v = np.exp(np.minimum(v, 700.0))
        x[:, i] = v
    lp = log_prob(net, cond, x)
    if single:
        return x[0], float(lp[0])
    return x, lp


def backward(net: MaskedNetwork, cond, targets) -> GradientSet:
    """Exact gradient of the mean of ``-log_prob`` over the batch w.r.t. all parameters."""
    cond, targets, _ = _as_batch(net, cond, targets)
    B = targets.shape[0]
    z, acts, pre, out = _forward(net, cond, targets)
    logq, cache = _head_logq(net, z, out, targets)
    value = float(-(logq.sum(axis=1) + _log_jacobian(net, targets)).mean())

    if net.shape.head == "bernoulli":
        d_out = expit(out) - targets
    else:
        logits, means, raw, sig, logw, comp, r = cache
        resp = np.exp(comp - logq[..., None])
        d_logits = np.exp(logw) - resp
        d_means = -resp * r / sig
        d_sig = resp * (1.0 - r * r) / sig
        d_raw = d_sig * expit(raw) * (np.logaddexp(0.0, raw) > net.sigma_floor)
        d_out = np.stack([d_logits, d_means, d_raw], axis=2).reshape(B, -1)
    d_out = d_out / B

    grads: list[np.ndarray] = [None] * len(net.params)
    masks = net.masks.masks
    L = len(net.shape.hidden_sizes)
    grads[-2] = (d_out.T @ acts[-1]) * masks[-1]
    grads[-1] = d_out.sum(axis=0)
    dh = d_out @ (net.params[-2] * masks[-1])
    for k in reversed(range(L)):
        da = dh * (pre[k] > 0)
        grads[2 * k] = (da.T @ acts[k]) * masks[k]
        grads[2 * k + 1] = da.sum(axis=0)
        if k:
            dh = da @ (net.params[2 * k] * masks[k])
    return GradientSet(grads, value)


def mixture_moments(net: MaskedNetwork, cond, prefix=None):
    """Mean and standard deviation of each head in the original space.

    Only defined for identity-transformed mixture targets; ``prefix`` supplies
    the earlier target values the heads condition on.
    """
    cond = np.atleast_2d(np.asarray(cond, dtype=float))
    prefix = np.zeros((cond.shape[0], net.shape.n_targets)) if prefix is None else np.atleast_2d(prefix)
    p = forward(net, cond, prefix)
    m = (p.weights * p.means).sum(-1)
    var = (p.weights * (p.stdevs ** 2 + p.means ** 2)).sum(-1) - m ** 2
    return m * net.target_scale + net.target_mean, np.sqrt(var) * net.target_scale


# -- serialization -----------------------------------------------------------

def _arr(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel(order="C").tolist()}


def _unarr(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=float).reshape(d["shape"])


def network_to_dict(net: MaskedNetwork) -> dict:
    s = net.shape
    return {
        "format": FORMAT,
        "version": VERSION,
        "shape": {
            "n_targets": s.n_targets, "n_cond": s.n_cond, "hidden_sizes": list(s.hidden_sizes),
            "head": s.head, "n_components": s.n_components,
        },
        "sigma_floor": net.sigma_floor,
        "unit_labels": [lab.tolist() for lab in net.masks.unit_labels],
        "cond_transform": list(net.cond_transform),
        "target_transform": list(net.target_transform),
        "input_norm": {
            "cond_mean": _arr(net.cond_mean), "cond_scale": _arr(net.cond_scale),
            "target_mean": _arr(net.target_mean), "target_scale": _arr(net.target_scale),
        },
        "params": [_arr(p) for p in net.params],
    }


def network_from_dict(d: dict) -> MaskedNetwork:
    if d.get("format") != FORMAT:
        raise VersionMismatch(f"not a masked-network document: {d.get('format')!r}")
    if d.get("version") != VERSION:
        raise VersionMismatch(f"unsupported network file version {d.get('version')!r}")
    shape = NetworkShape(**d["shape"])
    labels = [np.asarray(lab, dtype=int) for lab in d["unit_labels"]]
    masks = _masks_from_labels(shape, labels)
    norm = d["input_norm"]
    return MaskedNetwork(
        shape, masks, [_unarr(p) for p in d["params"]],
        tuple(d["cond_transform"]), tuple(d["target_transform"]),
        _unarr(norm["cond_mean"]), _unarr(norm["cond_scale"]),
        _unarr(norm["target_mean"]), _unarr(norm["target_scale"]),
        float(d["sigma_floor"]),
    )


def _masks_from_labels(shape: NetworkShape, labels) -> MaskSet:
    # input columns: conditioning inputs carry label -1, target j (0-based) label j + 1;
    # a unit sees every unit whose label does not exceed its own, and head i sees labels <= i
    N = shape.n_targets
    prev = np.concatenate([np.full(shape.n_cond, -1), np.arange(1, N + 1)])
    masks = []
    for lab in labels:
        masks.append((lab[:, None] >= prev[None, :]).astype(float))
        prev = lab
    head_of_output = np.repeat(np.arange(N), shape.outputs_per_target)
    masks.append((prev[None, :] <= head_of_output[:, None]).astype(float))
    return MaskSet(tuple(labels), tuple(masks))


def save_network(net: MaskedNetwork, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net)))


def load_network(path) -> MaskedNetwork:
    return network_from_dict(json.loads(Path(path).read_text()))
