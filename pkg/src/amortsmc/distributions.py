"""Vectorized univariate families used by graph nodes.

Every family exposes ``logpdf(x, *params)`` and ``sample(rng, *params, size)``
operating elementwise on numpy arrays, so the same node definitions serve
single assignments and whole particle populations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

_LOG_2PI = np.log(2.0 * np.pi)
_TINY = np.finfo(float).tiny

# numpy's Poisson sampler rejects very large rates
_POISSON_EXACT_MAX = 1e12


class InvalidParameters(ValueError):
    """A parameter transform produced values outside a family's domain."""


@dataclass(frozen=True)
class Family:
    name: str
    params: tuple[str, ...]
    discrete: bool
    logpdf: Callable[..., np.ndarray]
    sampler: Callable[..., np.ndarray]
    valid: Callable[..., np.ndarray]
    positive: bool = False

    def check(self, *params) -> None:
        ok = np.all(self.valid(*(np.asarray(p, dtype=float) for p in params)))
        if not ok:
            raise InvalidParameters(f"{self.name}{tuple(params)!r} violates parameter constraints")

    def sample(self, rng: np.random.Generator, *params, size=None) -> np.ndarray:
        self.check(*params)
        if size is None:
            size = np.broadcast(*(np.asarray(p) for p in params)).shape or None
        return self.sampler(rng, *params, size=size)


def _gaussian_logpdf(x, mean, variance):
    return -0.5 * (_LOG_2PI + np.log(variance) + (x - mean) ** 2 / variance)


def _laplace_logpdf(x, loc, scale):
    return -np.log(2.0 * scale) - np.abs(x - loc) / scale


def _student_t_logpdf(x, dof, loc, scale):
    z = (x - loc) / scale
    return (
        special.gammaln(0.5 * (dof + 1.0))
        - special.gammaln(0.5 * dof)
        - 0.5 * np.log(dof * np.pi)
        - np.log(scale)
        - 0.5 * (dof + 1.0) * np.log1p(z * z / dof)
    )


def _gamma_logpdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * np.log(rate) - special.gammaln(shape) + special.xlogy(shape - 1.0, x) - rate * x
    return np.where(x > 0, out, -np.inf)


def _exponential_logpdf(x, rate):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, np.log(rate) - rate * x, -np.inf)


def _poisson_logpdf(x, rate):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = special.xlogy(x, rate) - rate - special.gammaln(x + 1.0)
    ok = (x >= 0) & (x == np.floor(x))
    return np.where(ok, out, -np.inf)


def _bernoulli_logpdf(x, p):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(x == 1.0, np.log(p), np.log1p(-np.asarray(p, dtype=float)))
    return np.where((x == 0.0) | (x == 1.0), out, -np.inf)


def _uniform_logpdf(x, low, high):
    x = np.asarray(x, dtype=float)
    inside = (x >= low) & (x <= high)
    return np.where(inside, -np.log(high - low), -np.inf)


def _gamma_sample(rng, shape, rate, size):
    # underflow to exactly zero is possible for small shapes; keep samples in the open support
    return np.maximum(rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float), size=size), _TINY)


def _poisson_sample(rng, rate, size):
    rate = np.broadcast_to(np.asarray(rate, dtype=float), size if size is not None else np.shape(rate))
    big = rate > _POISSON_EXACT_MAX
    out = rng.poisson(np.where(big, 0.0, rate)).astype(float)
    if np.any(big):
        approx = np.rint(rng.normal(rate, np.sqrt(rate)))
        out = np.where(big, np.maximum(approx, 0.0), out)
    return out


FAMILIES: dict[str, Family] = {
    "gaussian": Family(
        "gaussian", ("mean", "variance"), False, _gaussian_logpdf,
        lambda rng, m, v, size: rng.normal(m, np.sqrt(v), size=size),
        lambda m, v: v > 0,
    ),
    "laplace": Family(
        "laplace", ("loc", "scale"), False, _laplace_logpdf,
        lambda rng, loc, s, size: rng.laplace(loc, s, size=size),
        lambda loc, s: s > 0,
    ),
    "student_t": Family(
        "student_t", ("dof", "loc", "scale"), False, _student_t_logpdf,
        lambda rng, nu, loc, s, size: loc + s * rng.standard_t(nu, size=size),
        lambda nu, loc, s: (nu > 0) & (s > 0),
    ),
    "gamma": Family(
        "gamma", ("shape", "rate"), False, _gamma_logpdf, _gamma_sample,
        lambda a, b: (a > 0) & (b > 0), positive=True,
    ),
    "exponential": Family(
        "exponential", ("rate",), False, _exponential_logpdf,
        lambda rng, r, size: np.maximum(rng.exponential(1.0 / np.asarray(r, dtype=float), size=size), _TINY),
        lambda r: r > 0, positive=True,
    ),
    "poisson": Family(
        "poisson", ("rate",), True, _poisson_logpdf, _poisson_sample,
        lambda r: r >= 0,
    ),
    "bernoulli": Family(
        "bernoulli", ("p",), True, _bernoulli_logpdf,
        lambda rng, p, size: np.asarray(rng.random(size=size) < p, dtype=float),
        lambda p: (p >= 0) & (p <= 1),
    ),
    "uniform": Family(
        "uniform", ("low", "high"), False, _uniform_logpdf,
        lambda rng, lo, hi, size: rng.uniform(lo, hi, size=size),
        lambda lo, hi: lo < hi,
    ),
}


def family(name: str) -> Family:
    try:
        return FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown distribution family {name!r}") from None
