"""Seeded random streams and the frequency weighting distributions.

Only uniform doubles are taken from numpy's PCG64 bit generator, whose
output is bit-identical across platforms; every other distribution is
built from them here (Box-Muller normals, inverse-CDF Laplace, Student-t
as normal over sqrt(chi^2/dof)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma, kv

from . import diffcore as dc
from .diffcore import ContractError, Tensor

FAMILIES = ("gaussian", "student_t", "laplace", "uniform")


class Rng:
    """Deterministic random stream keyed by a 64-bit seed and an optional path."""

    def __init__(self, seed, *path):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence([self.seed & (2**64 - 1), *self.path])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *path):
        """Independent stream derived from (seed, path..., *path)."""
        return Rng(self.seed, *self.path, *path)

    def uniform(self, size, low=0.0, high=1.0):
        return low + (high - low) * self._gen.random(size)

    def uniform_open(self, size):
        """Uniform on (0, 1]; safe under log."""
        return 1.0 - self._gen.random(size)

    def normal(self, size):
        size = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(size))
        half = (count + 1) // 2
        u1 = self.uniform_open(half)
        u2 = self._gen.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:count].reshape(size)

    def laplace(self, size):
        u = self._gen.random(size) - 0.5
        # inverse CDF; |u| < 1/2 strictly keeps the log finite
        return -np.sign(u) * np.log1p(-2.0 * np.abs(u))

    def chisquare(self, dof, size):
        if dof == 2:
            return -2.0 * np.log(self.uniform_open(size))
        return 2.0 * self._gen.standard_gamma(dof / 2.0, size)

    def student_t(self, dof, size):
        if dof <= 0:
            raise ContractError(f"Student-t needs dof > 0, got {dof}")
        z = self.normal(size)
        return z / np.sqrt(self.chisquare(dof, size) / dof)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)


def sample_base(rng, family, k, m, dof=2.0):
    """Draw a k x m matrix from the unit-scale member of ``family``."""
    if k < 1 or m < 1:
        raise ContractError(f"sample_base needs k, m >= 1, got k={k}, m={m}")
    shape = (k, m)
    if family == "gaussian":
        return rng.normal(shape)
    if family == "student_t":
        return rng.student_t(dof, shape)
    if family == "laplace":
        return rng.laplace(shape)
    if family == "uniform":
        return rng.uniform(shape, -1.0, 1.0)
    raise ContractError(f"unknown weighting family {family!r}; expected one of {FAMILIES}")


@dataclass
class WeightingDistribution:
    """Frequency distribution ``t = sigma * eps`` with ``eps`` from a unit family.

    ``log_scale`` is a 1 x m diffcore tensor; exponentiating it keeps sigma
    positive under unconstrained gradient steps.  The uniform family has
    bounded support and so does not give a metric.
    """

    family: str
    log_scale: Tensor
    dof: float = 2.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractError(f"unknown weighting family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "student_t" and self.dof <= 0:
            raise ContractError(f"Student-t needs dof > 0, got {self.dof}")
        if not np.all(np.isfinite(self.log_scale.data)):
            raise ContractError("scale must be finite and strictly positive")

    @classmethod
    def create(cls, family, scale, m=None, dof=2.0, trainable=False):
        scale = np.atleast_1d(np.asarray(scale, dtype=np.float64))
        if m is not None and scale.size == 1:
            scale = np.full(m, scale[0])
        if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
            raise ContractError(f"scale must be finite and strictly positive, got {scale}")
        return cls(family, Tensor(np.log(scale), requires_grad=trainable), dof)

    @property
    def m(self):
        return self.log_scale.shape[1]

    @property
    def scale(self):
        return np.exp(self.log_scale.data[0])

    def sigma(self):
        """sigma as a differentiable 1 x m tensor."""
        return dc.exp(self.log_scale)

    def sigma_norm(self):
        return dc.norm_l2(self.sigma(), axis=1)

    def frozen(self):
        """Copy whose scale carries no gradient."""
        return WeightingDistribution(self.family, Tensor(self.log_scale.data.copy()), self.dof)


@dataclass
class FrequencyBatch:
    t: Tensor
    eps: np.ndarray = field(repr=False)

    @property
    def k(self):
        return self.t.shape[0]

    @property
    def m(self):
        return self.t.shape[1]


def frequencies_from_base(dist, eps):
    """Scale fixed base draws by the distribution's sigma (reparameterization)."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim != 2 or eps.shape[1] != dist.m:
        raise ContractError(f"base draws of shape {eps.shape} do not match dimension {dist.m}")
    return FrequencyBatch(dc.mul(dist.sigma(), Tensor(eps)), eps)


def sample_frequencies(dist, rng, k):
    """k frequencies from ``dist``; gradients flow into its log-scale."""
    eps = sample_base(rng, dist.family, k, dist.m, dist.dof)
    return frequencies_from_base(dist, eps)


def characteristic_function(dist, u):
    """Closed-form E_t[cos<t, u>] for each row of ``u`` (coordinates independent)."""

    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    s = np.abs(u * dist.scale)
    if dist.family == "gaussian":
        per = np.exp(-0.5 * s * s)
    elif dist.family == "laplace":
        per = 1.0 / (1.0 + s * s)
    elif dist.family == "uniform":
        per = np.sinc(s / np.pi)
    else:
        nu = dist.dof
        z = np.sqrt(nu) * s
        with np.errstate(invalid="ignore"):
            per = kv(nu / 2.0, z) * z ** (nu / 2.0) / (gamma(nu / 2.0) * 2.0 ** (nu / 2.0 - 1.0))
        per = np.where(z == 0, 1.0, per)
    return per.prod(axis=1)
