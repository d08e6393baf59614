"""Empirical characteristic functions and the distances built on them.

All estimators take arrays or diffcore tensors.  When an input carries a
gradient the result is a 1x1 tensor on the graph; callers wanting a float
use ``.item()``.  Complex values are kept as explicit (re, im) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ContractError, Tensor
from .randdist import FrequencyBatch, sample_base

KERNEL_FAMILIES = ("rbf", "rq", "poly3")


@dataclass
class EcfValue:
    re: Tensor
    im: Tensor

    def modulus_sq(self):
        return self.re.data ** 2 + self.im.data ** 2


@dataclass(frozen=True)
class KernelSpec:
    """A kernel or a sum of kernels of one family.

    rbf:   params are frequency scales s (scalar or per-dimension vector);
           k(x, y) = exp(-1/2 * sum_d s_d^2 (x_d - y_d)^2).  This is the
           Fourier dual of a N(0, diag(s^2)) weighting distribution.
    rq:    params are alpha values; k(x, y) = (1 + |x - y|^2 / (2 alpha))^-alpha.
    poly3: no params; k(x, y) = (<x, y> / m + 1)^3.
    """

    family: str
    params: tuple = ()

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ContractError(f"unknown kernel family {self.family!r}; expected one of {KERNEL_FAMILIES}")
        if self.family == "poly3":
            return
        if len(self.params) == 0:
            raise ContractError(f"{self.family} kernel needs at least one parameter")
        for p in self.params:
            if np.any(np.asarray(p) <= 0):
                raise ContractError(f"{self.family} kernel parameters must be positive, got {p}")

    @classmethod
    def rbf(cls, *scales):
        return cls("rbf", tuple(np.asarray(s, dtype=np.float64) if np.ndim(s) else float(s)
                                for s in scales))

    @classmethod
    def rbf_bandwidths(cls, bandwidths=(1, 2, 4, 8, 16)):
        """Mixture of exp(-|x - y|^2 / (2 b^2)) over bandwidths b."""
        return cls.rbf(*[1.0 / b for b in bandwidths])

    @classmethod
    def rq(cls, alphas=(0.2, 0.5, 1, 2, 5)):
        return cls("rq", tuple(float(a) for a in alphas))

    @classmethod
    def poly3(cls):
        return cls("poly3")


def _check_dims(X, T):
    if X.shape[1] != T.shape[1]:
        raise ContractError(f"sample dimension {X.shape} does not match frequencies {T.shape}")


def _freq(T):
    return T.t if isinstance(T, FrequencyBatch) else dc.as_tensor(T)


def ecf(X, T, weights=None):
    """Empirical CF of the rows of ``X`` at each frequency row of ``T``."""
    X, t = dc.as_tensor(X), _freq(T)
    _check_dims(X, t)
    if X.shape[0] < 1:
        raise ContractError("ecf needs at least one sample")
    proj = dc.matmul(X, dc.transpose(t))
    c, s = dc.cos(proj), dc.sin(proj)
    if weights is not None:
        c, s = dc.mul(c, weights), dc.mul(s, weights)
    return EcfValue(dc.mean(c, axis=0), dc.mean(s, axis=0))


def _distance(ex, ey):
    dre = dc.sub(ex.re, ey.re)
    dim = dc.sub(ex.im, ey.im)
    return dc.mean(dc.add(dc.square(dre), dc.square(dim)))


def ecfd(X, Y, T):
    """Mean over frequencies of |ecf_X(t) - ecf_Y(t)|^2; lies in [0, 4]."""
    X, Y = dc.as_tensor(X), dc.as_tensor(Y)
    if X.shape[1] != Y.shape[1]:
        raise ContractError(f"sample dimensions differ: {X.shape} vs {Y.shape}")
    return _distance(ecf(X, T), ecf(Y, T))


def ecfd_normalized(X, Y, dist, T):
    """ecfd divided by |sigma|_2 of the weighting distribution."""
    return dc.div(ecfd(X, Y, T), dist.sigma_norm())


def smoothing_weights(X, smoothing_scale):
    X = dc.as_tensor(X)
    sq = dc.sum(dc.square(X), axis=1)
    return dc.exp(dc.scale(sq, -0.5 / smoothing_scale ** 2))


def ecfd_smoothed(X, Y, T, smoothing_scale):
    """ecfd with each sample's phase term damped by exp(-|x|^2 / (2 s^2)).

    The damping is the sample-space form of convolving the CF with a
    Gaussian; as ``smoothing_scale`` grows this recovers :func:`ecfd`.
    """
    if not smoothing_scale > 0:
        raise ContractError(f"smoothing_scale must be positive, got {smoothing_scale}")
    X, Y = dc.as_tensor(X), dc.as_tensor(Y)
    if X.shape[1] != Y.shape[1]:
        raise ContractError(f"sample dimensions differ: {X.shape} vs {Y.shape}")
    ex = ecf(X, T, smoothing_weights(X, smoothing_scale))
    ey = ecf(Y, T, smoothing_weights(Y, smoothing_scale))
    return _distance(ex, ey)


# ----------------------------------------------------------------------- MMD

def _sqdist(A, B):
    a2 = dc.sum(dc.square(A), axis=1)
    b2 = dc.transpose(dc.sum(dc.square(B), axis=1))
    return dc.sub(dc.add(a2, b2), dc.scale(dc.matmul(A, dc.transpose(B)), 2.0))


def gram(A, B, kernel):
    """Kernel matrix k(a_i, b_j) on the graph, summed over the mixture."""
    A, B = dc.as_tensor(A), dc.as_tensor(B)
    if kernel.family == "poly3":
        m = A.shape[1]
        return dc.pow_scalar(dc.add(dc.scale(dc.matmul(A, dc.transpose(B)), 1.0 / m), 1.0), 3)
    total = None
    if kernel.family == "rbf":
        for s in kernel.params:
            s_row = np.broadcast_to(np.asarray(s, dtype=np.float64), (1, A.shape[1]))
            d2 = _sqdist(dc.mul(A, s_row), dc.mul(B, s_row))
            term = dc.exp(dc.scale(d2, -0.5))
            total = term if total is None else dc.add(total, term)
    else:
        d2 = _sqdist(A, B)
        for a in kernel.params:
            term = dc.pow_scalar(dc.add(dc.scale(d2, 0.5 / a), 1.0), -a)
            total = term if total is None else dc.add(total, term)
    return total


def _gram_np(A, B, kernel):
    """Plain-numpy kernel matrix, same formulas as :func:`gram`."""
    if kernel.family == "poly3":
        return (A @ B.T / A.shape[1] + 1.0) ** 3
    out = np.zeros((A.shape[0], B.shape[0]))
    if kernel.family == "rbf":
        for s in kernel.params:
            As, Bs = A * s, B * s
            d2 = (As * As).sum(1)[:, None] + (Bs * Bs).sum(1)[None, :] - 2.0 * As @ Bs.T
            out += np.exp(-0.5 * d2)
    else:
        d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
        for a in kernel.params:
            out += (1.0 + d2 / (2.0 * a)) ** (-a)
    return out


def _diag_np(A, kernel):
    if kernel.family == "poly3":
        return ((A * A).sum(1) / A.shape[1] + 1.0) ** 3
    return np.full(A.shape[0], float(len(kernel.params)))


def _block_sum(A, B, kernel, block, symmetric=False):
    """Sum of all kernel entries between A and B, one block of rows at a time.

    RBF blocks reuse precomputed scaled rows and norms and work in place,
    since this loop dominates large-sample MMD.  ``symmetric`` (A is B)
    visits only the upper block triangle.
    """
    if kernel.family != "rbf":
        total = 0.0
        for i in range(0, A.shape[0], block):
            for j in range(i if symmetric else 0, B.shape[0], block):
                part = _gram_np(A[i:i + block], B[j:j + block], kernel).sum()
                total += part if not symmetric or i == j else 2.0 * part
        return total
    total = 0.0
    for s in kernel.params:
        As, Bs = A * s, (A * s if symmetric else B * s)
        na, nb = 0.5 * (As * As).sum(1), 0.5 * (Bs * Bs).sum(1)
        for i in range(0, A.shape[0], block):
            Ai, nai = As[i:i + block], na[i:i + block, None]
            for j in range(i if symmetric else 0, B.shape[0], block):
                # exp(-|a-b|^2 / 2) = exp(a.b - |a|^2/2 - |b|^2/2)
                G = Ai @ Bs[j:j + block].T
                G -= nai
                G -= nb[None, j:j + block]
                np.minimum(G, 0.0, out=G)
                part = np.exp(G, out=G).sum()
                total += part if not symmetric or i == j else 2.0 * part
    return total


def _mmd2_np(X, Y, kernel, biased, block=2048):
    n, n2 = X.shape[0], Y.shape[0]
    kxx = _block_sum(X, X, kernel, block, symmetric=True)
    kyy = _block_sum(Y, Y, kernel, block, symmetric=True)
    kxy = _block_sum(X, Y, kernel, block)
    if biased:
        return kxx / n**2 + kyy / n2**2 - 2.0 * kxy / (n * n2)
    kxx -= _diag_np(X, kernel).sum()
    kyy -= _diag_np(Y, kernel).sum()
    return kxx / (n * (n - 1)) + kyy / (n2 * (n2 - 1)) - 2.0 * kxy / (n * n2)


def mmd2(X, Y, kernel, biased=True):
    """Squared MMD, V-statistic (``biased``) or U-statistic.

    Without gradients the kernel sums run blockwise in numpy, so memory
    stays bounded for large samples.  Returns a float in that case and a
    1x1 tensor otherwise.
    """
    need_grad = any(isinstance(a, Tensor) and a.requires_grad for a in (X, Y))
    Xd = X.data if isinstance(X, Tensor) else np.atleast_2d(np.asarray(X, dtype=np.float64))
    Yd = Y.data if isinstance(Y, Tensor) else np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if Xd.shape[1] != Yd.shape[1]:
        raise ContractError(f"sample dimensions differ: {Xd.shape} vs {Yd.shape}")
    n, n2 = Xd.shape[0], Yd.shape[0]
    if biased and min(n, n2) < 1:
        raise ContractError("mmd2 needs at least one sample per set")
    if not biased and min(n, n2) < 2:
        raise ContractError(f"unbiased mmd2 needs at least two samples per set, got {n} and {n2}")
    if not need_grad:
        return float(_mmd2_np(Xd, Yd, kernel, biased))

    X, Y = dc.as_tensor(X), dc.as_tensor(Y)
    kxx = dc.sum(gram(X, X, kernel))
    kyy = dc.sum(gram(Y, Y, kernel))
    kxy = dc.sum(gram(X, Y, kernel))
    if biased:
        return dc.sub(dc.add(dc.scale(kxx, 1.0 / n**2), dc.scale(kyy, 1.0 / n2**2)),
                      dc.scale(kxy, 2.0 / (n * n2)))
    kxx = dc.sub(kxx, _diag_sum(X, kernel))
    kyy = dc.sub(kyy, _diag_sum(Y, kernel))
    return dc.sub(dc.add(dc.scale(kxx, 1.0 / (n * (n - 1))), dc.scale(kyy, 1.0 / (n2 * (n2 - 1)))),
                  dc.scale(kxy, 2.0 / (n * n2)))


def _diag_sum(A, kernel):
    if kernel.family == "poly3":
        sq = dc.scale(dc.sum(dc.square(A), axis=1), 1.0 / A.shape[1])
        return dc.sum(dc.pow_scalar(dc.add(sq, 1.0), 3))
    return Tensor(float(len(kernel.params) * A.shape[0]))


def kid(features_real, features_fake):
    """Unbiased MMD^2 with the cubic polynomial kernel on feature vectors."""
    return mmd2(features_real, features_fake, KernelSpec.poly3(), biased=False)


# ---------------------------------------------------------------- Monte Carlo

def ecf_sq_diff(X, Y, t):
    """Per-frequency |ecf_X - ecf_Y|^2 in plain numpy (no graph)."""
    px, py = X @ t.T, Y @ t.T
    dre = np.cos(px).mean(0) - np.cos(py).mean(0)
    dim = np.sin(px).mean(0) - np.sin(py).mean(0)
    return dre * dre + dim * dim


def cfd_mc(X, Y, dist, rng, k, reps, return_stderr=False):
    """Monte-Carlo CFD: ecfd averaged over ``reps`` fresh batches of k frequencies.

    With ``return_stderr`` also returns the standard error of the mean over
    the k * reps per-frequency terms.
    """
    if reps < 1:
        raise ContractError(f"reps must be >= 1, got {reps}")
    X = np.atleast_2d(np.asarray(X.data if isinstance(X, Tensor) else X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y.data if isinstance(Y, Tensor) else Y, dtype=np.float64))
    if X.shape[1] != dist.m or Y.shape[1] != dist.m:
        raise ContractError(f"samples {X.shape}, {Y.shape} do not match dimension {dist.m}")
    sigma = dist.scale
    terms = np.concatenate([
        ecf_sq_diff(X, Y, sigma * sample_base(rng, dist.family, k, dist.m, dist.dof))
        for _ in range(reps)
    ])
    est = float(terms.mean())
    if not return_stderr:
        return est
    se = float(terms.std(ddof=1) / np.sqrt(terms.size)) if terms.size > 1 else float("inf")
    return est, se
