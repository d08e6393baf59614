"""Permutation two-sample tests on ECFD statistics, with optimized scales.

A trial draws two Gaussian samples that differ (or not) in the mean of the
first coordinate, builds a statistic, and calibrates it by permutation.
Optimized ("o"-prefixed) statistics spend the first half of each sample on
fitting the weighting scale and test on the second half, so the test never
sees the data it was tuned on.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import cfd
from . import diffcore as dc
from .diffcore import ContractError
from .optim import Adam
from .randdist import Rng, WeightingDistribution, frequencies_from_base, sample_base

log = logging.getLogger(__name__)

STATISTICS = ("ecfd", "ecfd_smooth", "oecfd", "oecfd_smooth", "mmd")


class NonFiniteError(RuntimeError):
    pass


@dataclass
class TestConfig:
    statistic: str = "ecfd"
    k: int = 3
    alpha: float = 0.05
    permutations: int = 200
    steps: int = 100
    batch_size: int = 1000
    lr: float = 0.05
    family: str = "gaussian"
    init_scale: float = 1.0
    smoothing_scale: float | None = None  # None -> sqrt(dim)
    seed: int = 0

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.statistic not in STATISTICS:
            raise ContractError(f"unknown statistic {self.statistic!r}; expected one of {STATISTICS}")
        if not 0 < self.alpha < 1:
            raise ContractError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.permutations < 1.0 / self.alpha - 1:
            raise ContractError(
                f"{self.permutations} permutations cannot reach alpha={self.alpha}; "
                f"need at least {int(np.ceil(1.0 / self.alpha - 1))}")
        if self.k < 1:
            raise ContractError(f"k must be >= 1, got {self.k}")

    @property
    def optimized(self):
        return self.statistic.startswith("o")

    @property
    def smooth(self):
        return self.statistic.endswith("smooth")


@dataclass
class TwoSampleResult:
    statistic: float
    threshold: float
    p_value: float
    reject: bool
    sigma: np.ndarray | None = None


# ---------------------------------------------------------------- statistics

class EcfdStatistic:
    """ECFD at fixed frequencies, optionally with sample-space smoothing."""

    def __init__(self, t, smoothing_scale=None):
        self.t = np.asarray(t, dtype=np.float64)
        self.smoothing_scale = smoothing_scale

    def features(self, Z):
        proj = Z @ self.t.T
        F = np.concatenate([np.cos(proj), np.sin(proj)], axis=1)
        if self.smoothing_scale is not None:
            F *= np.exp(-0.5 * (Z * Z).sum(1, keepdims=True) / self.smoothing_scale ** 2)
        return F

    def __call__(self, X, Y):
        if self.smoothing_scale is None:
            return cfd.ecfd(X, Y, self.t).item()
        return cfd.ecfd_smoothed(X, Y, self.t, self.smoothing_scale).item()

    def permuted(self, Z, n, perms):
        F = self.features(Z)
        diff = _signed_weights(perms, n, Z.shape[0]) @ F
        return (diff * diff).sum(1) / self.t.shape[0]


class MmdStatistic:
    """Biased MMD^2 with a single Gaussian kernel."""

    def __init__(self, kernel):
        self.kernel = kernel

    def __call__(self, X, Y):
        return cfd.mmd2(X, Y, self.kernel, biased=True)

    def permuted(self, Z, n, perms):
        V = _signed_weights(perms, n, Z.shape[0])
        out = np.zeros(len(perms))
        for i in range(0, Z.shape[0], 2048):
            K = cfd._gram_np(Z[i:i + 2048], Z, self.kernel)
            out += np.einsum("pi,pi->p", V @ K.T, V[:, i:i + 2048])
        return out


def _signed_weights(perms, n, total):
    """Row p holds +1/n on the first-sample slots of permutation p, -1/n' elsewhere."""
    V = np.full((len(perms), total), -1.0 / (total - n))
    rows = np.arange(len(perms))[:, None]
    V[rows, np.asarray(perms)[:, :n]] = 1.0 / n
    return V


def median_heuristic_kernel(Z, rng, max_points=1000):
    idx = rng.choice(Z.shape[0], min(max_points, Z.shape[0]))
    S = Z[idx]
    d2 = (S * S).sum(1)[:, None] + (S * S).sum(1)[None, :] - 2 * S @ S.T
    med = np.sqrt(np.median(d2[np.triu_indices_from(d2, k=1)]))
    return cfd.KernelSpec.rbf(1.0 / med if med > 0 else 1.0)


# ----------------------------------------------------------------- operations

def permutation_test(X, Y, statistic_fn, P, alpha, rng):
    """Permutation test; p = (1 + #{permuted >= observed}) / (P + 1)."""
    X, Y = np.atleast_2d(X), np.atleast_2d(Y)
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ContractError("both samples must be non-empty")
    if X.shape[1] != Y.shape[1]:
        raise ContractError(f"sample dimensions differ: {X.shape} vs {Y.shape}")
    n = X.shape[0]
    Z = np.concatenate([X, Y])
    observed = float(statistic_fn(X, Y))
    perms = np.stack([rng.permutation(Z.shape[0]) for _ in range(P)])
    if hasattr(statistic_fn, "permuted"):
        null = np.asarray(statistic_fn.permuted(Z, n, perms))
    else:
        null = np.array([statistic_fn(Z[p[:n]], Z[p[n:]]) for p in perms])
    p_value = (1 + int(np.sum(null >= observed))) / (P + 1)
    threshold = float(np.quantile(null, 1 - alpha))
    return TwoSampleResult(observed, threshold, p_value, p_value <= alpha)


def optimize_sigma(X_train, Y_train, dist, config, rng):
    """Adam ascent on the sigma-normalized ECFD; returns a new distribution."""
    dist = WeightingDistribution(dist.family, dc.Tensor(dist.log_scale.data.copy(), requires_grad=True),
                                 dist.dof)
    opt = Adam([dist.log_scale], lr=config.lr)
    nx, ny = X_train.shape[0], Y_train.shape[0]
    bx, by = min(config.batch_size, nx), min(config.batch_size, ny)
    smoothing = _smoothing(config, X_train.shape[1])
    for it in range(config.steps):
        xb = X_train[rng.choice(nx, bx)] if bx < nx else X_train
        yb = Y_train[rng.choice(ny, by)] if by < ny else Y_train
        T = frequencies_from_base(dist, sample_base(rng, dist.family, config.k, dist.m, dist.dof))
        if smoothing is None:
            value = cfd.ecfd(xb, yb, T)
        else:
            value = cfd.ecfd_smoothed(xb, yb, T, smoothing)
        loss = dc.div(value, dist.sigma_norm())
        if not np.isfinite(loss.item()):
            raise NonFiniteError(f"sigma optimization produced a non-finite loss at iteration {it}")
        opt.zero_grad()
        dc.backward(loss)
        opt.step(maximize=True)
    return dist.frozen()


def _smoothing(config, dim):
    if not config.smooth:
        return None
    return config.smoothing_scale if config.smoothing_scale is not None else float(np.sqrt(dim))


def run_test(X, Y, config, rng):
    """One calibrated test of ``config.statistic`` on samples X, Y."""
    dim = X.shape[1]
    sigma = None
    if config.statistic == "mmd":
        stat = MmdStatistic(median_heuristic_kernel(np.concatenate([X, Y]), rng))
    else:
        dist = WeightingDistribution.create(config.family, config.init_scale, m=dim)
        if config.optimized:
            hx, hy = X.shape[0] // 2, Y.shape[0] // 2
            dist = optimize_sigma(X[:hx], Y[:hy], dist, config, rng)
            X, Y = X[hx:], Y[hy:]
        sigma = dist.scale
        t = sigma * sample_base(rng, dist.family, config.k, dim, dist.dof)
        stat = EcfdStatistic(t, _smoothing(config, dim))
    result = permutation_test(X, Y, stat, config.permutations, config.alpha, rng)
    result.sigma = sigma
    return result


def gaussian_pair(rng, n, dim, mean_gap):
    """Two n x dim unit-covariance Gaussian samples, means differing by
    ``mean_gap`` in the first coordinate only."""
    X = rng.normal((n, dim))
    Y = rng.normal((n, dim))
    Y[:, 0] += mean_gap
    return X, Y


def _trial(args):
    dim, trial, n, mean_gap, configs = args
    base = configs[0]
    X, Y = gaussian_pair(Rng(base.seed, dim, trial, 0), n, dim, mean_gap)
    rows = []
    for i, cfg in enumerate(configs):
        res = run_test(X, Y, cfg, Rng(cfg.seed, dim, trial, 1 + STATISTICS.index(cfg.statistic)))
        rows.append({
            "dim": dim, "statistic": cfg.statistic, "trial": trial, "reject": int(res.reject),
            "stat_value": res.statistic, "p_value": res.p_value,
            "sigma_norm": float(np.linalg.norm(res.sigma)) if res.sigma is not None else float("nan"),
        })
    return rows


def power_experiment(dims, n, trials, config, statistics=STATISTICS, mean_gap=1.0, jobs=1):
    """Per-trial rejection records for every (dim, statistic, trial).

    All statistics in one trial see the same pair of samples.  With
    ``mean_gap=0`` the rejection rate estimates the test size.
    """
    configs = [replace(config, statistic=s) for s in statistics]
    tasks = [(d, tr, n, mean_gap, configs) for d in dims for tr in range(trials)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            chunks = list(pool.map(_trial, tasks))
    else:
        chunks = [_trial(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r["dim"], STATISTICS.index(r["statistic"]), r["trial"]))
    return rows


def summarize(rows, value="power"):
    """Collapse per-trial rows to (dim, statistic) rejection or acceptance rates."""
    groups = {}
    for r in rows:
        groups.setdefault((r["dim"], r["statistic"]), []).append(r["reject"])
    out = []
    for (dim, stat), rej in groups.items():
        rate = float(np.mean(rej))
        if value == "acceptance":
            rate = 1.0 - rate
        out.append({"dim": dim, "statistic": stat, value: rate,
                    "stderr": float(np.sqrt(rate * (1 - rate) / len(rej)))})
    return out


def config_dict(config):
    return asdict(config)
