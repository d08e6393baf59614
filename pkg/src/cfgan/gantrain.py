"""Adversarial training of 1-D generators with CFD, WGAN and MMD critics.

Model names follow a small grammar: ``cfgan`` keeps the weighting scale
fixed, an ``o`` prefix optimizes it jointly with the critic, and a ``_gp``
suffix swaps weight clipping for a gradient penalty.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import cfd
from . import diffcore as dc
from .diffcore import Tensor
from .nets import CRITIC_SIZES, GENERATOR_SIZES, Mlp, clip_weights, penalty_at
from .optim import RMSProp
from .randdist import Rng, WeightingDistribution, frequencies_from_base, sample_base

log = logging.getLogger(__name__)

MODELS = ("cfgan", "ocfgan", "cfgan_gp", "ocfgan_gp", "wgan", "wgan_gp", "mmdgan", "mmdgan_gp")
DATASETS = ("d1", "d2")

METRIC_FIELDS = ("iter", "mae", "critic_loss", "gen_loss", "sigma_norm")


class TrainingAborted(RuntimeError):
    """Raised when a loss turns non-finite; ``snapshot`` holds the parameters."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


# ------------------------------------------------------------------ datasets

@dataclass(frozen=True)
class SyntheticDataset:
    """Pushforward of N(0, 1) through ``h``; ``g`` is the mirrored solution."""

    tag: str

    def __post_init__(self):
        if self.tag not in DATASETS:
            raise ValueError(f"unknown dataset {self.tag!r}; expected one of {DATASETS}")

    def h(self, z):
        if self.tag == "d1":
            return -10.0 + z / 5.0
        a, b, c = 0.2, 10.0, 100.0
        return a * z + b * np.tanh(c * a * z)

    def g(self, z):
        if self.tag == "d1":
            return -10.0 - z / 5.0
        a, b, c = 0.2, 10.0, 100.0
        return -a * z + b * np.tanh(-c * a * z)

    def sample(self, rng, n):
        return self.h(rng.normal((n, 1)))


def mae(generator, dataset, n_eval=5000, rng=None, z=None):
    """min(E|h(z) - gen(z)|, E|g(z) - gen(z)|) over n_eval latent draws."""
    if z is None:
        if n_eval < 1:
            raise ValueError(f"n_eval must be >= 1, got {n_eval}")
        z = (rng or Rng(0)).normal((n_eval, 1))
    out = generator(z) if callable(generator) and not isinstance(generator, Mlp) else predict(generator, z)
    return float(min(np.abs(dataset.h(z) - out).mean(), np.abs(dataset.g(z) - out).mean()))


def predict(mlp, x):
    """Forward pass in plain numpy, off the graph."""
    h = np.asarray(x, dtype=np.float64)
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w.data + b.data
        if i < last:
            h = np.where(h > 0, h, np.expm1(np.minimum(h, 0.0)))
    return h


# -------------------------------------------------------------------- config

@dataclass
class TrainConfig:
    model: str = "ocfgan_gp"
    dataset: str = "d1"
    family: str | None = None        # student_t on d1, gaussian on d2
    init_scale: float = 1.0
    k: int = 8
    n_critic: int = 5
    batch_size: int = 50
    lr: float = 1e-3
    iterations: int | None = None    # 10000 on d1, 20000 on d2
    clip: float | None = None        # 0.01 on d1, 0.1 on d2
    lambda_gp: float | None = None   # 10; 1 for wgan_gp on d1
    lambda_fs: float = 16.0
    n_eval: int = 5000
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}; expected one of {DATASETS}")

    @property
    def uses_gp(self):
        return self.model.endswith("_gp")

    @property
    def optimizes_scale(self):
        return self.model.startswith("ocf")

    @property
    def is_cf(self):
        return "cfgan" in self.model

    def resolved(self):
        """Copy with every dataset-dependent default filled in."""
        d1 = self.dataset == "d1"
        return replace(
            self,
            family=self.family or ("student_t" if d1 else "gaussian"),
            iterations=self.iterations if self.iterations is not None else (10000 if d1 else 20000),
            clip=self.clip if self.clip is not None else (0.01 if d1 else 0.1),
            lambda_gp=self.lambda_gp if self.lambda_gp is not None else (
                1.0 if (d1 and self.model == "wgan_gp") else 10.0),
        )

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainState:
    config: TrainConfig
    generator: Mlp
    critic: Mlp
    dist: WeightingDistribution
    opt_g: RMSProp
    opt_c: RMSProp
    rng: Rng
    dataset: SyntheticDataset
    iteration: int = 0
    critic_steps: int = 0
    metrics: list = field(default_factory=list)


def init_state(config):
    config = config.resolved()
    init_rng = Rng(config.seed, 0)
    generator = Mlp(GENERATOR_SIZES, init_rng)
    critic = Mlp(CRITIC_SIZES, init_rng)
    dist = WeightingDistribution.create(config.family, config.init_scale, m=CRITIC_SIZES[-1],
                                        trainable=config.optimizes_scale)
    critic_params = critic.parameters() + ([dist.log_scale] if config.optimizes_scale else [])
    return TrainState(
        config=config, generator=generator, critic=critic, dist=dist,
        opt_g=RMSProp(generator.parameters(), lr=config.lr),
        opt_c=RMSProp(critic_params, lr=config.lr),
        rng=Rng(config.seed, 1), dataset=SyntheticDataset(config.dataset),
    )


# -------------------------------------------------------------------- losses

MMD_RBF = cfd.KernelSpec.rbf_bandwidths((1, 2, 4, 8, 16))
MMD_RQ = cfd.KernelSpec.rq((0.2, 0.5, 1, 2, 5))


def _embed(critic, x, fake):
    n = x.shape[0]
    both = critic(dc.concat_rows(x, fake))
    return dc.slice_rows(both, 0, n), dc.slice_rows(both, n, both.shape[0])


def feasible_set_term(fx, ff):
    """min(E f(x) - E f(g(z)), 0)."""
    return dc.min_scalar(dc.sub(dc.mean(fx), dc.mean(ff)), 0.0)


def critic_objective(state, x, z, eps=None, u=None):
    """Negated critic objective (to be minimized) on fixed random inputs.

    ``eps`` are base frequency draws (k x m) for CF models, ``u`` the
    interpolation weights (n x 1) for gradient-penalty models.
    """
    cfg = state.config
    fake = Tensor(predict(state.generator, z))
    fx, ff = _embed(state.critic, Tensor(x), fake)
    if cfg.is_cf:
        T = frequencies_from_base(state.dist, eps)
        if cfg.optimizes_scale:
            obj = cfd.ecfd_normalized(fx, ff, state.dist, T)
        else:
            obj = cfd.ecfd(fx, ff, T)
    elif cfg.model.startswith("wgan"):
        obj = dc.sub(dc.mean(fx), dc.mean(ff))
    else:
        obj = cfd.mmd2(fx, ff, MMD_RQ if cfg.uses_gp else MMD_RBF, biased=False)
    if not cfg.uses_gp and cfg.lambda_fs and not cfg.model.startswith("wgan"):
        obj = dc.add(obj, dc.scale(feasible_set_term(fx, ff), cfg.lambda_fs))
    if cfg.uses_gp:
        x_hat = u * x + (1.0 - u) * fake.data
        obj = dc.sub(obj, dc.scale(penalty_at(state.critic, x_hat), cfg.lambda_gp))
    return dc.neg(obj)


def generator_objective(state, x, z, eps=None):
    """Generator loss on fixed inputs; the weighting scale is held fixed."""
    cfg = state.config
    fake = state.generator(Tensor(z))
    fx, ff = _embed(state.critic, Tensor(x), fake)
    if cfg.is_cf:
        return cfd.ecfd(fx, ff, Tensor(state.dist.scale * eps))
    if cfg.model.startswith("wgan"):
        return dc.neg(dc.mean(ff))
    return cfd.mmd2(fx, ff, MMD_RQ if cfg.uses_gp else MMD_RBF, biased=False)


def _draw(state, with_eps=True, with_u=False):
    cfg, rng = state.config, state.rng
    x = state.dataset.sample(rng, cfg.batch_size)
    z = rng.normal((cfg.batch_size, 1))
    eps = sample_base(rng, state.dist.family, cfg.k, state.dist.m, state.dist.dof) if with_eps else None
    u = rng.uniform((cfg.batch_size, 1)) if with_u else None
    return x, z, eps, u


def _check(loss, state, where):
    value = loss.item()
    if not np.isfinite(value):
        snapshot = {"generator": state.generator.flat(), "critic": state.critic.flat(),
                    "log_scale": state.dist.log_scale.data.copy()}
        raise TrainingAborted(f"non-finite {where} loss at generator iteration {state.iteration}",
                              snapshot)
    return value


def critic_step(state, x=None, z=None, eps=None, u=None):
    """One critic (and, for O-models, scale) ascent step; returns the loss."""
    cfg = state.config
    if x is None:
        x, z, eps, u = _draw(state, cfg.is_cf, cfg.uses_gp)
    loss = critic_objective(state, x, z, eps, u)
    value = _check(loss, state, "critic")
    state.opt_c.zero_grad()
    dc.backward(loss)
    state.opt_c.step()
    if not cfg.uses_gp:
        clip_weights(state.critic, cfg.clip)
    state.critic_steps += 1
    return value


def generator_step(state, x=None, z=None, eps=None):
    cfg = state.config
    if x is None:
        x, z, eps, _ = _draw(state, cfg.is_cf)
    loss = generator_objective(state, x, z, eps)
    value = _check(loss, state, "generator")
    state.opt_g.zero_grad()
    dc.backward(loss)
    state.opt_g.step()
    for p in state.critic.parameters():
        p.grad = None
    state.dist.log_scale.grad = None
    state.iteration += 1
    return value


def train(config, state=None, progress=None):
    """Alternate n_critic critic steps with one generator step.

    MAE is logged at iteration 0 and every ``log_every`` generator steps.
    Returns the final state; ``state.metrics`` holds the log rows.
    """
    state = state or init_state(config)
    cfg = state.config
    z_eval = Rng(cfg.seed, 2).normal((cfg.n_eval, 1))
    c_loss = g_loss = float("nan")

    def record():
        row = {"iter": state.iteration, "mae": mae(state.generator, state.dataset, z=z_eval),
               "critic_loss": c_loss, "gen_loss": g_loss,
               "sigma_norm": float(np.linalg.norm(state.dist.scale))}
        state.metrics.append(row)
        if progress:
            progress(row)

    if state.iteration == 0:
        record()
    while state.iteration < cfg.iterations:
        for _ in range(cfg.n_critic):
            c_loss = critic_step(state)
        g_loss = generator_step(state)
        if state.iteration % cfg.log_every == 0 or state.iteration == cfg.iterations:
            record()
    return state
