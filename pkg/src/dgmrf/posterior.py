"""Exact posterior of a linear DGMRF given masked Gaussian observations.

The posterior precision ``Qt = G^T G + sigma^-2 I_m`` is applied matrix-free
through the model's convolutions.  With a linear trend the latent vector is
extended by the coefficients ``beta`` (prior precision ``v^2 I``) and the
observation operator becomes ``[I F]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .conv import gram_diagonal
from .errors import ConfigError, DimensionError, UnsupportedModelError
from .linalg import CGResult, cg, default_max_iter
from .model import TREND_PRECISION, model_bias


@dataclass(frozen=True, eq=False)
class PosteriorOperator:
    """Posterior precision for ``model`` observed through ``mask`` with noise ``sigma``."""

    model: object
    mask: np.ndarray
    sigma: float
    channels: int = 1
    F: Optional[np.ndarray] = None
    v: float = TREND_PRECISION

    def __post_init__(self):
        if not self.model.is_linear:
            raise UnsupportedModelError("the exact posterior needs a linear model")
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    @classmethod
    def from_data(cls, model, data, sigma=None):
        sigma = model.sigma if sigma is None else sigma
        return cls(model, data.mask, sigma, data.shape[2], data.F)

    @property
    def shape(self):
        return self.mask.shape + (self.channels,)

    @property
    def n_latent(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_trend(self) -> int:
        return 0 if self.F is None else self.F.shape[1]

    @property
    def size(self) -> int:
        return self.n_latent + self.n_trend

    def observe(self, u):
        """``I_m [I F] u`` as grids of shape ``(..., H, W, C)``."""
        n = self.n_latent
        x = u[..., :n].reshape(u.shape[:-1] + self.shape)
        if self.F is not None:
            x = x + (u[..., n:] @ self.F.T).reshape(x.shape)
        return x * self.mask[:, :, None]

    def observe_adjoint(self, r):
        """``[I F]^T I_m r`` for grids ``r``; returns flat vectors of length ``size``."""
        r = r * self.mask[:, :, None]
        flat = r.reshape(r.shape[:-3] + (self.n_latent,))
        if self.F is None:
            return flat
        return np.concatenate([flat, flat @ self.F], axis=-1)

    def prior_matvec(self, u):
        """``Gbar^T Gbar u``."""
        n = self.n_latent
        x = u[..., :n].reshape(u.shape[:-1] + self.shape)
        out = self.model.apply_linear_adjoint(self.model.apply_linear(x)).reshape(u.shape[:-1] + (n,))
        if self.F is not None:
            out = np.concatenate([out, self.v ** 2 * u[..., n:]], axis=-1)
        return out

    def prior_adjoint(self, w):
        """``Gbar^T w`` for ``w`` of length ``size``."""
        n = self.n_latent
        x = w[..., :n].reshape(w.shape[:-1] + self.shape)
        out = self.model.apply_linear_adjoint(x).reshape(w.shape[:-1] + (n,))
        if self.F is not None:
            out = np.concatenate([out, self.v * w[..., n:]], axis=-1)
        return out

    def __call__(self, u):
        return qtilde_matvec(self, u)

    def diagonal(self):
        """``diag(Qt)`` via impulse probing of the layer stack."""
        d = gram_diagonal(self.model, self.shape) + np.repeat(self.mask.reshape(-1), self.channels) / self.sigma ** 2
        if self.F is None:
            return d
        m = self.mask.reshape(-1)
        d_beta = self.v ** 2 + np.sum(self.F[m] ** 2, axis=0) / self.sigma ** 2
        return np.concatenate([d, d_beta])


def qtilde_matvec(op, u):
    """``Qt u`` for vectors of length ``op.size`` (leading batch axes allowed)."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != op.size:
        raise DimensionError(f"vector length {u.shape[-1]} does not match operator size {op.size}")
    return op.prior_matvec(u) + op.observe_adjoint(op.observe(u)) / op.sigma ** 2


def cg_solve(op, c, tol=1e-7, max_iter=None, inv_diag=None) -> CGResult:
    """Conjugate gradients on ``op`` (a ``PosteriorOperator`` or any SPD matvec).

    ``inv_diag`` optionally supplies ``1 / diag(Qt)`` for Jacobi preconditioning.
    """
    n = np.shape(c)[-1]
    return cg(op, c, tol=tol, max_iter=default_max_iter(n) if max_iter is None else max_iter,
              inv_diag=inv_diag)


def mean_rhs(op, data):
    """Right-hand side ``-Gbar^T [b; 0] + sigma^-2 [I F]^T y`` of the mean equation."""
    b = model_bias(op.model, op.shape).reshape(-1)
    w = np.concatenate([b, np.zeros(op.n_trend)])
    return -op.prior_adjoint(w) + op.observe_adjoint(np.asarray(data.y)) / op.sigma ** 2


def posterior_mean(op, data, tol=1e-7, max_iter=None, inv_diag=None):
    """Solve ``Qt mu = c``; returns the vector ``mu`` (latent field, then beta)."""
    return cg_solve(op, mean_rhs(op, data), tol, max_iter, inv_diag).x


def perturbed_rhs(op, data, u1, u2):
    """``Gbar^T (u1 - [b; 0]) + sigma^-2 [I F]^T (y + sigma I_m u2)``."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if u1.shape[-1] != op.size or u2.shape[-1] != op.n_latent:
        raise DimensionError("u1 must have length size and u2 length n_latent")
    b = np.concatenate([model_bias(op.model, op.shape).reshape(-1), np.zeros(op.n_trend)])
    noisy = np.asarray(data.y) + op.sigma * u2.reshape(u2.shape[:-1] + op.shape)
    return op.prior_adjoint(u1 - b) + op.observe_adjoint(noisy) / op.sigma ** 2


def posterior_sample(op, data, u1, u2, tol=1e-7, max_iter=None, inv_diag=None):
    """Exact posterior draws by perturbing the mean equation.

    ``u1`` (length ``size``) and ``u2`` (length ``n_latent``) are standard
    normal; both may carry a leading batch axis for many draws at once.
    """
    return cg_solve(op, perturbed_rhs(op, data, u1, u2), tol, max_iter, inv_diag).x


def draw_samples(op, data, n_samples, rng, tol=1e-7, max_iter=None, batch=100,
                 inv_diag=None):
    out = []
    for start in range(0, n_samples, batch):
        k = min(batch, n_samples - start)
        u1 = rng.standard_normal((k, op.size))
        u2 = rng.standard_normal((k, op.n_latent))
        out.append(np.atleast_2d(posterior_sample(op, data, u1, u2, tol, max_iter, inv_diag)))
    return np.concatenate(out, axis=0)


def rbmc_variance(op, samples, c, diag=None, return_se=False):
    """Rao-Blackwellized marginal variances from posterior samples.

    ``Var(x_i) = 1/Qt_ii + Var_s(m_{s,i})`` where
    ``m_s = x_s - (Qt x_s - c) / diag(Qt)`` is the conditional mean of each
    coordinate given the rest and ``c`` is the mean-equation right-hand side.
    With ``return_se`` also returns a Monte Carlo standard error per entry.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] < 2:
        raise ValueError("rbmc_variance needs at least two samples")
    d = op.diagonal() if diag is None else np.asarray(diag, dtype=float)
    cond = samples - (qtilde_matvec(op, samples) - c) / d
    n_s = samples.shape[0]
    dev = cond - cond.mean(axis=0)
    spread = np.sum(dev ** 2, axis=0) / (n_s - 1)
    var = 1.0 / d + spread
    if not return_se:
        return var
    return var, np.std(dev ** 2, axis=0, ddof=1) / np.sqrt(n_s)


def mc_variance(samples):
    """Unbiased per-coordinate sample variance."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValueError("mc_variance needs at least two samples")
    return np.var(samples, axis=0, ddof=1)


@dataclass
class InferConfig:
    cg_tol: float = 1e-7
    cg_max_iter: Optional[int] = None
    variance: str = "auto"  # "auto", "rbmc" or "mc"
    n_samples: int = 100
    seed: int = 0
    preconditioner: str = "none"  # "none" or "jacobi"


@dataclass
class PosteriorSummary:
    """Per-pixel predictive summaries on the model grid.

    ``predictive_sd**2 == marginal_sd**2 + sigma**2`` elementwise.
    """

    mean: np.ndarray
    marginal_sd: np.ndarray
    predictive_sd: np.ndarray
    beta_mean: Optional[np.ndarray] = None
    beta_sd: Optional[np.ndarray] = None
    tags: dict = field(default_factory=dict)


def summarize(model, q, data, config=None):
    """Predictive means and standard deviations.

    Linear models use CG for the mean and simple RBMC (or plain Monte Carlo
    when a trend is present) for the variances; non-linear models fall back
    to the variational mean and variances.
    """
    config = config or InferConfig()
    shape = data.shape
    sigma = model.sigma
    trend = data.F is not None
    tags = {"sigma": repr(float(sigma))}

    if not model.is_linear:
        mean = np.array(q.nu)
        var = np.exp(2 * np.asarray(q.log_s))
        beta_mean = beta_sd = None
        if trend:
            beta_mean = np.array(q.nu_beta)
            beta_sd = np.exp(q.log_s_beta)
            mean = mean + data.F @ beta_mean
            var = var + (data.F ** 2) @ beta_sd ** 2
        tags.update(method="variational", variance="variational")
        sd = np.sqrt(var).reshape(shape)
        return PosteriorSummary(mean.reshape(shape), sd, np.sqrt(sd ** 2 + sigma ** 2),
                                beta_mean, beta_sd, tags)

    op = PosteriorOperator.from_data(model, data)
    n = op.n_latent
    c = mean_rhs(op, data)
    if config.preconditioner not in ("none", "jacobi"):
        raise ConfigError(f"unknown preconditioner {config.preconditioner!r}")
    method = config.variance
    if method == "auto":
        method = "mc" if trend else "rbmc"
    if method not in ("rbmc", "mc"):
        raise ConfigError(f"unknown variance method {config.variance!r}")
    if trend and method != "mc":
        raise ConfigError("the trend model reports Monte Carlo variances")
    diag = op.diagonal() if config.preconditioner == "jacobi" or method == "rbmc" else None
    inv_diag = 1.0 / diag if config.preconditioner == "jacobi" else None
    res = cg_solve(op, c, config.cg_tol, config.cg_max_iter, inv_diag)
    mu = res.x
    rng = np.random.default_rng(config.seed)
    samples = draw_samples(op, data, config.n_samples, rng, config.cg_tol, config.cg_max_iter,
                           inv_diag=inv_diag)
    tags.update(method="cg", cg_tol=repr(config.cg_tol), cg_iterations=str(res.iterations),
                preconditioner=config.preconditioner,
                variance=method, n_samples=str(config.n_samples))
    beta_mean = beta_sd = None
    if trend:
        beta_mean = mu[n:]
        pred_samples = samples[:, :n] + samples[:, n:] @ data.F.T
        mean = mu[:n] + data.F @ beta_mean
        var = mc_variance(pred_samples)
        beta_sd = np.sqrt(mc_variance(samples[:, n:]))
    else:
        mean = mu
        var = rbmc_variance(op, samples, c, diag) if method == "rbmc" else mc_variance(samples)
    sd = np.sqrt(var).reshape(shape)
    return PosteriorSummary(mean.reshape(shape), sd, np.sqrt(sd ** 2 + sigma ** 2),
                            beta_mean, beta_sd, tags)
