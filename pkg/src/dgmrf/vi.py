"""Mean-field variational posterior, ELBO estimator, Adam and the training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, ParseError, TrainingDivergedError
from .grad import _elbo_and_grad
from .model import TREND_PRECISION, activation_logdet, flatten_model, forward_g, \
    model_from_lines, model_logdet, model_to_text, unflatten_model


@dataclass(frozen=True, eq=False)
class VariationalParams:
    """``q(x) = N(nu, diag(exp(2 log_s)))`` and, with a trend, an independent ``q(beta)``."""

    nu: np.ndarray
    log_s: np.ndarray
    nu_beta: Optional[np.ndarray] = None
    log_s_beta: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("nu", "log_s", "nu_beta", "log_s_beta"):
            val = getattr(self, name)
            if val is not None:
                val = np.array(val, dtype=float).reshape(-1)
                val.setflags(write=False)
                object.__setattr__(self, name, val)
        if self.nu.shape != self.log_s.shape:
            raise DimensionError("nu and log_s must have equal length")
        if (self.nu_beta is None) != (self.log_s_beta is None):
            raise DimensionError("trend block needs both nu_beta and log_s_beta")

    @property
    def s(self):
        return np.exp(self.log_s)

    @property
    def size(self) -> int:
        p = 0 if self.nu_beta is None else self.nu_beta.size
        return self.nu.size + p

    def vector(self):
        parts = [self.nu, self.log_s]
        if self.nu_beta is not None:
            parts += [self.nu_beta, self.log_s_beta]
        return np.concatenate(parts)

    def with_vector(self, vec):
        n = self.nu.size
        vec = np.asarray(vec, dtype=float)
        if self.nu_beta is None:
            if vec.size != 2 * n:
                raise DimensionError("variational vector has the wrong length")
            return VariationalParams(vec[:n], vec[n:])
        p = self.nu_beta.size
        if vec.size != 2 * n + 2 * p:
            raise DimensionError("variational vector has the wrong length")
        return VariationalParams(vec[:n], vec[n:2 * n], vec[2 * n:2 * n + p], vec[2 * n + p:])


def init_variational(data):
    """``nu = y`` with missing pixels at the observed mean, ``log s = 0``."""
    y = np.array(data.y)
    fill = float(y[data.mask].mean()) if data.n_observed else 0.0
    y[~data.mask] = fill
    nu = y.reshape(-1)
    if data.F is None:
        return VariationalParams(nu, np.zeros_like(nu))
    p = data.F.shape[1]
    return VariationalParams(nu, np.zeros_like(nu), np.zeros(p), np.zeros(p))


def sample_q(q, eps):
    """Reparameterized draws ``nu + s * eps`` (``eps`` of shape (N,) or (N_q, N))."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != q.nu.size:
        raise DimensionError(f"eps has length {eps.shape[-1]}, expected {q.nu.size}")
    return q.nu + q.s * eps


def draw_eps(q, n_q, rng):
    return rng.standard_normal((n_q, q.size))


def elbo_value(model, q, data, eps):
    """ELBO for fixed draws, constant terms omitted.

    ``sum log s - M log sigma + log|det G| - 1/(2 N_q) sum_i [ ||g(x_i)||^2
    + ||m (y - x_i)||^2 / sigma^2 ]``; non-linear models add the sample mean of
    ``sum log psi'(h)``.  Forward computation only.
    """
    h, w, c = data.shape
    n = h * w * c
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    n_q = eps.shape[0]
    x = sample_q(q, eps[:, :n]).reshape(n_q, h, w, c)
    z, hs = forward_g(model, x)
    fitted = x
    extra = 0.0
    if data.F is not None:
        beta = q.nu_beta + np.exp(q.log_s_beta) * eps[:, n:]
        fitted = x + (beta @ data.F.T).reshape(n_q, h, w, c)
        extra = np.sum(q.log_s_beta) - 0.5 * TREND_PRECISION ** 2 * np.sum(beta ** 2) / n_q
    resid = data.mask[:, :, None] * (data.y - fitted)
    value = (np.sum(q.log_s) - data.n_observed_entries * model.log_sigma + model_logdet(model, (h, w))
             - 0.5 * (np.sum(z ** 2) + np.sum(resid ** 2) * math.exp(-2.0 * model.log_sigma)) / n_q + extra)
    if not model.is_linear:
        value += np.mean(activation_logdet(model, hs))
    return float(value)


def elbo_estimate(model, q, data, n_q=10, seed=0):
    rng = np.random.default_rng(seed)
    return elbo_value(model, q, data, draw_eps(q, n_q, rng))


def elbo_constant(data):
    """Constant terms omitted from ``elbo_value``; add them for the full ELBO."""
    n = int(np.prod(data.shape))
    m = data.n_observed_entries
    const = 0.5 * n - 0.5 * m * math.log(2.0 * math.pi)
    if data.F is not None:
        p = data.F.shape[1]
        const += 0.5 * p + p * math.log(TREND_PRECISION)
    return const


# ----------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, lr=0.01, **kw):
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(state, params, gradient):
    """One Adam update minimizing a loss with gradient ``gradient``."""
    params = np.asarray(params, dtype=float)
    g = np.asarray(gradient, dtype=float)
    if params.shape != g.shape or state.m.shape != g.shape:
        raise DimensionError("parameter, gradient and moment vectors must have equal length")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, t=t)


# ----------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    iterations: int = 10_000
    n_q: int = 10
    lr: float = 0.01
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.n_q < 1 or self.lr <= 0 or self.checkpoint_every < 0:
            raise ValueError("training settings must be positive")


@dataclass
class TrainResult:
    model: object
    variational: VariationalParams
    losses: np.ndarray
    best_iteration: int
    best_loss: float


def pack(model, q):
    return np.concatenate([flatten_model(model), q.vector()])


def unpack(vec, model, q):
    n_theta = flatten_model(model).size
    return unflatten_model(model, vec[:n_theta]), q.with_vector(vec[n_theta:])


def train(model, data, config=None, q=None, callback: Optional[Callable] = None):
    """Maximize the ELBO with Adam on the loss ``-ELBO / N``.

    Keeps the parameters with the lowest per-iteration loss.  ``callback``
    is called as ``callback(iteration, model, q, loss)`` every
    ``checkpoint_every`` iterations.
    """
    config = config or TrainConfig()
    q = init_variational(data) if q is None else q
    n = int(np.prod(data.shape))
    rng = np.random.default_rng(config.seed)
    vec = pack(model, q)
    state = AdamState.zeros(vec.size, lr=config.lr)
    best_vec, best_loss, best_it = vec, math.inf, -1
    losses = np.empty(config.iterations)
    for it in range(config.iterations):
        cur_model, cur_q = unpack(vec, model, q)
        eps = draw_eps(cur_q, config.n_q, rng)
        elbo, terms, grad = _elbo_and_grad(cur_model, cur_q, data, eps)
        loss = -elbo / n
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            bad = [k for k, v in terms.items() if not math.isfinite(v)] or ["gradient"]
            raise TrainingDivergedError(
                f"non-finite loss at iteration {it} (term: {', '.join(bad)})", iteration=it, term=bad[0])
        losses[it] = loss
        if loss < best_loss:
            best_vec, best_loss, best_it = vec, loss, it
        if callback is not None and config.checkpoint_every and it % config.checkpoint_every == 0:
            callback(it, cur_model, cur_q, loss)
        vec, state = adam_step(state, vec, -grad / n)
    best_model, best_q = unpack(best_vec, model, q)
    return TrainResult(best_model, best_q, losses, best_it, best_loss)


# ----------------------------------------------------------------------------
# checkpoints


def _vec_line(name, v):
    return f"{name} {v.size} " + " ".join(repr(float(a)) for a in v)


def checkpoint_to_text(model, q, meta=None):
    """Model manifest, then ``key value`` metadata, then the variational vectors."""
    lines = [model_to_text(model).rstrip("\n")]
    meta = dict(meta or {})
    lines.append(f"meta {len(meta)}")
    for key in sorted(meta):
        lines.append(f"{key} {meta[key]}")
    lines.append(_vec_line("nu", q.nu))
    lines.append(_vec_line("log_s", q.log_s))
    if q.nu_beta is not None:
        lines.append(_vec_line("nu_beta", q.nu_beta))
        lines.append(_vec_line("log_s_beta", q.log_s_beta))
    return "\n".join(lines) + "\n"


def checkpoint_from_text(text):
    """Inverse of ``checkpoint_to_text``; returns ``(model, q, meta)``."""
    lines = text.splitlines()
    model, pos = model_from_lines(lines)
    rest = lines[pos:]
    try:
        head = rest[0].split()
        if head[0] != "meta":
            raise ParseError(f"line {pos + 1}: expected 'meta'")
        n_meta = int(head[1])
        meta = {}
        for line in rest[1:1 + n_meta]:
            key, _, val = line.partition(" ")
            meta[key] = val
        vecs = {}
        for offset, line in enumerate(rest[1 + n_meta:], start=pos + 2 + n_meta):
            tok = line.split()
            if not tok:
                continue
            vals = np.array([float(t) for t in tok[2:]])
            if vals.size != int(tok[1]):
                raise ParseError(f"line {offset}: {tok[0]} declares {tok[1]} values, found {vals.size}")
            vecs[tok[0]] = vals
        q = VariationalParams(vecs["nu"], vecs["log_s"], vecs.get("nu_beta"), vecs.get("log_s_beta"))
    except (IndexError, KeyError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed checkpoint: {exc}")
    return model, q, meta


def save_checkpoint(path, model, q, meta=None):
    with open(path, "w") as fh:
        fh.write(checkpoint_to_text(model, q, meta))


def load_checkpoint(path):
    with open(path) as fh:
        return checkpoint_from_text(fh.read())


def write_loss_trace(path, losses):
    with open(path, "w") as fh:
        fh.write("iteration,loss\n")
        for i, loss in enumerate(losses):
            fh.write(f"{i},{float(loss)!r}\n")
