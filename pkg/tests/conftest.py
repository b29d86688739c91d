"""Shared oracles and small random problems for the test suite."""
import math

import numpy as np
import pytest

from dgmrf.conv import assemble_dense
from dgmrf.grid import Dataset
from dgmrf.model import DgmrfModel, forward_g, init_model


def dense_g(model, h, w):
    """Dense matrix of the linear part ``G`` of ``model`` on an ``h x w`` grid."""
    return assemble_dense(model.apply_linear, h, w, model.channels)


def dense_logdet(mat):
    sign, val = np.linalg.slogdet(mat)
    assert sign != 0
    return val


def random_model(rng, kind="plus", n_layers=2, channels=1, radius=1, nonlinear=False,
                 scale=0.4, train_bias=True, train_sigma=False, sigma=0.5):
    """Random model with non-trivial biases and filters."""
    seed = int(rng.integers(1 << 30))
    m = init_model(kind, n_layers, radius, channels, nonlinear, sigma, train_sigma,
                   train_bias, seed, init_scale=scale)
    layers = []
    for layer in m.layers:
        bias = rng.normal(0, 0.5, layer.channels)
        la = None if layer.log_alpha is None else float(rng.normal(0, 0.3))
        layers.append(type(layer)(layer.kind, layer.filt, layer.cross, bias, layer.radius,
                                  layer.orientation, la, layer.perm))
    return DgmrfModel(tuple(layers), m.log_sigma, train_sigma, train_bias, seed)


def random_dataset(rng, h, w, c=1, frac=0.5, p=0):
    y = rng.normal(size=(h, w, c))
    mask = rng.random((h, w)) < frac
    if not mask.any():
        mask[0, 0] = True
    F = None
    if p:
        F = np.column_stack([np.ones(h * w)] + [rng.normal(size=h * w) for _ in range(p - 1)])
    return Dataset(y, mask, F)


def dense_posterior(model, data, v=1e-4):
    """Dense ``Qt``, right-hand side ``c`` and mean for a linear model (with optional trend)."""
    h, w, c = data.shape
    n = h * w * c
    G = dense_g(model, h, w)
    b = forward_g(model, np.zeros(data.shape))[0].reshape(-1)
    m = np.repeat(data.mask.reshape(-1), c).astype(float)
    s2 = model.sigma ** 2
    y = np.asarray(data.y).reshape(-1)
    if data.F is None:
        Q = G.T @ G + np.diag(m) / s2
        rhs = -G.T @ b + m * y / s2
    else:
        p = data.F.shape[1]
        Gbar = np.zeros((n + p, n + p))
        Gbar[:n, :n] = G
        Gbar[n:, n:] = v * np.eye(p)
        A = np.hstack([np.eye(n), data.F])
        Q = Gbar.T @ Gbar + A.T @ np.diag(m) @ A / s2
        rhs = -Gbar.T @ np.concatenate([b, np.zeros(p)]) + A.T @ (m * y) / s2
    return Q, rhs, np.linalg.solve(Q, rhs)


def dense_log_marginal(model, data):
    """``log p(y)`` for a linear model with Gaussian noise on observed pixels."""
    h, w, c = data.shape
    G = dense_g(model, h, w)
    b = forward_g(model, np.zeros(data.shape))[0].reshape(-1)
    mu = -np.linalg.solve(G, b)
    cov = np.linalg.inv(G.T @ G)
    obs = np.repeat(data.mask.reshape(-1), c)
    y = np.asarray(data.y).reshape(-1)[obs]
    S = cov[np.ix_(obs, obs)] + model.sigma ** 2 * np.eye(obs.sum())
    r = y - mu[obs]
    sign, ld = np.linalg.slogdet(S)
    return -0.5 * (obs.sum() * math.log(2 * math.pi) + ld + r @ np.linalg.solve(S, r))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance report: test_acceptance appends one line per criterion here

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
