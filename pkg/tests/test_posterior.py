import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgmrf.errors import ConfigError, ConvergenceError, DimensionError, UnsupportedModelError
from dgmrf.grid import Dataset
from dgmrf.linalg import cg
from dgmrf.model import DgmrfModel, Layer, identity_layer, matern_layers
from dgmrf.posterior import (
    InferConfig, PosteriorOperator, cg_solve, draw_samples, mc_variance, mean_rhs, posterior_mean,
    posterior_sample, qtilde_matvec, rbmc_variance, summarize)
from dgmrf.vi import VariationalParams

from conftest import dense_posterior, random_dataset, random_model


def identity_model(sigma=1.0):
    return DgmrfModel((identity_layer(),), log_sigma=math.log(sigma))


def dense_qtilde(op):
    return np.column_stack([qtilde_matvec(op, e) for e in np.eye(op.size)])


# ---------------------------------------------------------------------------
# the precision operator


def test_identity_full_mask_doubles():
    op = PosteriorOperator(identity_model(), np.ones((3, 4), bool), 1.0)
    u = np.random.default_rng(0).normal(size=12)
    np.testing.assert_allclose(qtilde_matvec(op, u), 2 * u, atol=1e-15)


def test_identity_no_observations():
    op = PosteriorOperator(identity_model(), np.zeros((3, 3), bool), 0.1)
    u = np.arange(9.0)
    np.testing.assert_array_equal(op(u), u)


def test_matvec_matches_dense_5x5():
    rng = np.random.default_rng(1)
    model = random_model(rng, n_layers=2, sigma=0.3)
    data = random_dataset(rng, 5, 5, frac=0.6)
    op = PosteriorOperator.from_data(model, data)
    Q, _, _ = dense_posterior(model, data)
    u = rng.normal(size=25)
    np.testing.assert_allclose(op(u), Q @ u, rtol=1e-10, atol=1e-10)


def test_matvec_matches_dense_trend():
    rng = np.random.default_rng(2)
    model = random_model(rng, n_layers=1, sigma=0.4)
    data = random_dataset(rng, 4, 4, frac=0.7, p=3)
    op = PosteriorOperator.from_data(model, data)
    assert op.size == 19
    Q, _, _ = dense_posterior(model, data)
    np.testing.assert_allclose(dense_qtilde(op), Q, rtol=1e-10, atol=1e-10)


def test_matvec_multichannel_matches_dense():
    rng = np.random.default_rng(3)
    model = random_model(rng, kind="seq", n_layers=2, channels=2, sigma=0.5)
    data = random_dataset(rng, 4, 3, c=2)
    op = PosteriorOperator.from_data(model, data)
    Q, _, _ = dense_posterior(model, data)
    np.testing.assert_allclose(dense_qtilde(op), Q, rtol=1e-10, atol=1e-10)


@given(st.integers(0, 2**31 - 1), st.sampled_from(["plus", "seq"]), st.integers(0, 3))
@settings(max_examples=25, deadline=None)
def test_qtilde_symmetric_positive_definite(seed, kind, p):
    rng = np.random.default_rng(seed)
    model = random_model(rng, kind=kind, n_layers=int(rng.integers(1, 3)), sigma=float(rng.uniform(0.05, 1)))
    data = random_dataset(rng, 4, 4, frac=0.5, p=p)
    op = PosteriorOperator.from_data(model, data)
    Q = dense_qtilde(op)
    np.testing.assert_allclose(Q, Q.T, rtol=1e-10, atol=1e-10 * np.abs(Q).max())
    u = rng.normal(size=(1000, op.size))
    assert np.all(np.einsum("ij,ij->i", u, op(u)) > 0)


def test_diagonal_matches_dense():
    rng = np.random.default_rng(4)
    model = random_model(rng, n_layers=2, sigma=0.2)
    data = random_dataset(rng, 5, 4, p=2)
    op = PosteriorOperator.from_data(model, data)
    np.testing.assert_allclose(op.diagonal(), np.diag(dense_qtilde(op)), rtol=1e-10)


def test_batched_matvec():
    rng = np.random.default_rng(5)
    model = random_model(rng)
    op = PosteriorOperator.from_data(model, random_dataset(rng, 4, 4))
    u = rng.normal(size=(3, 16))
    np.testing.assert_allclose(op(u), np.stack([op(v) for v in u]), atol=1e-13)


def test_matvec_length_mismatch():
    op = PosteriorOperator(identity_model(), np.ones((2, 2), bool), 1.0)
    with pytest.raises(DimensionError):
        op(np.zeros(5))


def test_nonlinear_model_rejected():
    model = random_model(np.random.default_rng(6), nonlinear=True)
    with pytest.raises(UnsupportedModelError):
        PosteriorOperator(model, np.ones((3, 3), bool), 1.0)


# ---------------------------------------------------------------------------
# conjugate gradients


def test_cg_identity_one_iteration():
    c = np.random.default_rng(7).normal(size=10)
    res = cg(lambda v: v, c)
    assert res.iterations == 1
    np.testing.assert_allclose(res.x, c, atol=1e-15)


def test_cg_diagonal():
    n = 20
    d = np.arange(1.0, n + 1)
    c = np.ones(n)
    res = cg(lambda v: d * v, c, tol=1e-12)
    np.testing.assert_allclose(res.x, 1.0 / d, rtol=1e-10)
    assert res.iterations <= n


def test_cg_dense_spd():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(30, 30))
    A = A @ A.T + 30 * np.eye(30)
    c = rng.normal(size=30)
    res = cg(lambda v: v @ A, c)
    np.testing.assert_allclose(res.x, np.linalg.solve(A, c), rtol=1e-6, atol=1e-9)
    assert res.residual <= 1e-7


def test_cg_zero_rhs():
    res = cg(lambda v: 3 * v, np.zeros(4))
    assert res.iterations == 0 and np.all(res.x == 0)


def test_cg_batched_rows_independent():
    rng = np.random.default_rng(9)
    A = rng.normal(size=(12, 12))
    A = A @ A.T + np.eye(12)
    C = rng.normal(size=(4, 12))
    C[2] = 0.0
    res = cg(lambda v: v @ A, C, tol=1e-10)
    for k in range(4):
        np.testing.assert_allclose(res.x[k], np.linalg.solve(A, C[k]), rtol=1e-7, atol=1e-10)


def test_cg_iteration_cap():
    rng = np.random.default_rng(10)
    A = np.diag(np.logspace(0, 6, 50))
    with pytest.raises(ConvergenceError) as info:
        cg(lambda v: v @ A, rng.normal(size=50), tol=1e-12, max_iter=3)
    assert info.value.iterations == 3


def test_cg_jacobi_same_answer_fewer_iterations():
    rng = np.random.default_rng(11)
    d = np.logspace(0, 5, 40)
    B = rng.normal(size=(40, 40)) * 0.01
    A = np.diag(d) + B @ B.T
    c = rng.normal(size=40)
    plain = cg(lambda v: v @ A, c, tol=1e-10, max_iter=1000)
    pre = cg(lambda v: v @ A, c, tol=1e-10, inv_diag=1.0 / np.diag(A))
    np.testing.assert_allclose(pre.x, plain.x, rtol=1e-6)
    assert pre.iterations < plain.iterations


def test_cg_solve_default_cap():
    op = PosteriorOperator(identity_model(), np.ones((2, 2), bool), 1.0)
    res = cg_solve(op, np.ones(4))
    np.testing.assert_allclose(res.x, 0.5)


# ---------------------------------------------------------------------------
# posterior mean


def test_mean_identity_full_observation():
    sigma = 0.5
    y = np.random.default_rng(12).normal(size=(3, 3, 1))
    data = Dataset(y, np.ones((3, 3), bool))
    op = PosteriorOperator.from_data(identity_model(sigma), data)
    mu = posterior_mean(op, data, tol=1e-12)
    np.testing.assert_allclose(mu, y.reshape(-1) / sigma ** 2 / (1 + sigma ** -2), rtol=1e-10)


def test_mean_single_pixel_closed_form():
    g, b, sigma, y = 2.0, 0.7, 0.5, 1.3
    layer = Layer("plus", [[g, 0, 0, 0, 0]], None, [b], param="taps", fixed=True)
    model = DgmrfModel((layer,), log_sigma=math.log(sigma))
    data = Dataset(np.array([[[y]]]), np.ones((1, 1), bool))
    mu = posterior_mean(PosteriorOperator.from_data(model, data), data)
    want = (y / sigma ** 2 - g * b) / (g ** 2 + sigma ** -2)
    assert math.isclose(mu[0], want, rel_tol=1e-12)


def test_mean_matern_half_missing():
    rng = np.random.default_rng(13)
    model = matern_layers(0.5, 1.0, 1, log_sigma=math.log(0.1))
    y = rng.normal(size=(6, 6, 1))
    mask = np.zeros((6, 6), bool)
    mask[:, :3] = True
    data = Dataset(y, mask)
    _, _, mu = dense_posterior(model, data)
    got = posterior_mean(PosteriorOperator.from_data(model, data), data)
    assert np.abs(got - mu).max() <= 1e-6


@given(st.integers(0, 2**31 - 1), st.sampled_from(["plus", "seq"]), st.integers(1, 2), st.integers(0, 2),
       st.integers(4, 6), st.integers(4, 6))
@settings(max_examples=30, deadline=None)
def test_mean_matches_dense(seed, kind, n_layers, p, h, w):
    rng = np.random.default_rng(seed)
    model = random_model(rng, kind=kind, n_layers=n_layers, sigma=float(rng.uniform(0.1, 1.0)))
    data = random_dataset(rng, h, w, frac=0.6, p=p)
    Q, _, mu = dense_posterior(model, data)
    op = PosteriorOperator.from_data(model, data)
    # the relative-residual stopping rule bounds the error by cond(Qt) * tol
    loose = posterior_mean(op, data)
    bound = np.linalg.cond(Q) * (1e-7 + 1e-12) * np.linalg.norm(mu)
    assert np.linalg.norm(loose - mu) <= bound
    tight = posterior_mean(op, data, tol=1e-10)
    assert np.abs(tight - mu).max() <= 1e-6


def test_mean_with_trend_recovers_beta():
    rng = np.random.default_rng(14)
    model = matern_layers(1.0, 1.0, 1, log_sigma=math.log(0.05))
    h = w = 6
    F = np.column_stack([np.ones(h * w), np.linspace(-1, 1, h * w)])
    beta = np.array([3.0, -2.0])
    y = (F @ beta).reshape(h, w, 1) + 0.05 * rng.normal(size=(h, w, 1))
    data = Dataset(y, np.ones((h, w), bool), F)
    _, _, mu = dense_posterior(model, data)
    got = posterior_mean(PosteriorOperator.from_data(model, data), data, tol=1e-10)
    np.testing.assert_allclose(got, mu, rtol=1e-6, atol=1e-6)


def test_tiny_noise_full_observation_interpolates():
    rng = np.random.default_rng(15)
    model = random_model(rng, n_layers=2, sigma=1e-3)
    y = rng.normal(size=(8, 8, 1))
    data = Dataset(y, np.ones((8, 8), bool))
    mu = posterior_mean(PosteriorOperator.from_data(model, data), data)
    assert np.abs(mu - y.reshape(-1)).max() <= 1e-2 * np.abs(y).max()


def test_mean_rhs_matches_dense():
    rng = np.random.default_rng(16)
    model = random_model(rng, n_layers=2, sigma=0.3)
    data = random_dataset(rng, 5, 5, p=2)
    _, rhs, _ = dense_posterior(model, data)
    np.testing.assert_allclose(mean_rhs(PosteriorOperator.from_data(model, data), data), rhs, rtol=1e-10,
                               atol=1e-10)


# ---------------------------------------------------------------------------
# sampling


def test_zero_perturbation_gives_mean():
    rng = np.random.default_rng(17)
    model = random_model(rng, n_layers=2, sigma=0.4)
    data = random_dataset(rng, 5, 5, p=1)
    op = PosteriorOperator.from_data(model, data)
    mu = posterior_mean(op, data, tol=1e-12)
    xs = posterior_sample(op, data, np.zeros(op.size), np.zeros(op.n_latent), tol=1e-12)
    np.testing.assert_allclose(xs, mu, rtol=1e-9, atol=1e-10)


def test_sample_shapes():
    rng = np.random.default_rng(18)
    model = random_model(rng)
    data = random_dataset(rng, 4, 4)
    op = PosteriorOperator.from_data(model, data)
    with pytest.raises(DimensionError):
        posterior_sample(op, data, np.zeros(15), np.zeros(16))
    assert draw_samples(op, data, 7, rng, batch=3).shape == (7, 16)


def test_sample_moments_within_four_standard_errors():
    rng = np.random.default_rng(19)
    model = random_model(rng, n_layers=2, sigma=0.5)
    data = random_dataset(rng, 4, 4, frac=0.5)
    op = PosteriorOperator.from_data(model, data)
    Q, _, mu = dense_posterior(model, data)
    cov = np.linalg.inv(Q)
    n = 10_000
    xs = draw_samples(op, data, n, rng, tol=1e-10)
    sd = np.sqrt(np.diag(cov))
    assert np.all(np.abs(xs.mean(axis=0) - mu) <= 4 * sd / math.sqrt(n))
    emp = np.cov(xs, rowvar=False)
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / n)
    # 256 entries: allow the 4 SE band to be exceeded by chance in very few places
    assert np.mean(np.abs(emp - cov) > 4 * se) <= 0.01
    assert np.all(np.abs(emp - cov) <= 6 * se)


# ---------------------------------------------------------------------------
# variances


def test_rbmc_diagonal_precision_is_exact():
    sigma = 0.5
    data = random_dataset(np.random.default_rng(20), 4, 4)
    op = PosteriorOperator.from_data(identity_model(sigma), data)
    c = mean_rhs(op, data)
    xs = draw_samples(op, data, 5, np.random.default_rng(0))
    want = 1.0 / (1.0 + data.mask.reshape(-1) / sigma ** 2)
    np.testing.assert_allclose(rbmc_variance(op, xs, c), want, rtol=1e-10)


def test_rbmc_repeated_sample():
    rng = np.random.default_rng(21)
    model = random_model(rng, sigma=0.3)
    data = random_dataset(rng, 4, 4)
    op = PosteriorOperator.from_data(model, data)
    x = rng.normal(size=16)
    var = rbmc_variance(op, np.stack([x, x, x]), mean_rhs(op, data))
    np.testing.assert_allclose(var, 1.0 / op.diagonal(), rtol=1e-12)


def test_rbmc_needs_two_samples():
    op = PosteriorOperator(identity_model(), np.ones((2, 2), bool), 1.0)
    with pytest.raises(ValueError):
        rbmc_variance(op, np.zeros((1, 4)), np.zeros(4))


def test_rbmc_unbiased_and_tighter_than_mc():
    rng = np.random.default_rng(22)
    model = random_model(rng, n_layers=2, sigma=0.5)
    data = random_dataset(rng, 4, 4)
    op = PosteriorOperator.from_data(model, data)
    Q, c, _ = dense_posterior(model, data)
    truth = np.diag(np.linalg.inv(Q))
    xs = draw_samples(op, data, 10_000, rng, tol=1e-10)
    var, se = rbmc_variance(op, xs, c, return_se=True)
    assert np.all(np.abs(var - truth) <= 4 * se + 1e-12)
    # spread of the two estimators over repeated small batches
    trials = xs.reshape(100, 100, 16)
    rb = np.array([rbmc_variance(op, t, c) for t in trials])
    mc = np.array([mc_variance(t) for t in trials])
    assert np.all(rb.var(axis=0) < mc.var(axis=0))


def test_mc_variance_cases():
    assert np.all(mc_variance(np.ones((5, 3))) == 0)
    assert mc_variance(np.array([[-1.0], [1.0]]))[0] == 2.0
    rng = np.random.default_rng(23)
    n = 10_000
    v = mc_variance(rng.normal(size=(n, 4)))
    assert np.all(np.abs(v - 1) <= 4 * math.sqrt(2 / (n - 1)))
    with pytest.raises(ValueError):
        mc_variance(np.zeros((1, 3)))


# ---------------------------------------------------------------------------
# summaries


def test_summarize_linear_against_dense():
    rng = np.random.default_rng(24)
    model = random_model(rng, n_layers=2, sigma=0.3)
    data = random_dataset(rng, 6, 6)
    _, _, mu = dense_posterior(model, data)
    Q = dense_posterior(model, data)[0]
    sd = np.sqrt(np.diag(np.linalg.inv(Q)))
    s = summarize(model, None, data, InferConfig(n_samples=400, seed=1))
    assert np.abs(s.mean.reshape(-1) - mu).max() <= 1e-6
    # RBMC with 400 samples: a few percent relative error at most
    np.testing.assert_allclose(s.marginal_sd.reshape(-1), sd, rtol=0.05)
    np.testing.assert_allclose(s.predictive_sd ** 2, s.marginal_sd ** 2 + model.sigma ** 2, rtol=1e-12)
    assert s.tags["method"] == "cg" and s.tags["variance"] == "rbmc"
    assert s.tags["preconditioner"] == "none"


def test_summarize_jacobi_agrees():
    rng = np.random.default_rng(25)
    model = random_model(rng, n_layers=2, sigma=0.3)
    data = random_dataset(rng, 6, 6)
    a = summarize(model, None, data, InferConfig(cg_tol=1e-10, n_samples=50))
    b = summarize(model, None, data, InferConfig(cg_tol=1e-10, n_samples=50, preconditioner="jacobi"))
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(a.marginal_sd, b.marginal_sd, rtol=1e-6)
    assert b.tags["preconditioner"] == "jacobi"


def test_summarize_mc_variance_option():
    rng = np.random.default_rng(26)
    model = random_model(rng, sigma=0.5)
    data = random_dataset(rng, 5, 5)
    s = summarize(model, None, data, InferConfig(variance="mc", n_samples=20))
    assert s.tags["variance"] == "mc"


def test_summarize_trend_reports_beta():
    rng = np.random.default_rng(27)
    model = matern_layers(1.0, 1.0, 1, log_sigma=math.log(0.1))
    data = random_dataset(rng, 5, 5, frac=0.8, p=2)
    s = summarize(model, None, data, InferConfig(n_samples=100))
    assert s.tags["variance"] == "mc"
    assert s.beta_mean.shape == (2,) and s.beta_sd.shape == (2,) and np.all(s.beta_sd > 0)
    _, _, mu = dense_posterior(model, data)
    np.testing.assert_allclose(s.beta_mean, mu[25:], rtol=1e-5, atol=1e-5)
    want = mu[:25] + data.F @ mu[25:]
    np.testing.assert_allclose(s.mean.reshape(-1), want, rtol=1e-5, atol=1e-5)
    with pytest.raises(ConfigError):
        summarize(model, None, data, InferConfig(variance="rbmc"))


def test_summarize_nonlinear_uses_variational():
    rng = np.random.default_rng(28)
    model = random_model(rng, nonlinear=True, sigma=0.2)
    data = random_dataset(rng, 4, 4)
    q = VariationalParams(rng.normal(size=16), rng.normal(-1, 0.1, size=16))
    s = summarize(model, q, data)
    np.testing.assert_array_equal(s.mean.reshape(-1), q.nu)
    np.testing.assert_allclose(s.marginal_sd.reshape(-1), np.exp(q.log_s), rtol=1e-15)
    np.testing.assert_allclose(s.predictive_sd ** 2, s.marginal_sd ** 2 + 0.04, rtol=1e-12)
    assert s.tags["method"] == "variational"


def test_predictive_sd_grows_with_noise():
    data = random_dataset(np.random.default_rng(29), 4, 4)
    sds = [summarize(identity_model(s), None, data, InferConfig(n_samples=10)).predictive_sd for s in (0.1, 0.5, 2.0)]
    assert np.all(sds[0] < sds[1]) and np.all(sds[1] < sds[2])


def test_summarize_bad_options():
    data = random_dataset(np.random.default_rng(30), 3, 3)
    model = identity_model(0.5)
    with pytest.raises(ConfigError):
        summarize(model, None, data, InferConfig(variance="exact"))
    with pytest.raises(ConfigError):
        summarize(model, None, data, InferConfig(preconditioner="ilu"))


def test_summarize_is_deterministic():
    rng = np.random.default_rng(31)
    model = random_model(rng, sigma=0.3)
    data = random_dataset(rng, 5, 5)
    a = summarize(model, None, data, InferConfig(n_samples=30, seed=4))
    b = summarize(model, None, data, InferConfig(n_samples=30, seed=4))
    assert a.marginal_sd.tobytes() == b.marginal_sd.tobytes()
