import numpy as np
import numpy.testing as npt
import pytest

from _util import central_diff_jacobian, random_model
from lpvuq.data import Dataset, bfr
from lpvuq.estimate import (FitConfig, ModelDims, Prior, build_prior,
                            cost_gradient, dims_from_model, fit_lti_prior,
                            flat_prior, multi_start_fit, neg_log_posterior)
from lpvuq.exceptions import DimensionMismatchError, FitDivergedError
from lpvuq.model import pack_params, simulate, unpack_params
from lpvuq.sensitivity import simulate_with_sensitivities


def _sigma_e():
    return np.array([[2.0, 0.3], [0.3, 1.0]])


def _random_case(rng, n=10):
    model = random_model(rng, n_x_hat=3, n_u=2, n_y=2, n_p=1)
    u = rng.standard_normal((n, 2))
    x0 = 0.1 * rng.standard_normal(3)
    y_clean, _, _ = simulate(model, u, x0)
    y = y_clean + 0.1 * rng.standard_normal(y_clean.shape)
    return model, x0, Dataset(u, y, ts=0.05)


def test_model_dims_template_and_inverse():
    dims = ModelDims(6, 2, 2, 1, hidden=(3, 3))
    model = dims.template()
    assert model.n_theta == 162
    assert dims_from_model(model) == dims
    lti = ModelDims(6, 2, 2, 0, hidden=())
    assert lti.template().net is None


def test_prior_validation():
    with pytest.raises(ValueError):
        Prior(np.zeros(3), np.ones(3), np.array([[1.0, 2.0], [2.0, 1.0]]))  # not SPD
    with pytest.raises(ValueError):
        Prior(np.zeros(3), np.array([1.0, 0.0, 1.0]), np.eye(2))
    p = Prior(np.zeros(2), np.array([4.0, np.inf]), np.eye(2))
    npt.assert_array_equal(p.precision_diag(), [0.25, 0.0])
    flat = flat_prior(5, np.eye(2))
    npt.assert_array_equal(flat.precision_diag(), 0.0)


def test_cost_zero_at_perfect_fit(rng):
    model, x0, ds = _random_case(rng)
    y_hat, _, _ = simulate(model, ds.u, x0)
    ds_perfect = Dataset(ds.u, y_hat, ts=ds.ts)
    prior = Prior(pack_params(model), np.ones(model.n_theta), _sigma_e())
    assert neg_log_posterior(model, x0, ds_perfect, prior) == 0.0
    g_th, g_x0 = cost_gradient(model, x0, ds_perfect, prior)
    npt.assert_array_equal(g_th, 0.0)
    npt.assert_array_equal(g_x0, 0.0)


def test_prior_only_cost_and_gradient(rng):
    # zero-length data: the objective is the pure prior penalty
    model, x0, _ = _random_case(rng)
    empty = Dataset(np.zeros((0, 2)), np.zeros((0, 2)), ts=0.05)
    theta = pack_params(model)
    mu = theta + rng.standard_normal(theta.shape)
    prior = Prior(mu, np.ones(theta.shape[0]), _sigma_e())
    v = theta - mu
    npt.assert_allclose(neg_log_posterior(model, x0, empty, prior),
                        0.5 * v @ v, rtol=1e-12)
    g_th, g_x0 = cost_gradient(model, x0, empty, prior)
    npt.assert_allclose(g_th, v, rtol=1e-12, atol=1e-15)
    npt.assert_array_equal(g_x0, 0.0)


def test_cost_matches_double_sum_oracle(rng):
    model, x0, ds = _random_case(rng)
    theta = pack_params(model)
    mu = rng.standard_normal(theta.shape)
    sig_o = rng.uniform(0.5, 3.0, theta.shape)
    prior = Prior(mu, sig_o, _sigma_e())

    y_hat, _, _ = simulate(model, ds.u, x0)
    sigma_e_inv = np.linalg.inv(_sigma_e())
    want = 0.0
    for k in range(ds.n_samples):
        e = ds.y[k] - y_hat[k]
        want += 0.5 * e @ sigma_e_inv @ e
    d = theta - mu
    want += 0.5 * d @ (d / sig_o)
    got = neg_log_posterior(model, x0, ds, prior)
    npt.assert_allclose(got, want, rtol=1e-10)


def test_map_reduces_to_ml_with_flat_prior(rng):
    # with zero prior precision only the residual term remains, and the
    # two evaluation routes agree to associativity error
    model, x0, ds = _random_case(rng)
    flat = flat_prior(model.n_theta, _sigma_e())
    y_hat, _, _ = simulate(model, ds.u, x0)
    sigma_e_inv = np.linalg.inv(_sigma_e())
    resid = ds.y - y_hat
    pure = 0.5 * np.einsum("ki,ij,kj->", resid, sigma_e_inv, resid)
    got = neg_log_posterior(model, x0, ds, flat)
    assert abs(got - pure) <= 1e-12 * max(abs(pure), 1.0)


def test_gradient_matches_finite_differences(rng):
    model, x0, ds = _random_case(rng, n=15)
    theta = pack_params(model)
    mu = theta + 0.1 * rng.standard_normal(theta.shape)
    prior = Prior(mu, rng.uniform(0.5, 2.0, theta.shape), _sigma_e())
    g_th, g_x0 = cost_gradient(model, x0, ds, prior)
    grad = np.concatenate([g_th, g_x0])

    def f(z):
        m = unpack_params(z[:model.n_theta], model)
        return neg_log_posterior(m, z[model.n_theta:], ds, prior)

    fd = central_diff_jacobian(f, np.concatenate([theta, x0]))
    scale = max(np.max(np.abs(fd)), 1.0)
    assert np.max(np.abs(grad - fd)) / scale < 1e-6


def test_gradient_matches_sensitivity_route(rng):
    # dual route: the adjoint gradient must agree with the gradient
    # assembled from explicit forward-sensitivity Jacobians
    model, x0, ds = _random_case(rng, n=60)
    theta = pack_params(model)
    mu = theta + 0.1 * rng.standard_normal(theta.shape)
    prior = Prior(mu, rng.uniform(0.5, 2.0, theta.shape), _sigma_e())
    g_th, g_x0 = cost_gradient(model, x0, ds, prior)

    y_hat, jac = simulate_with_sensitivities(model, ds.u, x0, include_x0=True)
    eps = ds.y - y_hat
    sei = np.linalg.inv(prior.sigma_e)
    want = -np.einsum("kri,rs,ks->i", jac, sei, eps)
    want[:model.n_theta] += (theta - mu) / prior.sigma_o_diag
    got = np.concatenate([g_th, g_x0])
    scale = np.max(np.abs(want))
    assert np.max(np.abs(got - want)) / scale < 1e-12


def test_divergent_model_gets_penalty_cost(rng):
    model, x0, ds = _random_case(rng)
    mats = np.array(model.matrices)
    mats[0, :3, :3] = 10.0 * np.eye(3)  # wildly unstable A_0
    bad = type(model)(model.n_x_hat, model.n_u, model.n_y, model.n_p,
                      mats, model.d_zero, model.net)
    prior = flat_prior(model.n_theta, _sigma_e())
    assert neg_log_posterior(bad, np.ones(3), ds, prior) == 1e12
    g_th, g_x0 = cost_gradient(bad, np.ones(3), ds, prior)
    npt.assert_array_equal(g_th, 0.0)
    npt.assert_array_equal(g_x0, 0.0)


def _lti_dataset(rng, n=300):
    truth = random_model(rng, n_x_hat=2, n_u=1, n_y=1, n_p=0,
                         spectral_radius=0.6, block_std=0.5)
    u = rng.standard_normal((n, 1))
    y, _, _ = simulate(truth, u, np.zeros(2))
    return Dataset(u, y, ts=1.0)


def test_lti_self_identification(rng):
    ds = _lti_dataset(rng)
    dims = ModelDims(2, 1, 1, 0, hidden=())
    cfg = FitConfig(adam_iterations=300, adam_learning_rate=0.02,
                    lbfgs_max_iterations=500, restarts=4, seed=1,
                    m0_init="random")
    m0, x0, result = fit_lti_prior(ds, dims, cfg)
    y_hat, _, _ = simulate(result.model, ds.u, x0)
    assert bfr(ds.y, y_hat) >= 99.0
    assert m0.shape == (3, 3)
    assert result.cost == result.restart_costs.min()


def test_multi_start_deterministic(rng):
    ds = _lti_dataset(rng, n=120)
    dims = ModelDims(2, 1, 1, 0, hidden=())
    prior = flat_prior(dims.layout().n_theta, np.eye(1))
    cfg = FitConfig(adam_iterations=50, lbfgs_max_iterations=50,
                    restarts=2, seed=3, m0_init="random")
    r1 = multi_start_fit(ds, dims, prior, cfg)
    r2 = multi_start_fit(ds, dims, prior, cfg)
    npt.assert_array_equal(r1.theta_map, r2.theta_map)
    npt.assert_array_equal(r1.x_hat_0, r2.x_hat_0)
    npt.assert_array_equal(r1.restart_costs, r2.restart_costs)
    assert r1.cost == r2.cost


def test_initial_guess_structure(rng):
    # zero optimizer budget exposes the raw initial draw
    ds = _random_case(rng)[2]
    dims = ModelDims(3, 2, 2, 1, hidden=(3, 3))
    lay = dims.layout()
    mu = np.zeros(lay.n_theta)
    mu[:lay.mat_row_off[1, 0]] = rng.standard_normal(lay.mat_row_off[1, 0]) * 0.1
    prior = Prior(mu, 10.0 * np.ones(lay.n_theta), np.eye(2))
    cfg = FitConfig(adam_iterations=0, lbfgs_max_iterations=0, restarts=1,
                    seed=9, m_init_std=0.01, m0_init="prior_mean")
    res = multi_start_fit(ds, dims, prior, cfg)
    n_m0 = int(lay.mat_row_off[1, 0])
    npt.assert_array_equal(res.theta_map[:n_m0], mu[:n_m0])  # M_0 = prior mean
    m1 = res.theta_map[n_m0:lay.n_theta_mat]
    assert np.all(m1 != 0.0) and np.max(np.abs(m1)) < 0.06  # ~N(0, 0.01^2)
    npt.assert_array_equal(res.x_hat_0, 0.0)
    # Xavier bound for the first net layer (fan_in 5, fan_out 3)
    w0 = res.theta_map[lay.w_off[0]:lay.w_off[0] + 15]
    lim = np.sqrt(6.0 / 8.0)
    assert np.all(np.abs(w0) < lim) and np.all(w0 != 0.0)


def test_all_restarts_diverged_raises(rng):
    ds = _lti_dataset(rng, n=50)
    dims = ModelDims(2, 1, 1, 0, hidden=())
    prior = flat_prior(dims.layout().n_theta, np.eye(1))
    cfg = FitConfig(adam_iterations=3, lbfgs_max_iterations=3, restarts=2,
                    seed=0, m0_init="random", divergence_bound=1e-15)
    with pytest.raises(FitDivergedError):
        multi_start_fit(ds, dims, prior, cfg)


def test_dims_mismatch_raises(rng):
    ds = _lti_dataset(rng, n=50)
    dims = ModelDims(2, 2, 1, 0, hidden=())
    prior = flat_prior(dims.layout().n_theta, np.eye(1))
    with pytest.raises(DimensionMismatchError):
        multi_start_fit(ds, dims, prior, FitConfig(restarts=1))


def test_build_prior_layout():
    dims = ModelDims(3, 2, 2, 1, hidden=(2,))
    lay = dims.layout()
    m0 = np.arange(25.0).reshape(5, 5)
    prior = build_prior(lay, m0, np.eye(2), m0_var=0.25, default_var=10.0)
    n_m0 = int(lay.mat_row_off[1, 0])
    # packed mean: rows of m0 with the D columns dropped on output rows
    want = np.concatenate([m0[r, :lay.row_len[r]] for r in range(5)])
    npt.assert_array_equal(prior.mu_o[:n_m0], want)
    npt.assert_array_equal(prior.mu_o[n_m0:], 0.0)
    npt.assert_array_equal(prior.sigma_o_diag[:n_m0], 0.25)
    npt.assert_array_equal(prior.sigma_o_diag[n_m0:], 10.0)
