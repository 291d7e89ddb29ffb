import numpy as np
import numpy.testing as npt
import pytest

from _util import central_diff_jacobian, random_model
from lpvuq.exceptions import DivergenceError
from lpvuq.model import (LpvSsModel, SchedulingNet, pack_params, simulate,
                         unpack_params)
from lpvuq.sensitivity import (SensitivityState, scheduling_jacobians,
                               sensitivity_step, simulate_with_sensitivities)


def _net_theta(net):
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        if b is not None:
            parts.append(b)
    return np.concatenate(parts)


def _net_like(theta, net):
    ws, bs, off = [], [], 0
    for w, b in zip(net.weights, net.biases):
        ws.append(theta[off:off + w.size].reshape(w.shape))
        off += w.size
        if b is None:
            bs.append(None)
        else:
            bs.append(theta[off:off + b.size])
            off += b.size
    return SchedulingNet(tuple(ws), tuple(bs), net.activation)


def test_scheduling_jacobians_match_finite_differences(rng):
    net = SchedulingNet.xavier((5, 4, 3, 2), rng, output_bias=True)
    x, u = rng.standard_normal(3), rng.standard_normal(2)
    d_theta, d_x = scheduling_jacobians(net, x, u)

    from lpvuq.model import eval_scheduling
    fd_theta = central_diff_jacobian(
        lambda th: eval_scheduling(_net_like(th, net), x, u), _net_theta(net))
    fd_x = central_diff_jacobian(
        lambda xv: eval_scheduling(net, xv, u), x)
    npt.assert_allclose(d_theta, fd_theta, rtol=0, atol=1e-9)
    npt.assert_allclose(d_x, fd_x, rtol=0, atol=1e-9)


@pytest.mark.parametrize("n_p,include_x0", [(0, False), (1, False), (2, True)])
def test_kernel_matches_python_reference(rng, n_p, include_x0):
    # compiled trajectory kernel against the plain-numpy step recursion
    model = random_model(rng, n_x_hat=3, n_u=2, n_y=2, n_p=n_p)
    u_seq = rng.standard_normal((40, 2))
    x0 = 0.1 * rng.standard_normal(3)
    y_k, jac_k = simulate_with_sensitivities(model, u_seq, x0, include_x0=include_x0)

    state = SensitivityState.initial(model, include_x0=include_x0)
    x = x0.copy()
    for k in range(40):
        j_blk, state, y, x = sensitivity_step(model, x, u_seq[k], state)
        npt.assert_allclose(y_k[k], y, rtol=1e-12, atol=1e-14)
        npt.assert_allclose(jac_k[k], j_blk, rtol=1e-11, atol=1e-13)


def test_outputs_bit_identical_to_simulate(rng):
    model = random_model(rng, n_x_hat=4, n_u=2, n_y=2, n_p=1)
    u_seq = rng.standard_normal((60, 2))
    x0 = rng.standard_normal(4)
    y_sim, _, _ = simulate(model, u_seq, x0)
    y_sens, _ = simulate_with_sensitivities(model, u_seq, x0)
    npt.assert_array_equal(y_sim, y_sens)


def test_jacobian_matches_finite_differences(rng):
    model = random_model(rng, n_x_hat=3, n_u=2, n_y=2, n_p=1)
    u_seq = rng.standard_normal((30, 2))
    x0 = 0.2 * rng.standard_normal(3)
    _, jac = simulate_with_sensitivities(model, u_seq, x0, include_x0=True)

    theta0 = np.concatenate([pack_params(model), x0])
    n_theta = model.n_theta

    def f(z):
        y, _, _ = simulate(unpack_params(z[:n_theta], model), u_seq, z[n_theta:])
        return y.ravel()

    fd = central_diff_jacobian(f, theta0).reshape(jac.shape)
    scale = np.max(np.abs(fd))
    assert np.max(np.abs(jac - fd)) / scale < 1e-7


def test_x0_columns_match_linear_theory(rng):
    # for an LTI model d y_k / d x_0 = C A^k exactly
    model = random_model(rng, n_x_hat=3, n_u=1, n_y=2, n_p=0)
    a = model.matrices[0, :3, :3]
    c = model.matrices[0, 3:, :3]
    u_seq = rng.standard_normal((10, 1))
    _, jac = simulate_with_sensitivities(model, u_seq, np.zeros(3), include_x0=True)
    ak = np.eye(3)
    for k in range(10):
        npt.assert_allclose(jac[k, :, model.n_theta:], c @ ak, rtol=1e-12, atol=1e-14)
        ak = a @ ak


def test_divergence_raises(rng):
    mats = np.zeros((1, 2, 2))
    mats[0, 0, 0] = 3.0
    mats[0, 1, 0] = 1.0
    model = LpvSsModel(1, 1, 1, 0, mats)
    with pytest.raises(DivergenceError):
        simulate_with_sensitivities(model, np.zeros((100, 1)), np.ones(1),
                                    divergence_bound=1e3)
