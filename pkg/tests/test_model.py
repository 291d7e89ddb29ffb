import numpy as np
import numpy.testing as npt
import pytest

from _util import random_model
from lpvuq.exceptions import (DimensionMismatchError, DivergenceError,
                              NonFiniteActivationError)
from lpvuq.model import (LpvSsModel, SchedulingNet, assemble_matrices,
                         eval_scheduling, load_model, pack_params, save_model,
                         simulate, step, unpack_params)


def test_net_shape_validation():
    w1 = np.zeros((3, 4))
    w2 = np.zeros((2, 3))
    SchedulingNet((w1, w2), (np.zeros(3), None))
    with pytest.raises(DimensionMismatchError):
        SchedulingNet((w1, np.zeros((2, 5))), (np.zeros(3), None))
    with pytest.raises(DimensionMismatchError):
        SchedulingNet((w1,), (np.zeros(4),))
    with pytest.raises(ValueError):
        SchedulingNet((w1,), (None,), activation="relu")


def test_net_param_count_benchmark_dims():
    # 8 -> 3 -> 3 -> 1 tanh net without output bias
    net = SchedulingNet.zeros((8, 3, 3, 1))
    assert net.n_params == (8 * 3 + 3) + (3 * 3 + 3) + 3
    assert net.has_bias == (True, True, False)
    assert net.layer_dims == (8, 3, 3, 1)


def test_eval_scheduling_matches_manual_forward(rng):
    net = SchedulingNet.xavier((5, 4, 2), rng, output_bias=True)
    x, u = rng.standard_normal(3), rng.standard_normal(2)
    a = np.concatenate([x, u])
    h = np.tanh(net.weights[0] @ a + net.biases[0])
    want = net.weights[1] @ h + net.biases[1]
    npt.assert_allclose(eval_scheduling(net, x, u), want, rtol=0, atol=0)


def test_eval_scheduling_nonfinite_raises():
    net = SchedulingNet((np.array([[1e308, 1e308]]),), (None,))
    with pytest.raises(NonFiniteActivationError):
        eval_scheduling(net, [1e30], [1e30])


def test_model_validation():
    mats = np.zeros((1, 4, 4))
    LpvSsModel(2, 2, 2, 0, mats)
    bad = mats.copy()
    bad[0, 2, 2] = 1.0  # nonzero D entry
    with pytest.raises(ValueError):
        LpvSsModel(2, 2, 2, 0, bad)
    LpvSsModel(2, 2, 2, 0, bad, d_zero=False)
    net = SchedulingNet.zeros((4, 3, 1))
    with pytest.raises(ValueError):
        LpvSsModel(2, 2, 2, 0, mats, net=net)
    with pytest.raises(ValueError):
        LpvSsModel(2, 2, 2, 1, np.zeros((2, 4, 4)))
    with pytest.raises(DimensionMismatchError):
        LpvSsModel(3, 2, 2, 1, np.zeros((2, 5, 5)), net=net)


def test_layout_counts_benchmark_dims():
    model = random_model(np.random.default_rng(1), n_x_hat=6, n_u=2, n_y=2,
                         n_p=1, hidden=(3, 3))
    lay = model.layout
    # per block: 6 state rows of 8 entries + 2 output rows of 6 (D skipped)
    assert lay.n_theta_mat == 2 * (6 * 8 + 2 * 6)
    assert lay.n_theta_net == model.net.n_params == 42
    assert lay.n_theta == 162


def test_pack_unpack_round_trip(rng):
    for n_p in (0, 1, 2):
        model = random_model(rng, n_x_hat=3, n_u=2, n_y=1, n_p=n_p)
        theta = pack_params(model)
        assert theta.shape == (model.n_theta,)
        back = unpack_params(theta, model)
        npt.assert_array_equal(back.matrices, model.matrices)
        if n_p:
            for w, w2 in zip(model.net.weights, back.net.weights):
                npt.assert_array_equal(w, w2)
        npt.assert_array_equal(pack_params(back), theta)
    with pytest.raises(DimensionMismatchError):
        unpack_params(theta[:-1], model)


def test_pack_order_is_blocks_then_layers(rng):
    model = random_model(rng, n_x_hat=2, n_u=1, n_y=1, n_p=1, hidden=(2,))
    theta = pack_params(model)
    # first packed row is row 0 of M_0
    npt.assert_array_equal(theta[:3], model.matrices[0, 0])
    lay = model.layout
    w0 = model.net.weights[0]
    npt.assert_array_equal(theta[lay.w_off[0]:lay.w_off[0] + w0.size], w0.ravel())


def test_assemble_matrices_affine(rng):
    model = random_model(rng, n_x_hat=3, n_u=2, n_y=2, n_p=2)
    rho = rng.standard_normal(2)
    a, b, c, d = assemble_matrices(model, rho)
    m = model.matrices[0] + rho[0] * model.matrices[1] + rho[1] * model.matrices[2]
    npt.assert_allclose(a, m[:3, :3], rtol=1e-14, atol=1e-15)
    npt.assert_allclose(b, m[:3, 3:], rtol=1e-14, atol=1e-15)
    npt.assert_allclose(c, m[3:, :3], rtol=1e-14, atol=1e-15)
    npt.assert_array_equal(d, 0.0)
    with pytest.raises(ValueError):
        assemble_matrices(model, [np.nan, 0.0])


def test_simulate_matches_step_loop(rng):
    # kernel simulation against the plain python step recursion
    model = random_model(rng, n_x_hat=4, n_u=2, n_y=3, n_p=1)
    u_seq = rng.standard_normal((50, 2))
    x0 = rng.standard_normal(4)
    y_seq, x_seq, rho_seq = simulate(model, u_seq, x0)
    x = x0.copy()
    for k in range(50):
        npt.assert_allclose(x_seq[k], x, rtol=1e-13, atol=1e-13)
        x_next, y, rho = step(model, x, u_seq[k])
        npt.assert_allclose(y_seq[k], y, rtol=1e-12, atol=1e-14)
        npt.assert_allclose(rho_seq[k], rho, rtol=1e-12, atol=1e-14)
        x = x_next
    npt.assert_allclose(x_seq[-1], x, rtol=1e-12, atol=1e-13)


def test_simulate_divergence(rng):
    mats = np.zeros((1, 2, 2))
    mats[0, 0, 0] = 2.0  # doubling state each step
    mats[0, 1, 0] = 1.0
    model = LpvSsModel(1, 1, 1, 0, mats)
    u_seq = np.zeros((200, 1))
    with pytest.raises(DivergenceError) as err:
        simulate(model, u_seq, np.array([1.0]), divergence_bound=1e6)
    # step k = 19 produces x_20 = 2^20, the first state above 1e6
    assert err.value.time_index == 19


def test_save_load_round_trip(tmp_path, rng):
    model = random_model(rng, n_x_hat=3, n_u=2, n_y=2, n_p=1)
    x0 = rng.standard_normal(3)
    path = tmp_path / "model.json"
    save_model(model, path, x_hat_0=x0, normalization={"u_mean": [0.0, 0.0]})
    loaded = load_model(path)
    npt.assert_array_equal(loaded.model.matrices, model.matrices)
    npt.assert_array_equal(loaded.x_hat_0, x0)
    assert loaded.normalization == {"u_mean": [0.0, 0.0]}
    for w, w2 in zip(model.net.weights, loaded.model.net.weights):
        npt.assert_array_equal(w, w2)
    u = rng.standard_normal((20, 2))
    y1, _, _ = simulate(model, u, x0)
    y2, _, _ = simulate(loaded.model, u, x0)
    npt.assert_array_equal(y1, y2)  # byte-exact persistence


def test_load_rejects_other_documents(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(ValueError):
        load_model(path)
