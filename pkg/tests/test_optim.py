import numpy as np
import numpy.testing as npt
import pytest

from lpvuq.estimate import FitConfig, adam_minimize, lbfgs_minimize


def _rosenbrock(z):
    x, y = z
    f = (1.0 - x) ** 2 + 100.0 * (y - x * x) ** 2
    g = np.array([-2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
                  200.0 * (y - x * x)])
    return f, g


def _quadratic(q, b):
    def f(x):
        return 0.5 * x @ q @ x - b @ x, q @ x - b
    return f


def test_adam_zero_gradient_keeps_x():
    cfg = FitConfig(adam_iterations=100, adam_learning_rate=0.1)
    x0 = np.array([1.0, -2.0])
    x, trace = adam_minimize(lambda x: (5.0, np.zeros(2)), x0, cfg)
    npt.assert_array_equal(x, x0)
    assert trace["best_cost"] == 5.0


def test_adam_scalar_quadratic():
    cfg = FitConfig(adam_iterations=2000, adam_learning_rate=0.05)
    f = _quadratic(np.array([[2.0]]), np.array([6.0]))  # (x - 3)^2
    x, trace = adam_minimize(f, np.zeros(1), cfg)
    assert abs(x[0] - 3.0) < 1e-3
    assert trace["n_evals"] == 2001


def test_adam_best_so_far_monotone():
    cfg = FitConfig(adam_iterations=500, adam_learning_rate=0.02)
    x, trace = adam_minimize(_rosenbrock, np.array([-1.2, 1.0]), cfg)
    best = np.asarray(trace["best_costs"])
    assert np.all(np.diff(best) <= 0)
    assert trace["best_cost"] == best[-1]
    assert trace["best_cost"] <= _rosenbrock(np.array([-1.2, 1.0]))[0]


def test_adam_rejects_nonfinite_start():
    cfg = FitConfig(adam_iterations=10)
    with pytest.raises(ValueError):
        adam_minimize(lambda x: (np.nan, np.zeros(1)), np.zeros(1), cfg)


def test_lbfgs_spd_quadratic_converges_fast(rng):
    a = rng.standard_normal((5, 5))
    q = a.T @ a + 5.0 * np.eye(5)
    b = rng.standard_normal(5)
    cfg = FitConfig(lbfgs_max_iterations=50, lbfgs_grad_tol=1e-8,
                    lbfgs_ftol=0.0)
    f = _quadratic(q, b)
    x, trace = lbfgs_minimize(f, np.zeros(5), cfg)
    assert trace["stop_reason"] == "gradient_tolerance"
    assert trace["n_iterations"] <= 50
    # against the closed-form solution
    npt.assert_allclose(x, np.linalg.solve(q, b), rtol=1e-7, atol=1e-9)
    assert np.max(np.abs(f(x)[1])) < 1e-8


def test_lbfgs_starts_at_minimum(rng):
    q = np.eye(3)
    f = _quadratic(q, np.zeros(3))
    x, trace = lbfgs_minimize(f, np.zeros(3), FitConfig())
    npt.assert_array_equal(x, 0.0)
    assert trace["n_iterations"] == 0
    assert trace["stop_reason"] == "gradient_tolerance"


def test_lbfgs_rosenbrock():
    cfg = FitConfig(lbfgs_max_iterations=200, lbfgs_grad_tol=1e-10,
                    lbfgs_ftol=0.0)
    x, trace = lbfgs_minimize(_rosenbrock, np.array([-1.2, 1.0]), cfg)
    npt.assert_allclose(x, [1.0, 1.0], atol=1e-6)


def test_lbfgs_ftol_stagnation():
    # a flat-enough valley triggers the cost-stagnation stop
    cfg = FitConfig(lbfgs_max_iterations=5000, lbfgs_grad_tol=0.0,
                    lbfgs_ftol=1e-6)
    f = _quadratic(np.diag([1.0, 1e-6]), np.zeros(2))
    x, trace = lbfgs_minimize(f, np.array([1.0, 1.0]), cfg)
    assert trace["stop_reason"] == "cost_stagnation"
    assert trace["n_iterations"] < 5000


def test_lbfgs_best_iterate_under_line_search_failure():
    # a function whose gradient lies: constant cost, constant nonzero
    # gradient. No step can satisfy sufficient decrease.
    def f(x):
        return 1.0, np.ones_like(x)

    cfg = FitConfig(lbfgs_max_iterations=50, lbfgs_ftol=0.0)
    x, trace = lbfgs_minimize(f, np.zeros(3), cfg)
    assert trace["stop_reason"] == "line_search_failure"
    assert trace["best_cost"] == 1.0


def test_optimizers_deterministic():
    cfg = FitConfig(adam_iterations=200, adam_learning_rate=0.03,
                    lbfgs_max_iterations=100, lbfgs_ftol=0.0)
    x0 = np.array([-1.2, 1.0])
    a1, _ = adam_minimize(_rosenbrock, x0, cfg)
    a2, _ = adam_minimize(_rosenbrock, x0, cfg)
    npt.assert_array_equal(a1, a2)
    l1, _ = lbfgs_minimize(_rosenbrock, x0, cfg)
    l2, _ = lbfgs_minimize(_rosenbrock, x0, cfg)
    npt.assert_array_equal(l1, l2)
