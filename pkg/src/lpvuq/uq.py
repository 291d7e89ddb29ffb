"""Laplace posterior approximation and Gaussian predictive bounds.

The parameter posterior around the MAP point is approximated as
N(theta_MAP, Sigma_ap) with the Gauss-Newton information matrix

    P = Sigma_o^{-1} + sum_tau J_tau^T Sigma_e^{-1} J_tau,

and Sigma_ap = P^{-1} is accumulated without ever forming P by the
rank-n_y Woodbury recursion

    S_{tau+1} = S_tau - S_tau J_tau^T (Sigma_e + J_tau S_tau J_tau^T)^{-1}
                J_tau S_tau,          S_0 = Sigma_o.

Pushing the posterior through the output Jacobian gives the per-step
predictive covariance Sigma_k = Sigma_e + J_k Sigma_ap J_k^T, i.e. an
aleatoric floor plus an epistemic term.  The posterior covers the model
parameters only; the fitted initial state is held at its MAP value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _jsonio
from .exceptions import DimensionMismatchError, SingularUpdateError
from .sensitivity import simulate_with_sensitivities


def _readonly(a):
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PosteriorApprox:
    """Gaussian parameter posterior N(mu_ap, sigma_ap).

    ``meta`` records how the approximation was built (data length and
    the Sigma_e / Sigma_o hyperparameters).
    """

    mu_ap: np.ndarray
    sigma_ap: np.ndarray
    meta: dict

    def __post_init__(self):
        mu = np.asarray(self.mu_ap, dtype=np.float64).reshape(-1)
        sig = np.asarray(self.sigma_ap, dtype=np.float64)
        n = mu.shape[0]
        if sig.shape != (n, n):
            raise DimensionMismatchError("sigma_ap", (n, n), sig.shape)
        scale = np.max(np.abs(sig)) or 1.0
        if np.max(np.abs(sig - sig.T)) > 1e-10 * scale:
            raise ValueError("sigma_ap must be symmetric")
        object.__setattr__(self, "mu_ap", _readonly(mu))
        object.__setattr__(self, "sigma_ap", _readonly(sig))

    @property
    def n_theta(self):
        return self.mu_ap.shape[0]


@dataclass(frozen=True)
class PredictiveTrajectory:
    """Per-step Gaussian predictive distribution along one input sequence.

    ``cov[k] = aleatoric + epistemic[k]`` entrywise; ``sd`` collects the
    per-channel standard deviations sqrt(diag(cov[k])); ``lo``/``hi``
    are mean -/+ n_sigma * sd.
    """

    mean: np.ndarray
    cov: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray
    sd: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n_sigma: float


def gauss_newton_hessian(j_seq, sigma_e, sigma_o_diag):
    """Information matrix Sigma_o^{-1} + sum_tau J_tau^T Sigma_e^{-1} J_tau.

    Parameters
    ----------
    j_seq : (N, n_y, n_theta) array (N may be 0)
    sigma_e : (n_y, n_y) SPD matrix
    sigma_o_diag : (n_theta,) positive vector, +inf meaning flat
    """
    sig = np.asarray(sigma_o_diag, dtype=np.float64).reshape(-1)
    n_theta = sig.shape[0]
    prec = np.where(np.isinf(sig), 0.0, 1.0 / sig)
    p = np.diag(prec)
    j_seq = np.asarray(j_seq, dtype=np.float64)
    if j_seq.size == 0:
        return p
    if j_seq.ndim != 3 or j_seq.shape[2] != n_theta:
        raise DimensionMismatchError("j_seq", ("N", "n_y", n_theta), j_seq.shape)
    sigma_e = np.asarray(sigma_e, dtype=np.float64)
    # J^T Se^-1 J = (L^T J)^T (L^T J) with Se^-1 = L L^T
    l_fac = np.linalg.cholesky(np.linalg.inv(sigma_e))
    g = np.einsum("ab,kbc->kac", l_fac.T, j_seq).reshape(-1, n_theta)
    p += g.T @ g
    return p


def woodbury_posterior_covariance(j_seq, sigma_e, sigma_o_diag):
    """Posterior covariance by recursive rank-n_y downdates of Sigma_o.

    Every step folds one output Jacobian into the running covariance
    through an n_y x n_y solve, so the n_theta x n_theta information
    matrix is never inverted.  Requires finite prior variances.

    Each downdate is applied in the symmetrized (Joseph) form
    (I - KJ) S (I - KJ)^T + K Sigma_e K^T, which equals the plain
    S - S J^T M^{-1} J S algebraically but stays positive semidefinite
    under roundoff — the naive form loses definiteness over thousands
    of ill-conditioned updates and then explodes.

    Raises
    ------
    SingularUpdateError
        If an inner solve is singular or produces non-finite values;
        carries the step index.
    """
    sig = np.asarray(sigma_o_diag, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(sig)) or np.any(sig <= 0):
        raise ValueError("sigma_o_diag must be finite and positive")
    sigma_e = np.asarray(sigma_e, dtype=np.float64)
    s = np.diag(sig)
    eye = np.eye(sig.shape[0])
    j_seq = np.asarray(j_seq, dtype=np.float64)
    if j_seq.size and (j_seq.ndim != 3 or j_seq.shape[2] != sig.shape[0]):
        raise DimensionMismatchError("j_seq", ("N", "n_y", sig.shape[0]), j_seq.shape)
    for tau in range(j_seq.shape[0] if j_seq.size else 0):
        j = j_seq[tau]
        g = s @ j.T
        m = sigma_e + j @ g
        try:
            k = np.linalg.solve(m, g.T).T
        except np.linalg.LinAlgError:
            raise SingularUpdateError(tau) from None
        a = eye - k @ j
        s = a @ s @ a.T + k @ sigma_e @ k.T
        if not np.all(np.isfinite(s)):
            raise SingularUpdateError(tau)
    return 0.5 * (s + s.T)


def laplace_fit(dims, theta_map, x_hat_0, data, prior, divergence_bound=1e9):
    """Laplace approximation at the MAP point.

    Simulates the model rebuilt from ``theta_map`` over the training
    input, collects the output Jacobians (model parameters only — the
    initial state stays fixed) and runs the Woodbury recursion.

    Returns
    -------
    PosteriorApprox with mu_ap = theta_map.
    """
    from .model import unpack_params

    theta_map = np.asarray(theta_map, dtype=np.float64).reshape(-1)
    model = unpack_params(theta_map, dims.template())
    if prior.n_theta != theta_map.shape[0]:
        raise DimensionMismatchError("prior", theta_map.shape[0], prior.n_theta)
    _, jac = simulate_with_sensitivities(model, data.u, x_hat_0,
                                         divergence_bound=divergence_bound)
    sigma_ap = woodbury_posterior_covariance(jac, prior.sigma_e, prior.sigma_o_diag)
    meta = {
        "n_samples": int(data.n_samples),
        "sigma_e": prior.sigma_e,
        "sigma_o_diag": prior.sigma_o_diag,
    }
    return PosteriorApprox(theta_map, sigma_ap, meta)


def predictive_trajectory(model, posterior, u_seq, x_hat_0, sigma_e, n_sigma=2.0):
    """Gaussian predictive distribution along an input sequence.

    Mean is the simulated response at the posterior mean; per step,
    cov = sigma_e + J_k sigma_ap J_k^T.  The epistemic term is
    symmetrized and eigenvalue-clipped at zero so the total variance
    never drops below the aleatoric floor.
    """
    if not n_sigma > 0:
        raise ValueError("n_sigma must be positive")
    if posterior.n_theta != model.n_theta:
        raise DimensionMismatchError("posterior", model.n_theta, posterior.n_theta)
    sigma_e = np.asarray(sigma_e, dtype=np.float64)
    if sigma_e.shape != (model.n_y, model.n_y):
        raise DimensionMismatchError("sigma_e", (model.n_y, model.n_y), sigma_e.shape)
    mean, jac = simulate_with_sensitivities(model, u_seq, x_hat_0)
    epi = (jac @ posterior.sigma_ap) @ np.swapaxes(jac, 1, 2)
    epi = 0.5 * (epi + np.swapaxes(epi, 1, 2))
    vals, vecs = np.linalg.eigh(epi)
    vals = np.clip(vals, 0.0, None)
    epi = (vecs * vals[:, None, :]) @ np.swapaxes(vecs, 1, 2)
    cov = sigma_e + epi
    sd = np.sqrt(np.diagonal(cov, axis1=1, axis2=2))
    lo = mean - n_sigma * sd
    hi = mean + n_sigma * sd
    return PredictiveTrajectory(mean, cov, sigma_e.copy(), epi, sd, lo, hi,
                                float(n_sigma))


def gaussian_marginal(mu, sigma_x, a, b, sigma_c):
    """Moments of y = A x + b + c with x ~ N(mu, sigma_x), c ~ N(0, sigma_c):
    mean A mu + b, covariance sigma_c + A sigma_x A^T."""
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    sigma_x = np.atleast_2d(np.asarray(sigma_x, dtype=np.float64))
    sigma_c = np.atleast_2d(np.asarray(sigma_c, dtype=np.float64))
    n_out, n_in = a.shape
    if mu.shape[0] != n_in:
        raise DimensionMismatchError("mu", n_in, mu.shape[0])
    if sigma_x.shape != (n_in, n_in):
        raise DimensionMismatchError("sigma_x", (n_in, n_in), sigma_x.shape)
    if b.shape[0] != n_out:
        raise DimensionMismatchError("b", n_out, b.shape[0])
    if sigma_c.shape != (n_out, n_out):
        raise DimensionMismatchError("sigma_c", (n_out, n_out), sigma_c.shape)
    return a @ mu + b, sigma_c + a @ sigma_x @ a.T


def _gammainc_lower_reg(a, x):
    """Regularized lower incomplete gamma P(a, x): series for small x,
    Lentz continued fraction for the upper tail otherwise."""
    if x < 0 or a <= 0:
        raise ValueError("need x >= 0 and a > 0")
    if x == 0.0:
        return 0.0
    log_pre = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        k = a
        for _ in range(500):
            k += 1.0
            term *= x / k
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return min(1.0, math.exp(log_pre) * total)
    # modified Lentz on the continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b if b != 0 else 1.0 / tiny
    h = d
    for i in range(1, 500):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    q = math.exp(log_pre) * h
    return max(0.0, 1.0 - q)


def chi2_cdf(x, n):
    """CDF of the chi-squared distribution with n degrees of freedom."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    if x <= 0:
        return 0.0
    return _gammainc_lower_reg(0.5 * n, 0.5 * x)


def chi2_inv_cdf(alpha, n):
    """Inverse chi-squared CDF by bisection, accurate to ~1e-10."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if n < 1:
        raise ValueError("n must be a positive integer")
    lo = 0.0
    hi = max(10.0, n + 10.0 * math.sqrt(2.0 * n))
    while chi2_cdf(hi, n) < alpha:
        hi *= 2.0
        if hi > 1e12:
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, n) < alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def confidence_region_test(y, y_hat, sigma_k, alpha):
    """Whether y falls inside the alpha-confidence ellipsoid
    N(y_hat, sigma_k): Mahalanobis distance vs the chi-squared quantile.

    Returns
    -------
    inside : bool
    mahalanobis : float, (y - y_hat)^T sigma_k^{-1} (y - y_hat)
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    sigma_k = np.atleast_2d(np.asarray(sigma_k, dtype=np.float64))
    n = y.shape[0]
    if y_hat.shape[0] != n:
        raise DimensionMismatchError("y_hat", n, y_hat.shape[0])
    if sigma_k.shape != (n, n):
        raise DimensionMismatchError("sigma_k", (n, n), sigma_k.shape)
    try:
        np.linalg.cholesky(sigma_k)
    except np.linalg.LinAlgError:
        raise ValueError("sigma_k must be positive definite") from None
    r = y - y_hat
    m = float(r @ np.linalg.solve(sigma_k, r))
    return m <= chi2_inv_cdf(alpha, n), m


def write_trajectory_csv(traj, path, ts, t0=0.0):
    """Plot-ready CSV: one row per step with columns
    t, then per channel y_hat, sd, lo, hi, aleatoric_sd, epistemic_sd."""
    import os
    import tempfile

    n_steps, n_y = traj.mean.shape
    al_sd = np.sqrt(np.diag(traj.aleatoric))
    epi_sd = np.sqrt(np.clip(np.diagonal(traj.epistemic, axis1=1, axis2=2), 0.0, None))
    cols = ["t"]
    for i in range(n_y):
        cols += [f"y_hat{i + 1}", f"sd{i + 1}", f"lo{i + 1}", f"hi{i + 1}",
                 f"aleatoric_sd{i + 1}", f"epistemic_sd{i + 1}"]
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for k in range(n_steps):
                row = [t0 + k * ts]
                for i in range(n_y):
                    row += [traj.mean[k, i], traj.sd[k, i], traj.lo[k, i],
                            traj.hi[k, i], al_sd[i], epi_sd[k, i]]
                fh.write(",".join("%.17g" % v for v in row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_trajectory_csv(path):
    """Parse a CSV written by ``write_trajectory_csv``.

    Returns a dict of arrays: t (T,), mean/sd/lo/hi/epistemic_sd
    (T, n_y) and aleatoric_sd (n_y,).
    """
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.split(",") for line in fh.read().splitlines() if line]
    if not header or header[0] != "t" or (len(header) - 1) % 6 != 0:
        raise ValueError(f"{path}: not a trajectory file")
    n_y = (len(header) - 1) // 6
    data = np.array(rows, dtype=np.float64)
    if data.size == 0:
        data = data.reshape(0, len(header))
    base = 1 + 6 * np.arange(n_y)
    out = {
        "t": data[:, 0],
        "mean": data[:, base],
        "sd": data[:, base + 1],
        "lo": data[:, base + 2],
        "hi": data[:, base + 3],
        "aleatoric_sd": data[0, base + 4] if data.shape[0] else np.zeros(n_y),
        "epistemic_sd": data[:, base + 5],
    }
    return out


def save_posterior(posterior, path):
    """Write a PosteriorApprox as canonical JSON (row-major sigma_ap)."""
    doc = {
        "format": "lpvuq-posterior",
        "version": 1,
        "mu_ap": posterior.mu_ap,
        "sigma_ap": posterior.sigma_ap,
        "meta": posterior.meta,
    }
    _jsonio.dump(doc, path)


def load_posterior(path):
    """Read a posterior document written by ``save_posterior``."""
    doc = _jsonio.load(path)
    if doc.get("format") != "lpvuq-posterior":
        raise ValueError(f"{path}: not a posterior document")
    meta = doc.get("meta") or {}
    for key in ("sigma_e", "sigma_o_diag"):
        if key in meta and meta[key] is not None:
            meta[key] = np.array(meta[key], dtype=np.float64)
    return PosteriorApprox(np.array(doc["mu_ap"], dtype=np.float64),
                           np.array(doc["sigma_ap"], dtype=np.float64), meta)
