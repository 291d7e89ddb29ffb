"""Forward sensitivity recursion for the LPV surrogate.

The output Jacobian J_k = d y_hat(k|k-1) / d theta is propagated
alongside the simulation:

    J_k     = H_x s_k + H_theta,
    s_{k+1} = F_x s_k + F_theta,      s_0 = 0,

where s_k = d x_hat_k / d theta is the state sensitivity and, writing
z_k = [x_hat_k; u_k] and v_i = M_i z_k,

    F_x     = A(rho) + sum_i v_i[:n_x]  (d rho_i / d x_hat),
    H_x     = C(rho) + sum_i v_i[n_x:]  (d rho_i / d x_hat),
    F_theta = [direct term: rho_i-scaled copies of z_k on the A_i/B_i
               entries] + sum_i v_i[:n_x] (d rho_i / d theta_eta),

and H_theta analogously on the C_i/D_i entries.  Initial-state
sensitivities are carried as n_x extra identity-initialized columns
that propagate through F_x only (the direct theta terms do not touch
them).

This module holds the plain-numpy single-step reference; the
trajectory-level ``simulate_with_sensitivities`` runs the compiled
kernel, which the tests check against this reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import DimensionMismatchError, DivergenceError
from .model import eval_scheduling


def scheduling_jacobians(net, x_hat, u):
    """Analytic Jacobians of the net output w.r.t. parameters and state.

    Parameters
    ----------
    net : SchedulingNet
    x_hat, u : 1-D arrays stacked into the net input

    Returns
    -------
    d_rho_d_theta_eta : (n_p, net.n_params) array
        Columns ordered layer by layer, weights row-major then bias —
        the net segment of the ParamLayout packing.
    d_rho_d_xhat : (n_p, len(x_hat)) array
    """
    x_hat = np.asarray(x_hat, dtype=np.float64).reshape(-1)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    a = np.concatenate([x_hat, u])
    if a.shape[0] != net.input_dim:
        raise DimensionMismatchError("[x_hat; u]", net.input_dim, a.shape[0])
    acts = [a]
    last = net.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = w @ a
        if b is not None:
            z = z + b
        a = z if k == last else np.tanh(z)
        acts.append(a)
    offs = []
    off = 0
    for w, b in zip(net.weights, net.biases):
        offs.append((off, -1 if b is None else off + w.size))
        off += w.size + (0 if b is None else b.size)
    n_p = net.output_dim
    d_theta = np.zeros((n_p, net.n_params))
    d_x = np.zeros((n_p, x_hat.shape[0]))
    for i in range(n_p):
        d = np.zeros(n_p)
        d[i] = 1.0
        for l in range(net.n_layers - 1, -1, -1):
            w = net.weights[l]
            w_off, b_off = offs[l]
            d_theta[i, w_off:w_off + w.size] = np.outer(d, acts[l]).ravel()
            if b_off >= 0:
                d_theta[i, b_off:b_off + w.shape[0]] = d
            d = w.T @ d
            if l > 0:
                d = d * (1.0 - acts[l] ** 2)
        d_x[i] = d[:x_hat.shape[0]]
    return d_theta, d_x


@dataclass
class SensitivityState:
    """State sensitivity d x_hat_k / d(parameters under differentiation).

    ``s`` has one column per model parameter (ParamLayout order),
    plus n_x_hat trailing columns for d/d x_hat_0 when ``include_x0``.
    """

    s: np.ndarray
    n_theta: int
    include_x0: bool

    @classmethod
    def initial(cls, model, include_x0=False):
        n_cols = model.n_theta + (model.n_x_hat if include_x0 else 0)
        s = np.zeros((model.n_x_hat, n_cols))
        if include_x0:
            s[:, model.n_theta:] = np.eye(model.n_x_hat)
        return cls(s, model.n_theta, include_x0)

    @property
    def n_cols(self):
        return self.s.shape[1]


def sensitivity_step(model, x_hat, u, state):
    """Advance the sensitivity recursion by one step.

    Returns
    -------
    j_row_block : (n_y, n_cols) array — the output Jacobian J_k
    s_next : SensitivityState
    y_hat : (n_y,) array
    x_hat_next : (n_x_hat,) array
    """
    lay = model.layout
    n_x, n_y, n_p = model.n_x_hat, model.n_y, model.n_p
    x_hat = np.asarray(x_hat, dtype=np.float64).reshape(-1)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if x_hat.shape[0] != n_x:
        raise DimensionMismatchError("x_hat", n_x, x_hat.shape[0])
    if u.shape[0] != model.n_u:
        raise DimensionMismatchError("u", model.n_u, u.shape[0])
    expected_cols = lay.n_theta + (n_x if state.include_x0 else 0)
    if state.s.shape != (n_x, expected_cols):
        raise DimensionMismatchError("state.s", (n_x, expected_cols), state.s.shape)

    z = np.concatenate([x_hat, u])
    t = model.matrices @ z                      # t[i] = M_i z
    if model.net is None:
        rho = np.zeros(0)
        d_te = np.zeros((0, 0))
        d_x = np.zeros((0, n_x))
    else:
        rho = eval_scheduling(model.net, x_hat, u)
        d_te, d_x = scheduling_jacobians(model.net, x_hat, u)
    out = t[0] + (rho @ t[1:] if n_p else 0.0)
    x_next = out[:n_x]
    y_hat = out[n_x:]

    m_rho_x = model.matrices[0, :, :n_x].copy()
    if n_p:
        m_rho_x += np.tensordot(rho, model.matrices[1:, :, :n_x], axes=1)
    fx = m_rho_x[:n_x]
    hx = m_rho_x[n_x:]
    for i in range(n_p):
        fx = fx + np.outer(t[i + 1, :n_x], d_x[i])
        hx = hx + np.outer(t[i + 1, n_x:], d_x[i])

    n_cols = state.n_cols
    f_th = np.zeros((n_x, n_cols))
    h_th = np.zeros((n_y, n_cols))
    for i in range(n_p + 1):
        coef = 1.0 if i == 0 else rho[i - 1]
        for r in range(n_x):
            o = lay.mat_row_off[i, r]
            f_th[r, o:o + lay.row_len[r]] = coef * z[:lay.row_len[r]]
        for ry in range(n_y):
            rr = n_x + ry
            o = lay.mat_row_off[i, rr]
            h_th[ry, o:o + lay.row_len[rr]] = coef * z[:lay.row_len[rr]]
    if n_p and lay.n_theta_net:
        net_cols = slice(lay.n_theta_mat, lay.n_theta)
        f_th[:, net_cols] = t[1:, :n_x].T @ d_te
        h_th[:, net_cols] = t[1:, n_x:].T @ d_te

    j_row_block = hx @ state.s + h_th
    s_next = fx @ state.s + f_th
    return (j_row_block, SensitivityState(s_next, state.n_theta, state.include_x0),
            y_hat, x_next)


def simulate_with_sensitivities(model, u_seq, x_hat_0, include_x0=False,
                                divergence_bound=1e9):
    """Simulate and propagate output Jacobians over a full input sequence.

    Parameters
    ----------
    model : LpvSsModel
    u_seq : (T, n_u) array
    x_hat_0 : (n_x_hat,) array
    include_x0 : bool
        Append n_x_hat columns holding d y_hat / d x_hat_0.

    Returns
    -------
    y_hat_seq : (T, n_y) array, bit-identical to ``simulate``
    j_seq : (T, n_y, n_cols) array
    """
    # plain writable copies: the kernels are compiled for one signature
    u_seq = np.array(u_seq, dtype=np.float64, order="C")
    if u_seq.ndim != 2 or u_seq.shape[1] != model.n_u:
        raise DimensionMismatchError("u_seq", ("T", model.n_u), u_seq.shape)
    x0 = np.array(x_hat_0, dtype=np.float64).reshape(-1)
    if x0.shape[0] != model.n_x_hat:
        raise DimensionMismatchError("x_hat_0", model.n_x_hat, x0.shape[0])
    lay = model.layout
    w3, b2, l_in, l_out, has_b = _kernels.net_arrays(model.net)
    y, jac, status, k_bad = _kernels.sens_kernel(
        np.array(model.matrices), model.n_x_hat, model.n_y,
        w3, b2, l_in, l_out, has_b,
        lay.mat_row_off, lay.row_len, lay.w_off, lay.b_off, lay.n_theta,
        bool(include_x0), u_seq, x0, float(divergence_bound))
    if status != 0:
        raise DivergenceError(int(k_bad), divergence_bound)
    return y, jac
