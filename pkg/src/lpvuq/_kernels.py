"""Compiled inner loops: simulation, forward sensitivities, cost/gradient.

All three entry points share the single-step evaluation ``_point`` so
that the simulated output trajectory is bit-identical no matter which
kernel produced it.  The network is carried in padded arrays
(w3[l, r, c], b2[l, r] with per-layer dims in l_in/l_out and a bias
mask) so a model with no net (n_p = 0) is just the L = 0 case.

State-sensitivity matrices are stored as (n_x, n_cols) with the column
layout of ParamLayout, optionally extended by n_x identity-initialized
columns for the initial-state sensitivity.
"""

import numpy as np
from numba import njit


def net_arrays(net):
    """Padded weight/bias arrays for a SchedulingNet (or None)."""
    if net is None:
        return (np.zeros((0, 1, 1)), np.zeros((0, 1)),
                np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.int64))
    n_layers = net.n_layers
    max_in = max(w.shape[1] for w in net.weights)
    max_out = max(w.shape[0] for w in net.weights)
    w3 = np.zeros((n_layers, max_out, max_in))
    b2 = np.zeros((n_layers, max_out))
    l_in = np.zeros(n_layers, dtype=np.int64)
    l_out = np.zeros(n_layers, dtype=np.int64)
    has_b = np.zeros(n_layers, dtype=np.int64)
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        l_out[l], l_in[l] = w.shape
        w3[l, :w.shape[0], :w.shape[1]] = w
        if b is not None:
            b2[l, :b.shape[0]] = b
            has_b[l] = 1
    return w3, b2, l_in, l_out, has_b


def fill_net_arrays(theta, lay, w3, b2):
    """Load packed net parameters into preallocated padded arrays."""
    for l, (rows, cols) in enumerate(lay.layer_shapes):
        o = lay.w_off[l]
        w3[l, :rows, :cols] = theta[o:o + rows * cols].reshape(rows, cols)
        if lay.has_bias[l]:
            o = lay.b_off[l]
            b2[l, :rows] = theta[o:o + rows]


def blocks_from_theta(theta, lay):
    """Stacked affine blocks from a packed parameter vector."""
    n_br = lay.n_x_hat + lay.n_y
    n_bc = lay.n_x_hat + lay.n_u
    blocks = np.zeros((lay.n_p + 1, n_br, n_bc))
    for i in range(lay.n_p + 1):
        for r in range(n_br):
            o = lay.mat_row_off[i, r]
            blocks[i, r, :lay.row_len[r]] = theta[o:o + lay.row_len[r]]
    return blocks


@njit(cache=True)
def _point(blocks, n_x, w3, b2, l_in, l_out, has_b, x, u,
           a_stack, rho_buf, t_buf, out_buf):
    """Evaluate the scheduling net and the affine map at one (x, u).

    Fills a_stack (layer activations, a_stack[0] = [x; u]), rho_buf,
    t_buf[i] = M_i [x; u], and out_buf = M(rho) [x; u].
    """
    n_p = blocks.shape[0] - 1
    n_br = blocks.shape[1]
    n_bc = blocks.shape[2]
    n_u = n_bc - n_x
    n_layers = w3.shape[0]
    if n_layers > 0:
        for c in range(n_x):
            a_stack[0, c] = x[c]
        for c in range(n_u):
            a_stack[0, n_x + c] = u[c]
        for l in range(n_layers):
            for r in range(l_out[l]):
                acc = 0.0
                for c in range(l_in[l]):
                    acc += w3[l, r, c] * a_stack[l, c]
                if has_b[l] == 1:
                    acc += b2[l, r]
                if l < n_layers - 1:
                    a_stack[l + 1, r] = np.tanh(acc)
                else:
                    a_stack[l + 1, r] = acc
        for i in range(n_p):
            rho_buf[i] = a_stack[n_layers, i]
    for i in range(n_p + 1):
        for r in range(n_br):
            acc = 0.0
            for c in range(n_x):
                acc += blocks[i, r, c] * x[c]
            for c in range(n_u):
                acc += blocks[i, r, n_x + c] * u[c]
            t_buf[i, r] = acc
    for r in range(n_br):
        acc = t_buf[0, r]
        for i in range(n_p):
            acc += rho_buf[i] * t_buf[i + 1, r]
        out_buf[r] = acc


@njit(cache=True)
def _state_ok(out_buf, n_x, bound):
    for r in range(n_x):
        v = out_buf[r]
        if not np.isfinite(v) or abs(v) > bound:
            return False
    return True


@njit(cache=True)
def simulate_kernel(blocks, n_x, n_y, w3, b2, l_in, l_out, has_b,
                    u_seq, x0, bound):
    horizon = u_seq.shape[0]
    n_p = blocks.shape[0] - 1
    max_dim = max(w3.shape[1], w3.shape[2])
    n_layers = w3.shape[0]
    y = np.zeros((horizon, n_y))
    xs = np.zeros((horizon + 1, n_x))
    rho_seq = np.zeros((horizon, n_p))
    a_stack = np.zeros((n_layers + 1, max_dim))
    rho_buf = np.zeros(n_p)
    t_buf = np.zeros((n_p + 1, n_x + n_y))
    out_buf = np.zeros(n_x + n_y)
    x = x0.copy()
    for k in range(horizon):
        for r in range(n_x):
            xs[k, r] = x[r]
        _point(blocks, n_x, w3, b2, l_in, l_out, has_b, x, u_seq[k],
               a_stack, rho_buf, t_buf, out_buf)
        for i in range(n_p):
            rho_seq[k, i] = rho_buf[i]
        for r in range(n_y):
            y[k, r] = out_buf[n_x + r]
        if not _state_ok(out_buf, n_x, bound):
            return y, xs, rho_seq, 1, k
        for r in range(n_x):
            x[r] = out_buf[r]
    for r in range(n_x):
        xs[horizon, r] = x[r]
    return y, xs, rho_seq, 0, -1


@njit(cache=True)
def _backprop(w3, b2, l_in, l_out, has_b, w_off, b_off, net0,
              a_stack, d_te, d_x, delta, delta2, n_x):
    """Jacobians of every net output w.r.t. net parameters and [x; u].

    d_te[i, :] gets d rho_i / d theta_eta (columns relative to net0);
    d_x[i, :] gets d rho_i / d x_hat.  Every entry is overwritten.
    """
    n_layers = w3.shape[0]
    n_p = d_te.shape[0]
    for i in range(n_p):
        for r in range(l_out[n_layers - 1]):
            delta[r] = 1.0 if r == i else 0.0
        for l in range(n_layers - 1, -1, -1):
            ni = l_in[l]
            no = l_out[l]
            wo = w_off[l] - net0
            for r in range(no):
                dr = delta[r]
                base = wo + r * ni
                for c in range(ni):
                    d_te[i, base + c] = dr * a_stack[l, c]
            if b_off[l] >= 0:
                bo = b_off[l] - net0
                for r in range(no):
                    d_te[i, bo + r] = delta[r]
            for c in range(ni):
                acc = 0.0
                for r in range(no):
                    acc += w3[l, r, c] * delta[r]
                delta2[c] = acc
            if l > 0:
                for c in range(ni):
                    a = a_stack[l, c]
                    delta2[c] *= 1.0 - a * a
            for c in range(ni):
                delta[c] = delta2[c]
        for c in range(n_x):
            d_x[i, c] = delta[c]


@njit(cache=True)
def _step_sens_terms(blocks, n_x, n_y, rho_buf, t_buf, d_te, d_x,
                     mat_row_off, row_len, zvec, net0, n_te,
                     fx, hx, f_th, h_th):
    """Build F_x, H_x and the theta-direct terms F_theta, H_theta.

    f_th/h_th have a fixed sparsity pattern, so every touched entry is
    overwritten each step and the rest stays zero from initialization.
    """
    n_p = blocks.shape[0] - 1
    n_br = n_x + n_y
    for r in range(n_br):
        for c in range(n_x):
            acc = blocks[0, r, c]
            for i in range(n_p):
                acc += rho_buf[i] * blocks[i + 1, r, c]
            if r < n_x:
                fx[r, c] = acc
            else:
                hx[r - n_x, c] = acc
    for i in range(n_p):
        for r in range(n_x):
            ti = t_buf[i + 1, r]
            for c in range(n_x):
                fx[r, c] += ti * d_x[i, c]
        for r in range(n_y):
            ti = t_buf[i + 1, n_x + r]
            for c in range(n_x):
                hx[r, c] += ti * d_x[i, c]
    for i in range(n_p + 1):
        coef = 1.0 if i == 0 else rho_buf[i - 1]
        for r in range(n_x):
            o = mat_row_off[i, r]
            for c in range(row_len[r]):
                f_th[r, o + c] = coef * zvec[c]
        for ry in range(n_y):
            rr = n_x + ry
            o = mat_row_off[i, rr]
            for c in range(row_len[rr]):
                h_th[ry, o + c] = coef * zvec[c]
    if n_te > 0:
        for r in range(n_x):
            for c in range(n_te):
                acc = 0.0
                for i in range(n_p):
                    acc += t_buf[i + 1, r] * d_te[i, c]
                f_th[r, net0 + c] = acc
        for r in range(n_y):
            for c in range(n_te):
                acc = 0.0
                for i in range(n_p):
                    acc += t_buf[i + 1, n_x + r] * d_te[i, c]
                h_th[r, net0 + c] = acc


@njit(cache=True)
def sens_kernel(blocks, n_x, n_y, w3, b2, l_in, l_out, has_b,
                mat_row_off, row_len, w_off, b_off, n_theta, include_x0,
                u_seq, x0, bound):
    horizon = u_seq.shape[0]
    n_p = blocks.shape[0] - 1
    n_bc = blocks.shape[2]
    n_u = n_bc - n_x
    n_layers = w3.shape[0]
    max_dim = max(w3.shape[1], w3.shape[2])
    n_cols = n_theta + n_x if include_x0 else n_theta
    net0 = w_off[0] if n_layers > 0 else n_theta
    n_te = n_theta - net0

    y = np.zeros((horizon, n_y))
    jac = np.zeros((horizon, n_y, n_cols))
    a_stack = np.zeros((n_layers + 1, max_dim))
    rho_buf = np.zeros(n_p)
    t_buf = np.zeros((n_p + 1, n_x + n_y))
    out_buf = np.zeros(n_x + n_y)
    zvec = np.zeros(n_bc)
    d_te = np.zeros((max(n_p, 1), max(n_te, 1)))
    d_x = np.zeros((max(n_p, 1), n_x))
    delta = np.zeros(max_dim)
    delta2 = np.zeros(max_dim)
    fx = np.zeros((n_x, n_x))
    hx = np.zeros((n_y, n_x))
    f_th = np.zeros((n_x, n_cols))
    h_th = np.zeros((n_y, n_cols))
    s = np.zeros((n_x, n_cols))
    s_new = np.zeros((n_x, n_cols))
    if include_x0:
        for r in range(n_x):
            s[r, n_theta + r] = 1.0

    x = x0.copy()
    for k in range(horizon):
        _point(blocks, n_x, w3, b2, l_in, l_out, has_b, x, u_seq[k],
               a_stack, rho_buf, t_buf, out_buf)
        for r in range(n_y):
            y[k, r] = out_buf[n_x + r]
        for c in range(n_x):
            zvec[c] = x[c]
        for c in range(n_u):
            zvec[n_x + c] = u_seq[k, c]
        if n_layers > 0:
            _backprop(w3, b2, l_in, l_out, has_b, w_off, b_off, net0,
                      a_stack, d_te, d_x, delta, delta2, n_x)
        _step_sens_terms(blocks, n_x, n_y, rho_buf, t_buf, d_te, d_x,
                         mat_row_off, row_len, zvec, net0, n_te,
                         fx, hx, f_th, h_th)
        for r in range(n_y):
            for c in range(n_cols):
                jac[k, r, c] = h_th[r, c]
            for j in range(n_x):
                hv = hx[r, j]
                for c in range(n_cols):
                    jac[k, r, c] += hv * s[j, c]
        if not _state_ok(out_buf, n_x, bound):
            return y, jac, 1, k
        for r in range(n_x):
            for c in range(n_cols):
                s_new[r, c] = f_th[r, c]
            for j in range(n_x):
                fv = fx[r, j]
                for c in range(n_cols):
                    s_new[r, c] += fv * s[j, c]
        s, s_new = s_new, s
        for r in range(n_x):
            x[r] = out_buf[r]
    return y, jac, 0, -1


@njit(cache=True)
def cost_grad_kernel(blocks, n_x, n_y, w3, b2, l_in, l_out, has_b,
                     mat_row_off, row_len, w_off, b_off, n_theta, include_x0,
                     u_seq, x0, y_meas, sigma_e_inv, bound):
    """Data-misfit term 0.5 sum ||y - y_hat||^2_{Sigma_e^-1} and its
    gradient w.r.t. [theta; x_hat_0] by adjoint accumulation.

    The forward sweep is the plain simulation (outputs and cost are
    bit-identical to simulate_kernel's); the backward sweep propagates
    one n_x adjoint vector instead of n_x x n_cols sensitivities, which
    makes the gradient O(n_theta) instead of O(n_theta^2) per step.
    Stage values are recomputed from the stored state trajectory.
    """
    horizon = u_seq.shape[0]
    n_p = blocks.shape[0] - 1
    n_bc = blocks.shape[2]
    n_u = n_bc - n_x
    n_layers = w3.shape[0]
    max_dim = max(w3.shape[1], w3.shape[2])
    n_cols = n_theta + n_x if include_x0 else n_theta

    grad = np.zeros(n_cols)
    a_stack = np.zeros((n_layers + 1, max_dim))
    rho_buf = np.zeros(n_p)
    t_buf = np.zeros((n_p + 1, n_x + n_y))
    out_buf = np.zeros(n_x + n_y)
    eps = np.zeros(n_y)
    weps = np.zeros(n_y)
    xs = np.zeros((horizon, n_x))
    omega = np.zeros((horizon, n_y))      # -Sigma_e^{-1} eps, per step
    kappa = np.zeros(max(n_p, 1))
    lam = np.zeros(n_x)
    lam_new = np.zeros(n_x)
    delta = np.zeros(max_dim)
    delta2 = np.zeros(max_dim)

    cost = 0.0
    x = x0.copy()
    for k in range(horizon):
        for r in range(n_x):
            xs[k, r] = x[r]
        _point(blocks, n_x, w3, b2, l_in, l_out, has_b, x, u_seq[k],
               a_stack, rho_buf, t_buf, out_buf)
        for r in range(n_y):
            eps[r] = y_meas[k, r] - out_buf[n_x + r]
        for r in range(n_y):
            acc = 0.0
            for r2 in range(n_y):
                acc += sigma_e_inv[r, r2] * eps[r2]
            weps[r] = acc
        for r in range(n_y):
            cost += 0.5 * eps[r] * weps[r]
            omega[k, r] = -weps[r]
        if not _state_ok(out_buf, n_x, bound):
            return cost, grad, 1, k
        for r in range(n_x):
            x[r] = out_buf[r]

    # backward: grad += F_theta^T lam + H_theta^T omega per step,
    # lam <- F_x^T lam + H_x^T omega, with lam the adjoint of x_{k+1}
    for k in range(horizon - 1, -1, -1):
        _point(blocks, n_x, w3, b2, l_in, l_out, has_b, xs[k], u_seq[k],
               a_stack, rho_buf, t_buf, out_buf)
        # kappa_i: adjoint of rho_i through both the state and output maps
        for i in range(n_p):
            acc = 0.0
            for r in range(n_x):
                acc += t_buf[i + 1, r] * lam[r]
            for r in range(n_y):
                acc += t_buf[i + 1, n_x + r] * omega[k, r]
            kappa[i] = acc
        # matrix-parameter columns: d out_row / d theta = coef_i * [x; u]
        for i in range(n_p + 1):
            coef = 1.0 if i == 0 else rho_buf[i - 1]
            for r in range(n_x):
                o = mat_row_off[i, r]
                cl = coef * lam[r]
                for c in range(row_len[r]):
                    zc = xs[k, c] if c < n_x else u_seq[k, c - n_x]
                    grad[o + c] += cl * zc
            for ry in range(n_y):
                rr = n_x + ry
                o = mat_row_off[i, rr]
                cw = coef * omega[k, ry]
                for c in range(row_len[rr]):
                    zc = xs[k, c] if c < n_x else u_seq[k, c - n_x]
                    grad[o + c] += cw * zc
        # state adjoint through the affine maps: A(rho)^T lam + C(rho)^T omega
        for j in range(n_x):
            acc = 0.0
            for r in range(n_x):
                ar = blocks[0, r, j]
                for i in range(n_p):
                    ar += rho_buf[i] * blocks[i + 1, r, j]
                acc += ar * lam[r]
            for r in range(n_y):
                cr = blocks[0, n_x + r, j]
                for i in range(n_p):
                    cr += rho_buf[i] * blocks[i + 1, n_x + r, j]
                acc += cr * omega[k, r]
            lam_new[j] = acc
        # net parameters and the scheduling feedback: one backprop pass
        # seeded with kappa adds d(kappa . rho)/d theta_eta to grad and
        # d(kappa . rho)/d x_hat to the state adjoint
        if n_layers > 0:
            for r in range(l_out[n_layers - 1]):
                delta[r] = kappa[r] if r < n_p else 0.0
            for l in range(n_layers - 1, -1, -1):
                ni = l_in[l]
                no = l_out[l]
                wo = w_off[l]
                for r in range(no):
                    dr = delta[r]
                    base = wo + r * ni
                    for c in range(ni):
                        grad[base + c] += dr * a_stack[l, c]
                if b_off[l] >= 0:
                    bo = b_off[l]
                    for r in range(no):
                        grad[bo + r] += delta[r]
                for c in range(ni):
                    acc = 0.0
                    for r in range(no):
                        acc += w3[l, r, c] * delta[r]
                    delta2[c] = acc
                if l > 0:
                    for c in range(ni):
                        a = a_stack[l, c]
                        delta2[c] *= 1.0 - a * a
                for c in range(ni):
                    delta[c] = delta2[c]
            for j in range(n_x):
                lam_new[j] += delta[j]
        lam, lam_new = lam_new, lam
    if include_x0:
        for r in range(n_x):
            grad[n_theta + r] = lam[r]
    return cost, grad, 0, -1


def warmup():
    """Trigger compilation of all kernels on a tiny model."""
    blocks = np.zeros((2, 2, 2))
    blocks[0, 0, 0] = 0.5
    w3 = np.zeros((2, 2, 2))
    b2 = np.zeros((2, 2))
    l_in = np.array([2, 2], dtype=np.int64)
    l_out = np.array([2, 1], dtype=np.int64)
    has_b = np.array([1, 0], dtype=np.int64)
    u = np.zeros((3, 1))
    x0 = np.zeros(1)
    mat_row_off = np.array([[0, 2], [3, 5]], dtype=np.int64)
    row_len = np.array([2, 1], dtype=np.int64)
    w_off = np.array([6, 12], dtype=np.int64)
    b_off = np.array([10, -1], dtype=np.int64)
    y_meas = np.zeros((3, 1))
    sei = np.eye(1)
    simulate_kernel(blocks, 1, 1, w3, b2, l_in, l_out, has_b, u, x0, 1e9)
    sens_kernel(blocks, 1, 1, w3, b2, l_in, l_out, has_b, mat_row_off,
                row_len, w_off, b_off, 14, True, u, x0, 1e9)
    cost_grad_kernel(blocks, 1, 1, w3, b2, l_in, l_out, has_b, mat_row_off,
                     row_len, w_off, b_off, 14, True, u, x0, y_meas, sei, 1e9)
