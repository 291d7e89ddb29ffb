"""Affine LPV state-space surrogate with a neural scheduling map.

Model class::

    x+ = A(rho) x + B(rho) u,    y = C(rho) x + D(rho) u,
    rho = eta(x, u)

where the matrices depend affinely on the scheduling vector,
M(rho) = M_0 + sum_i rho_i M_i, and each block M_i of shape
(n_x_hat + n_y) x (n_x_hat + n_u) is partitioned as [[A_i, B_i],
[C_i, D_i]].  The scheduling map eta is a small fully connected
network fed with [x; u], so the model schedules itself from its own
state and input.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import _jsonio
from .exceptions import DimensionMismatchError, DivergenceError, NonFiniteActivationError


def _readonly(a):
    arr = np.array(a, dtype=np.float64, order="C")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SchedulingNet:
    """Fully connected scheduling map rho = eta([x_hat; u]).

    Hidden layers apply tanh; the output layer is linear.  A ``None``
    entry in ``biases`` marks a bias-free layer.  The factory methods
    omit the output-layer bias by default: a constant offset on rho is
    redundant with the constant matrix block M_0, so dropping it keeps
    the parametrization identifiable.

    Parameters
    ----------
    weights : sequence of (n_out, n_in) arrays
    biases : sequence of (n_out,) arrays, entries may be None
    activation : str
        Hidden-layer activation; only ``"tanh"`` is supported.
    """

    weights: tuple
    biases: tuple
    activation: str = "tanh"

    def __post_init__(self):
        ws = tuple(_readonly(w) for w in self.weights)
        bs = tuple(None if b is None else _readonly(b) for b in self.biases)
        if len(ws) == 0:
            raise ValueError("SchedulingNet needs at least one layer")
        if len(ws) != len(bs):
            raise DimensionMismatchError("biases", len(ws), len(bs))
        for k, w in enumerate(ws):
            if w.ndim != 2:
                raise DimensionMismatchError(f"weights[{k}].ndim", 2, w.ndim)
            if bs[k] is not None and bs[k].shape != (w.shape[0],):
                raise DimensionMismatchError(f"biases[{k}]", (w.shape[0],), bs[k].shape)
            if k > 0 and w.shape[1] != ws[k - 1].shape[0]:
                raise DimensionMismatchError(f"weights[{k}].cols", ws[k - 1].shape[0], w.shape[1])
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    @property
    def layer_dims(self):
        return (self.input_dim,) + tuple(w.shape[0] for w in self.weights)

    @property
    def has_bias(self):
        return tuple(b is not None for b in self.biases)

    @property
    def n_params(self):
        n = 0
        for w, b in zip(self.weights, self.biases):
            n += w.size + (0 if b is None else b.size)
        return n

    @classmethod
    def zeros(cls, layer_dims, output_bias=False):
        """All-zero network with the given (in, h1, ..., out) layer sizes."""
        ws, bs = [], []
        n_layers = len(layer_dims) - 1
        for k in range(n_layers):
            ws.append(np.zeros((layer_dims[k + 1], layer_dims[k])))
            last = k == n_layers - 1
            bs.append(np.zeros(layer_dims[k + 1]) if (not last or output_bias) else None)
        return cls(tuple(ws), tuple(bs))

    @classmethod
    def xavier(cls, layer_dims, rng, output_bias=False):
        """Xavier-uniform weights, zero biases (hidden layers only by default)."""
        ws, bs = [], []
        n_layers = len(layer_dims) - 1
        for k in range(n_layers):
            fan_in, fan_out = layer_dims[k], layer_dims[k + 1]
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
            last = k == n_layers - 1
            bs.append(np.zeros(fan_out) if (not last or output_bias) else None)
        return cls(tuple(ws), tuple(bs))


def eval_scheduling(net, x_hat, u):
    """Forward pass of the scheduling map on the stacked input [x_hat; u].

    Parameters
    ----------
    net : SchedulingNet
    x_hat, u : 1-D arrays whose lengths sum to ``net.input_dim``

    Returns
    -------
    rho : (net.output_dim,) array

    Raises
    ------
    NonFiniteActivationError
        If any intermediate activation is NaN or infinite; carries the
        zero-based layer index.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64).reshape(-1)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    a = np.concatenate([x_hat, u])
    if a.shape[0] != net.input_dim:
        raise DimensionMismatchError("[x_hat; u]", net.input_dim, a.shape[0])
    last = net.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = w @ a
        if b is not None:
            z = z + b
        a = z if k == last else np.tanh(z)
        if not np.all(np.isfinite(a)):
            raise NonFiniteActivationError(k)
    return a


@dataclass(frozen=True)
class LpvSsModel:
    """Self-scheduled LPV state-space model.

    Parameters
    ----------
    n_x_hat, n_u, n_y, n_p : int
        State, input, output and scheduling dimensions.
    matrices : (n_p + 1, n_x_hat + n_y, n_x_hat + n_u) array
        Stacked affine blocks M_0 .. M_{n_p}.
    d_zero : bool
        When true the D blocks are structurally zero: they must read as
        zero in ``matrices`` and contribute no packed parameters.
    net : SchedulingNet or None
        The scheduling map; must be None exactly when n_p = 0.
    """

    n_x_hat: int
    n_u: int
    n_y: int
    n_p: int
    matrices: np.ndarray
    d_zero: bool = True
    net: SchedulingNet | None = None

    def __post_init__(self):
        for name in ("n_x_hat", "n_u", "n_y"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_p < 0:
            raise ValueError("n_p must be nonnegative")
        shape = (self.n_p + 1, self.n_x_hat + self.n_y, self.n_x_hat + self.n_u)
        mats = _readonly(self.matrices)
        if mats.shape != shape:
            raise DimensionMismatchError("matrices", shape, mats.shape)
        if self.d_zero and np.any(mats[:, self.n_x_hat:, self.n_x_hat:] != 0.0):
            raise ValueError("d_zero model requires zero D blocks")
        if self.n_p == 0:
            if self.net is not None:
                raise ValueError("n_p = 0 model must not carry a scheduling net")
        else:
            if self.net is None:
                raise ValueError("n_p > 0 model requires a scheduling net")
            if self.net.input_dim != self.n_x_hat + self.n_u:
                raise DimensionMismatchError(
                    "net.input_dim", self.n_x_hat + self.n_u, self.net.input_dim)
            if self.net.output_dim != self.n_p:
                raise DimensionMismatchError("net.output_dim", self.n_p, self.net.output_dim)
        object.__setattr__(self, "matrices", mats)

    @cached_property
    def layout(self):
        return ParamLayout.from_model(self)

    @property
    def n_theta(self):
        return self.layout.n_theta

    def block(self, i):
        """The raw affine block M_i."""
        return self.matrices[i]


@dataclass(frozen=True)
class ParamLayout:
    """Packing layout of the flat parameter vector.

    Order: row-wise entries of M_0, M_1, ..., M_{n_p} — on the C/D rows
    the D columns are skipped when ``d_zero`` — followed by network
    parameters layer by layer (weight matrix row-major, then the bias
    when the layer has one).

    ``mat_row_off[i, r]`` is the vector offset of row ``r`` of block
    ``i``; ``row_len[r]`` the packed length of that row.  ``w_off[l]``
    / ``b_off[l]`` locate layer ``l``'s weights and bias (-1 when the
    layer is bias-free).
    """

    n_x_hat: int
    n_u: int
    n_y: int
    n_p: int
    d_zero: bool
    row_len: np.ndarray
    mat_row_off: np.ndarray
    n_theta_mat: int
    layer_shapes: tuple
    has_bias: tuple
    w_off: np.ndarray
    b_off: np.ndarray
    n_theta: int

    @classmethod
    def from_dims(cls, n_x_hat, n_u, n_y, n_p, d_zero, layer_shapes=(), has_bias=()):
        n_br = n_x_hat + n_y
        n_bc = n_x_hat + n_u
        row_len = np.full(n_br, n_bc, dtype=np.int64)
        if d_zero:
            row_len[n_x_hat:] = n_x_hat
        mat_row_off = np.zeros((n_p + 1, n_br), dtype=np.int64)
        off = 0
        for i in range(n_p + 1):
            for r in range(n_br):
                mat_row_off[i, r] = off
                off += row_len[r]
        n_theta_mat = off
        n_layers = len(layer_shapes)
        w_off = np.zeros(n_layers, dtype=np.int64)
        b_off = np.zeros(n_layers, dtype=np.int64)
        for l, (rows, cols) in enumerate(layer_shapes):
            w_off[l] = off
            off += rows * cols
            if has_bias[l]:
                b_off[l] = off
                off += rows
            else:
                b_off[l] = -1
        return cls(n_x_hat, n_u, n_y, n_p, d_zero, row_len, mat_row_off, n_theta_mat,
                   tuple(layer_shapes), tuple(has_bias), w_off, b_off, off)

    @classmethod
    def from_model(cls, model):
        if model.net is None:
            shapes, has_bias = (), ()
        else:
            shapes = tuple(w.shape for w in model.net.weights)
            has_bias = model.net.has_bias
        return cls.from_dims(model.n_x_hat, model.n_u, model.n_y, model.n_p,
                             model.d_zero, shapes, has_bias)

    @property
    def n_theta_net(self):
        return self.n_theta - self.n_theta_mat


def pack_params(model):
    """Flatten a model into its parameter vector (see ParamLayout)."""
    lay = model.layout
    theta = np.empty(lay.n_theta)
    n_br = model.n_x_hat + model.n_y
    for i in range(model.n_p + 1):
        for r in range(n_br):
            o = lay.mat_row_off[i, r]
            theta[o:o + lay.row_len[r]] = model.matrices[i, r, :lay.row_len[r]]
    if model.net is not None:
        for l, (w, b) in enumerate(zip(model.net.weights, model.net.biases)):
            theta[lay.w_off[l]:lay.w_off[l] + w.size] = w.ravel()
            if b is not None:
                theta[lay.b_off[l]:lay.b_off[l] + b.size] = b
    return theta


def unpack_params(theta, like):
    """Rebuild a model with the structure of ``like`` from a flat vector."""
    lay = like.layout
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.shape[0] != lay.n_theta:
        raise DimensionMismatchError("theta", lay.n_theta, theta.shape[0])
    n_br = like.n_x_hat + like.n_y
    n_bc = like.n_x_hat + like.n_u
    mats = np.zeros((like.n_p + 1, n_br, n_bc))
    for i in range(like.n_p + 1):
        for r in range(n_br):
            o = lay.mat_row_off[i, r]
            mats[i, r, :lay.row_len[r]] = theta[o:o + lay.row_len[r]]
    net = None
    if like.net is not None:
        ws, bs = [], []
        for l, (rows, cols) in enumerate(lay.layer_shapes):
            ws.append(theta[lay.w_off[l]:lay.w_off[l] + rows * cols].reshape(rows, cols))
            bs.append(theta[lay.b_off[l]:lay.b_off[l] + rows] if lay.has_bias[l] else None)
        net = SchedulingNet(tuple(ws), tuple(bs), like.net.activation)
    return LpvSsModel(like.n_x_hat, like.n_u, like.n_y, like.n_p, mats, like.d_zero, net)


def assemble_matrices(model, rho):
    """Evaluate the affine family at a scheduling point.

    Returns
    -------
    (A, B, C, D) : arrays of shapes (n_x, n_x), (n_x, n_u), (n_y, n_x),
        (n_y, n_u) with M(rho) = M_0 + sum_i rho_i M_i; D is zero when
        the model is d_zero.
    """
    rho = np.asarray(rho, dtype=np.float64).reshape(-1)
    if rho.shape[0] != model.n_p:
        raise DimensionMismatchError("rho", model.n_p, rho.shape[0])
    if rho.shape[0] and not np.all(np.isfinite(rho)):
        raise ValueError("rho must be finite")
    m = model.matrices[0].copy()
    if model.n_p:
        m += np.tensordot(rho, model.matrices[1:], axes=1)
    nx = model.n_x_hat
    a = m[:nx, :nx]
    b = m[:nx, nx:]
    c = m[nx:, :nx]
    d = np.zeros((model.n_y, model.n_u)) if model.d_zero else m[nx:, nx:]
    return a, b, c, d


def step(model, x_hat, u):
    """One model step: returns (x_hat_next, y_hat, rho)."""
    x_hat = np.asarray(x_hat, dtype=np.float64).reshape(-1)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if x_hat.shape[0] != model.n_x_hat:
        raise DimensionMismatchError("x_hat", model.n_x_hat, x_hat.shape[0])
    if u.shape[0] != model.n_u:
        raise DimensionMismatchError("u", model.n_u, u.shape[0])
    if model.net is None:
        rho = np.zeros(0)
    else:
        rho = eval_scheduling(model.net, x_hat, u)
    a, b, c, d = assemble_matrices(model, rho)
    x_next = a @ x_hat + b @ u
    y_hat = c @ x_hat + d @ u
    return x_next, y_hat, rho


def simulate(model, u_seq, x_hat_0, divergence_bound=1e9):
    """Simulate the model over an input sequence.

    Parameters
    ----------
    model : LpvSsModel
    u_seq : (T, n_u) array
    x_hat_0 : (n_x_hat,) array
    divergence_bound : float
        Raise DivergenceError once the state inf-norm exceeds this (or
        turns non-finite).

    Returns
    -------
    y_hat_seq : (T, n_y) array
    x_hat_seq : (T + 1, n_x_hat) array, including the final state
    rho_seq : (T, n_p) array
    """
    from . import _kernels

    # plain writable copies: the kernels are compiled for one signature
    u_seq = np.array(u_seq, dtype=np.float64, order="C")
    if u_seq.ndim != 2 or u_seq.shape[1] != model.n_u:
        raise DimensionMismatchError("u_seq", ("T", model.n_u), u_seq.shape)
    x0 = np.array(x_hat_0, dtype=np.float64).reshape(-1)
    if x0.shape[0] != model.n_x_hat:
        raise DimensionMismatchError("x_hat_0", model.n_x_hat, x0.shape[0])
    w3, b2, l_in, l_out, has_b = _kernels.net_arrays(model.net)
    y, xs, rho, status, k_bad = _kernels.simulate_kernel(
        np.array(model.matrices), model.n_x_hat, model.n_y,
        w3, b2, l_in, l_out, has_b, u_seq, x0, float(divergence_bound))
    if status != 0:
        raise DivergenceError(int(k_bad), divergence_bound)
    return y, xs, rho


class LoadedModel(NamedTuple):
    model: "LpvSsModel"
    x_hat_0: np.ndarray | None
    normalization: dict | None


def save_model(model, path, x_hat_0=None, normalization=None):
    """Write a model (plus optional initial state and normalization
    record) as a canonical JSON document."""
    net = None
    if model.net is not None:
        net = {
            "activation": model.net.activation,
            "layers": [
                {"weights": w, "bias": (None if b is None else b)}
                for w, b in zip(model.net.weights, model.net.biases)
            ],
        }
    doc = {
        "format": "lpvuq-model",
        "version": 1,
        "n_x_hat": model.n_x_hat,
        "n_u": model.n_u,
        "n_y": model.n_y,
        "n_p": model.n_p,
        "d_zero": bool(model.d_zero),
        "matrices": model.matrices,
        "net": net,
        "x_hat_0": None if x_hat_0 is None else np.asarray(x_hat_0, dtype=np.float64),
        "normalization": normalization,
    }
    _jsonio.dump(doc, path)


def load_model(path):
    """Read a model document written by ``save_model``.

    Returns
    -------
    LoadedModel : named tuple (model, x_hat_0, normalization)
    """
    doc = _jsonio.load(path)
    if doc.get("format") != "lpvuq-model":
        raise ValueError(f"{path}: not a model document")
    net = None
    if doc["net"] is not None:
        ws = tuple(np.array(layer["weights"], dtype=np.float64)
                   for layer in doc["net"]["layers"])
        bs = tuple(None if layer["bias"] is None else np.array(layer["bias"], dtype=np.float64)
                   for layer in doc["net"]["layers"])
        net = SchedulingNet(ws, bs, doc["net"]["activation"])
    model = LpvSsModel(doc["n_x_hat"], doc["n_u"], doc["n_y"], doc["n_p"],
                       np.array(doc["matrices"], dtype=np.float64),
                       bool(doc["d_zero"]), net)
    x0 = None if doc.get("x_hat_0") is None else np.array(doc["x_hat_0"], dtype=np.float64)
    return LoadedModel(model, x0, doc.get("normalization"))
