"""Nonlinear mass-spring-damper benchmark and excitation signals.

A rows x cols planar grid of point masses (default 2 x 3, 0.5 kg each,
24 states).  Nodes are numbered row-major starting at 1 in the
top-left corner; the first column is anchored to a wall.  Per node the
state holds the planar displacement from equilibrium and its velocity;
the full state vector is [q_1x, q_1y, ..., q_nx, q_ny, qd_1x, ...].

Couplings (displacement coordinates, so rest lengths are zero):

* wall (first column):    f = [k_x q_x, k_y q_y] + [d_x qd_x, d_y qd_y]
* Cartesian neighbours:   f = [k dx, k dy + k3 dy^3] + d [dvx, dvy]
  on the relative displacement d = q_j - q_i
* diagonal neighbours:    magnitude 5 tanh(r) + 0.5 sin(rdot) along the
  unit vector of the relative displacement, where r = ||q_j - q_i||;
  the contribution vanishes for r = 0 (removable singularity).

An external force acts on the input node; the output is the position
of the output node.  Dynamics are discretized by classical RK4 with
zero-order-hold input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .data import Dataset
from .exceptions import DimensionMismatchError, DivergenceError


@dataclass(frozen=True)
class MsdGrid:
    """Geometry, masses and force-law coefficients of the benchmark grid.

    ``input_node`` / ``output_node`` are 1-based row-major node numbers.
    Setting ``neigh_k3 = diag_k = diag_d = 0`` yields the linearized
    grid (pure linear springs/dampers, no diagonal couplings).
    """

    rows: int = 2
    cols: int = 3
    mass: float = 0.5
    wall_kx: float = 1.0
    wall_ky: float = 2.0
    wall_dx: float = 1.0
    wall_dy: float = 1.0
    neigh_k: float = 1.0
    neigh_k3: float = 1.0
    neigh_d: float = 1.0
    diag_k: float = 5.0
    diag_d: float = 0.5
    input_node: int = 1
    output_node: int = 6

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one row and column")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        for node in (self.input_node, self.output_node):
            if not 1 <= node <= self.n_nodes:
                raise ValueError(f"node {node} outside 1..{self.n_nodes}")

    @property
    def n_nodes(self):
        return self.rows * self.cols

    @property
    def n_states(self):
        return 4 * self.n_nodes

    @cached_property
    def wall_nodes(self):
        return np.arange(0, self.n_nodes, self.cols)

    @cached_property
    def cart_pairs(self):
        pairs = []
        for r in range(self.rows):
            for c in range(self.cols):
                n = r * self.cols + c
                if c < self.cols - 1:
                    pairs.append((n, n + 1))
                if r < self.rows - 1:
                    pairs.append((n, n + self.cols))
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    @cached_property
    def diag_pairs(self):
        pairs = []
        for r in range(self.rows - 1):
            for c in range(self.cols - 1):
                n = r * self.cols + c
                pairs.append((n, n + self.cols + 1))
                pairs.append((n + 1, n + self.cols))
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def msd_dynamics(grid, x, u):
    """State derivative of the grid under an external force ``u`` on the
    input node.  ``x`` stacks displacements then velocities."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    n = grid.n_nodes
    if x.shape[0] != grid.n_states:
        raise DimensionMismatchError("x", grid.n_states, x.shape[0])
    if u.shape[0] != 2:
        raise DimensionMismatchError("u", 2, u.shape[0])
    q = x[:2 * n].reshape(n, 2)
    v = x[2 * n:].reshape(n, 2)
    force = np.zeros((n, 2))

    wn = grid.wall_nodes
    force[wn, 0] -= grid.wall_kx * q[wn, 0] + grid.wall_dx * v[wn, 0]
    force[wn, 1] -= grid.wall_ky * q[wn, 1] + grid.wall_dy * v[wn, 1]

    cp = grid.cart_pairs
    if cp.size:
        ii, jj = cp[:, 0], cp[:, 1]
        d = q[jj] - q[ii]
        dv = v[jj] - v[ii]
        f = np.empty_like(d)
        f[:, 0] = grid.neigh_k * d[:, 0] + grid.neigh_d * dv[:, 0]
        f[:, 1] = (grid.neigh_k * d[:, 1] + grid.neigh_k3 * d[:, 1] ** 3
                   + grid.neigh_d * dv[:, 1])
        np.add.at(force, ii, f)
        np.add.at(force, jj, -f)

    dp = grid.diag_pairs
    if dp.size and (grid.diag_k != 0.0 or grid.diag_d != 0.0):
        ii, jj = dp[:, 0], dp[:, 1]
        d = q[jj] - q[ii]
        dv = v[jj] - v[ii]
        r = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)
        nz = r > 0.0
        if np.any(nz):
            e = np.zeros_like(d)
            e[nz] = d[nz] / r[nz, None]
            r_dot = np.zeros_like(r)
            r_dot[nz] = (d[nz] * dv[nz]).sum(axis=1) / r[nz]
            mag = grid.diag_k * np.tanh(r) + grid.diag_d * np.sin(r_dot)
            f = mag[:, None] * e
            np.add.at(force, ii, f)
            np.add.at(force, jj, -f)

    force[grid.input_node - 1] += u
    acc = force / grid.mass
    return np.concatenate([v.ravel(), acc.ravel()])


def rk4_step(dynamics, x, u, ts):
    """Classical fourth-order Runge-Kutta step with the input held
    constant over the interval (zero-order hold)."""
    if not ts > 0:
        raise ValueError("ts must be positive")
    x = np.asarray(x, dtype=np.float64)
    k1 = dynamics(x, u)
    k2 = dynamics(x + 0.5 * ts * k1, u)
    k3 = dynamics(x + 0.5 * ts * k2, u)
    k4 = dynamics(x + ts * k3, u)
    x_next = x + (ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(None)
    return x_next


def simulate_grid(grid, u_seq, ts, x0=None):
    """Discrete-time benchmark response: output positions of the output
    node for every sample, input held by ZOH between samples.

    Returns
    -------
    w_seq : (T, 2) noise-free output trajectory
    x_seq : (T + 1, n_states) state trajectory
    """
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=np.float64))
    horizon = u_seq.shape[0]
    x = np.zeros(grid.n_states) if x0 is None else np.asarray(x0, dtype=np.float64)
    out = grid.output_node - 1
    w_seq = np.zeros((horizon, 2))
    x_seq = np.zeros((horizon + 1, grid.n_states))
    for k in range(horizon):
        x_seq[k] = x
        w_seq[k] = x[2 * out:2 * out + 2]
        try:
            x = rk4_step(lambda xx, uu: msd_dynamics(grid, xx, uu), x, u_seq[k], ts)
        except DivergenceError:
            raise DivergenceError(k) from None
    x_seq[horizon] = x
    return w_seq, x_seq


def chirp(t, rate_base=1.4 * np.pi, horizon=90.0, phase=0.0):
    """Exponentially swept sine sin(rate_base^(t/horizon) t + phase),
    active for 0 <= t <= horizon and zero outside.  ``t`` is in seconds
    and may be a scalar or an array."""
    t = np.asarray(t, dtype=np.float64)
    active = (t >= 0.0) & (t <= horizon)
    val = np.sin(rate_base ** (t / horizon) * t + phase)
    out = np.where(active, val, 0.0)
    return out if out.ndim else float(out)


def multisine(t, grid_resolution=0.05, band=(0.05, 0.7), amplitude=0.1,
              seed=0, active_intervals=((0.0, np.inf),)):
    """Random-phase multisine on a fixed frequency grid.

    Sum of amplitude * sin(2 pi f_j t + phi_j) over the grid frequencies
    f_j inside ``band`` (in Hz, inclusive; a zero lower edge drops the
    DC term), with phases drawn uniformly from [0, 2 pi) once per seed.
    Zero outside the union of ``active_intervals`` (seconds, inclusive).
    """
    t = np.asarray(t, dtype=np.float64)
    lo, hi = band
    j_lo = int(round(lo / grid_resolution))
    j_hi = int(round(hi / grid_resolution))
    if abs(j_lo * grid_resolution - lo) > 1e-9 or abs(j_hi * grid_resolution - hi) > 1e-9:
        raise ValueError("band edges must lie on the frequency grid")
    j_lo = max(j_lo, 1)
    if j_hi < j_lo:
        raise ValueError("empty frequency band")
    freqs = grid_resolution * np.arange(j_lo, j_hi + 1)
    phases = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi, freqs.shape[0])
    val = (amplitude * np.sin(2.0 * np.pi * np.outer(t, freqs) + phases)).sum(axis=-1)
    active = np.zeros(t.shape, dtype=bool)
    for a, b in active_intervals:
        active |= (t >= a) & (t <= b)
    out = np.where(active, val.reshape(t.shape), 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SignalSpec:
    """Declarative description of one excitation component.

    ``kind`` selects the waveform: chirp | multisine | step | sine |
    sum.  ``active`` is a tuple of inclusive (start, stop) intervals in
    seconds; ``parts`` holds the children of a ``sum`` spec.
    """

    kind: str
    amplitude: float = 1.0
    frequency: float = 0.0
    phase: float = 0.0
    rate_base: float = 1.4 * np.pi
    horizon: float = 90.0
    band: tuple = (0.05, 0.7)
    grid_resolution: float = 0.05
    seed: int = 0
    active: tuple = ((0.0, np.inf),)
    parts: tuple = ()

    def __post_init__(self):
        if self.kind not in ("chirp", "multisine", "step", "sine", "sum"):
            raise ValueError(f"unknown signal kind {self.kind!r}")


def eval_signal(spec, t):
    """Sample a SignalSpec at times ``t`` (seconds)."""
    t = np.asarray(t, dtype=np.float64)
    if spec.kind == "sum":
        out = np.zeros(t.shape)
        for part in spec.parts:
            out = out + eval_signal(part, t)
        return out if out.ndim else float(out)
    if spec.kind == "chirp":
        return spec.amplitude * chirp(t, spec.rate_base, spec.horizon, spec.phase)
    if spec.kind == "multisine":
        return multisine(t, spec.grid_resolution, spec.band, spec.amplitude,
                         spec.seed, spec.active)
    active = np.zeros(t.shape, dtype=bool)
    for a, b in spec.active:
        active |= (t >= a) & (t <= b)
    if spec.kind == "step":
        out = np.where(active, spec.amplitude, 0.0)
    else:  # sine
        val = spec.amplitude * np.sin(2.0 * np.pi * spec.frequency * t + spec.phase)
        out = np.where(active, val, 0.0)
    return out if out.ndim else float(out)


# multisine activity windows of the training input, seconds
TRAIN_WINDOWS_X = ((96.0, 116.0), (148.0, 168.0))
TRAIN_WINDOWS_Y = ((122.0, 142.0), (148.0, 168.0))


def training_input_spec(seed=0):
    """Per-channel SignalSpecs of the training excitation."""
    chirp_x = SignalSpec("chirp", amplitude=2.0, phase=0.0)
    chirp_y = SignalSpec("chirp", amplitude=2.0, phase=np.pi / 2.0)
    ms_x = SignalSpec("multisine", seed=(seed, 1), active=TRAIN_WINDOWS_X)
    ms_y = SignalSpec("multisine", seed=(seed, 2), active=TRAIN_WINDOWS_Y)
    return (SignalSpec("sum", parts=(chirp_x, ms_x)),
            SignalSpec("sum", parts=(chirp_y, ms_y)))


def test_input_spec():
    """Per-channel SignalSpecs of the test excitation."""
    sine_x = SignalSpec("sine", amplitude=2.0, frequency=0.8, phase=np.pi / 3.0)
    step_x = SignalSpec("step", amplitude=2.0, active=((1.0, 4.0),))
    sine_y1 = SignalSpec("sine", amplitude=1.0, frequency=0.1, phase=np.pi / 2.0)
    sine_y2 = SignalSpec("sine", amplitude=-2.0, frequency=0.05, phase=np.pi / 7.0)
    return (SignalSpec("sum", parts=(sine_x, step_x)),
            SignalSpec("sum", parts=(sine_y1, sine_y2)))


def make_training_input(seed=0, n_samples=3461, ts=0.05):
    """Training input: doubled chirps plus windowed random-phase
    multisines on both channels.  Returns a (n_samples, 2) array."""
    t = np.arange(n_samples) * ts
    sx, sy = training_input_spec(seed)
    return np.column_stack([eval_signal(sx, t), eval_signal(sy, t)])


def make_test_input(seed=0, n_samples=600, ts=0.05):
    """Test input: higher-frequency sine plus a step on the x channel,
    two slow sines on the y channel.  ``seed`` is accepted for symmetry
    but the test excitation is deterministic."""
    del seed
    t = np.arange(n_samples) * ts
    sx, sy = test_input_spec()
    return np.column_stack([eval_signal(sx, t), eval_signal(sy, t)])


def add_noise_snr(w_seq, snr_db=35.0, seed=0):
    """Add white Gaussian noise at a per-channel signal-to-noise ratio.

    Noise variance per channel is var(w) * 10^(-snr_db / 10).  Pass
    ``snr_db = inf`` for a noise-free copy.

    Returns
    -------
    y_seq : noisy output
    sigma_e : (n_y, n_y) diagonal covariance actually injected
    """
    w_seq = np.atleast_2d(np.asarray(w_seq, dtype=np.float64))
    n_y = w_seq.shape[1]
    if np.isinf(snr_db):
        return w_seq.copy(), np.zeros((n_y, n_y))
    var = w_seq.var(axis=0)
    if np.any(var == 0):
        raise ValueError("constant channel: SNR-calibrated noise undefined")
    noise_var = var * 10.0 ** (-snr_db / 10.0)
    rng = np.random.default_rng(seed)
    y = w_seq + rng.standard_normal(w_seq.shape) * np.sqrt(noise_var)
    return y, np.diag(noise_var)


@dataclass(frozen=True)
class BenchmarkConfig:
    seed: int = 0
    snr_db: float = 35.0
    ts: float = 0.05
    n_train: int = 3461
    n_test: int = 600
    grid: MsdGrid = field(default_factory=MsdGrid)


def generate_benchmark_datasets(config=None):
    """Simulate the benchmark under the train and test excitations from
    zero initial conditions and inject SNR-calibrated noise.

    Returns
    -------
    train, test : Dataset (physical units, noise-free output attached)
    meta : dict with seeds and the realized noise covariances
    """
    cfg = config or BenchmarkConfig()
    u_train = make_training_input(cfg.seed, cfg.n_train, cfg.ts)
    u_test = make_test_input(cfg.seed, cfg.n_test, cfg.ts)
    w_train, _ = simulate_grid(cfg.grid, u_train, cfg.ts)
    w_test, _ = simulate_grid(cfg.grid, u_test, cfg.ts)
    y_train, sig_train = add_noise_snr(w_train, cfg.snr_db, seed=(cfg.seed, 3))
    y_test, sig_test = add_noise_snr(w_test, cfg.snr_db, seed=(cfg.seed, 4))
    train = Dataset(u_train, y_train, cfg.ts, w=w_train)
    test = Dataset(u_test, y_test, cfg.ts, w=w_test)
    meta = {
        "seed": cfg.seed,
        "snr_db": cfg.snr_db,
        "ts": cfg.ts,
        "sigma_e_train": np.diag(sig_train),
        "sigma_e_test": np.diag(sig_test),
    }
    return train, test, meta
