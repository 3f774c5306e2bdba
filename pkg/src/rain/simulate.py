"""Spring-ball and Kuramoto trajectory simulators.

Both integrate in float64 and return subsampled state arrays; datasets narrow
to float32 only when written to disk. Graph weights come in unit range and are
multiplied by ``strength_scale`` here, so the stored ground truth stays in [0, 1].
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericDivergenceError

SPRING_LAYOUT = ("x", "y", "vx", "vy")
KURAMOTO_LAYOUT = ("dphi_dt", "sin_phi", "omega")


@dataclass
class SimConfig:
    dt: float
    n_steps_raw: int
    subsample_stride: int
    box_half_width: float
    strength_scale: float
    seed: int = 0
    spring_integrator: str = "verlet"  # or "rk4", for cross-checks
    kuramoto_sign: str = "literal"     # sin(phi_i - phi_j); "standard" flips it

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.n_steps_raw % self.subsample_stride != 0:
            raise ConfigError(
                f"n_steps_raw={self.n_steps_raw} not divisible by stride={self.subsample_stride}")
        if self.box_half_width <= 0:
            raise ConfigError(f"box_half_width must be positive, got {self.box_half_width}")
        if self.spring_integrator not in ("verlet", "rk4"):
            raise ConfigError(f"unknown spring integrator {self.spring_integrator!r}")
        if self.kuramoto_sign not in ("literal", "standard"):
            raise ConfigError(f"unknown kuramoto sign convention {self.kuramoto_sign!r}")

    @property
    def n_steps_stored(self):
        return self.n_steps_raw // self.subsample_stride


def spring_config(seed=0, **overrides):
    """Square box of side 5, dt=0.005, 1000 raw steps subsampled every 10."""
    cfg = dict(dt=0.005, n_steps_raw=1000, subsample_stride=10,
               box_half_width=2.5, strength_scale=0.05, seed=seed)
    cfg.update(overrides)
    return SimConfig(**cfg)


def kuramoto_config(seed=0, **overrides):
    """dt=0.01, 1000 raw steps subsampled every 10; couplings scaled to [0, 2]."""
    cfg = dict(dt=0.01, n_steps_raw=1000, subsample_stride=10,
               box_half_width=2.5, strength_scale=2.0, seed=seed)
    cfg.update(overrides)
    return SimConfig(**cfg)


def _spring_forces(k, x):
    # F_i = -sum_j k_ij (x_i - x_j) = K x - deg_i x_i
    deg = k.sum(axis=1)
    return k @ x - deg[:, None] * x


def _reflect_walls(x, v, half_width):
    # Specular reflection; loop covers (never observed) multi-wall overshoot.
    for _ in range(16):
        over = x > half_width
        under = x < -half_width
        if not (over.any() or under.any()):
            return
        x[over] = 2.0 * half_width - x[over]
        x[under] = -2.0 * half_width - x[under]
        v[over] *= -1.0
        v[under] *= -1.0
    raise NumericDivergenceError("ball escaped beyond reflection range")


def _fold_into_box(x, half_width):
    # Position-only fold for initial placement outside the box.
    for _ in range(16):
        over = x > half_width
        under = x < -half_width
        if not (over.any() or under.any()):
            return
        x[over] = 2.0 * half_width - x[over]
        x[under] = -2.0 * half_width - x[under]
    raise NumericDivergenceError("initial position beyond folding range")


def simulate_springs(graph, config, rng, return_raw=False):
    """Integrate 2-D Hookean dynamics with elastic wall reflection.

    Returns the subsampled (T, N, 4) state array with layout (x, y, vx, vy);
    with ``return_raw`` also the raw (n_steps_raw, N, 4) array.
    """
    n = graph.n_agents
    k = config.strength_scale * graph.weights
    x = rng.standard_normal((n, 2))
    v = rng.standard_normal((n, 2))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    v = v / norms
    _fold_into_box(x, config.box_half_width)

    dt = config.dt
    raw = np.empty((config.n_steps_raw, n, 4), dtype=np.float64)
    step = _verlet_step if config.spring_integrator == "verlet" else _rk4_spring_step
    for t in range(config.n_steps_raw):
        raw[t, :, :2] = x
        raw[t, :, 2:] = v
        if not np.isfinite(x).all() or not np.isfinite(v).all():
            raise NumericDivergenceError(f"non-finite spring state at raw step {t}", step=t)
        if t + 1 < config.n_steps_raw:
            x, v = step(k, x, v, dt, config.box_half_width)

    states = raw[::config.subsample_stride]
    if return_raw:
        return states, raw
    return states


def _verlet_step(k, x, v, dt, half_width):
    v_half = v + 0.5 * dt * _spring_forces(k, x)
    x1 = x + dt * v_half
    _reflect_walls(x1, v_half, half_width)
    v1 = v_half + 0.5 * dt * _spring_forces(k, x1)
    return x1, v1


def _rk4_spring_step(k, x, v, dt, half_width):
    def deriv(x_, v_):
        return v_, _spring_forces(k, x_)

    dx1, dv1 = deriv(x, v)
    dx2, dv2 = deriv(x + 0.5 * dt * dx1, v + 0.5 * dt * dv1)
    dx3, dv3 = deriv(x + 0.5 * dt * dx2, v + 0.5 * dt * dv2)
    dx4, dv4 = deriv(x + dt * dx3, v + dt * dv3)
    x1 = x + dt / 6.0 * (dx1 + 2 * dx2 + 2 * dx3 + dx4)
    v1 = v + dt / 6.0 * (dv1 + 2 * dv2 + 2 * dv3 + dv4)
    _reflect_walls(x1, v1, half_width)
    return x1, v1


def spring_energy(graph, config, states):
    """Kinetic plus pairwise potential, sum_{i<j} 0.5 k_ij |x_ij|^2, per step."""
    k = config.strength_scale * graph.weights
    pos = states[..., :2]
    vel = states[..., 2:]
    kinetic = 0.5 * (vel ** 2).sum(axis=(-1, -2))
    diffs = pos[..., :, None, :] - pos[..., None, :, :]
    sq = (diffs ** 2).sum(axis=-1)
    potential = 0.25 * (k * sq).sum(axis=(-1, -2))  # 0.5 per pair, each counted twice
    return kinetic + potential


def kuramoto_rhs(k, omega, phi, sign=1.0):
    # literal convention: dphi_i/dt = omega_i + sum_j k_ij sin(phi_i - phi_j)
    diff = phi[:, None] - phi[None, :]
    return omega + sign * (k * np.sin(diff)).sum(axis=1)


def simulate_kuramoto(graph, config, rng, return_raw=False, omega=None, phi0=None):
    """Integrate phase-coupled oscillators with RK4.

    Intrinsic frequencies are integers from {1..10}; initial phases uniform
    in [0, 2pi). Both can be overridden explicitly. Returns the subsampled
    (T, N, 3) array with layout (dphi_dt, sin_phi, omega); with
    ``return_raw`` also (raw_states, raw_phi).
    """
    n = graph.n_agents
    k = config.strength_scale * graph.weights
    if omega is None:
        omega = rng.integers(1, 11, size=n).astype(np.float64)
    else:
        omega = np.asarray(omega, dtype=np.float64)
    if phi0 is None:
        phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    else:
        phi = np.asarray(phi0, dtype=np.float64).copy()
    sign = 1.0 if config.kuramoto_sign == "literal" else -1.0

    dt = config.dt
    raw = np.empty((config.n_steps_raw, n, 3), dtype=np.float64)
    raw_phi = np.empty((config.n_steps_raw, n), dtype=np.float64)
    for t in range(config.n_steps_raw):
        raw[t, :, 0] = kuramoto_rhs(k, omega, phi, sign)
        raw[t, :, 1] = np.sin(phi)
        raw[t, :, 2] = omega
        raw_phi[t] = phi
        if not np.isfinite(phi).all():
            raise NumericDivergenceError(f"non-finite phase at raw step {t}", step=t)
        if t + 1 < config.n_steps_raw:
            phi = _rk4_phase_step(k, omega, phi, dt, sign)

    states = raw[::config.subsample_stride]
    if return_raw:
        return states, raw, raw_phi
    return states


def _rk4_phase_step(k, omega, phi, dt, sign):
    k1 = kuramoto_rhs(k, omega, phi, sign)
    k2 = kuramoto_rhs(k, omega, phi + 0.5 * dt * k1, sign)
    k3 = kuramoto_rhs(k, omega, phi + 0.5 * dt * k2, sign)
    k4 = kuramoto_rhs(k, omega, phi + dt * k3, sign)
    return phi + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
