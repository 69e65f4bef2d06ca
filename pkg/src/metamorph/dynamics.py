"""Forward particle dynamics for kernel image metamorphosis.

State of the system is N particles carrying positions ``x`` (N, d), template
intensities ``m`` (N,) and vector momenta ``z`` (N, d), driven by
time-independent scalar momenta ``alpha`` (N,):

    xdot_k = sum_l K_V(x_k, x_l) z_l
    mdot_k = sum_l K_H(x_k, x_l) alpha_l
    zdot_k = - sum_l grad_1 K_V(x_k, x_l) (z_l . z_k)
             - (1/sigma^2) sum_l grad_1 K_H(x_k, x_l) alpha_k alpha_l

integrated over t in [0, 1] by classical fixed-step RK4 (fixed step keeps the
stored states aligned with the discrete adjoint).  The quantity

    H = 1/2 z^T Kv(x) z + 1/(2 sigma^2) alpha^T Kh(x) alpha

is conserved along exact solutions and is used as an integration diagnostic.

All pairwise sums are dense O(N^2), evaluated in row blocks via
``kernels.coeff_tables``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .kernels import (
    Family,
    KernelParams,
    coeff_tables,
    gram_matrix,
    iter_row_blocks,
    pairwise_dist,
    profile_value,
)

__all__ = [
    "ParticleState",
    "Controls",
    "SolverConfig",
    "Trajectory",
    "DivergenceError",
    "rhs",
    "shoot",
    "hamiltonian",
    "velocity_at",
    "intensity_rate_at",
    "fields_at",
    "write_trajectory_csv",
    "read_trajectory_csv",
]


class DivergenceError(RuntimeError):
    """Raised when the integration produces non-finite state values."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite particle state at step {step}")


@dataclass
class ParticleState:
    """Positions, template intensities and vector momenta of N particles."""

    x: np.ndarray
    m: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.m = np.atleast_1d(np.asarray(self.m, dtype=float))
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    def validate(self):
        n, d = self.x.shape
        if n < 1 or d not in (1, 2, 3):
            raise ValueError(f"need N >= 1 particles in 1-3 dimensions, got x shape {self.x.shape}")
        if self.m.shape != (n,) or self.z.shape != (n, d):
            raise ValueError(
                f"inconsistent state shapes: x {self.x.shape}, m {self.m.shape}, z {self.z.shape}"
            )
        if not (
            np.all(np.isfinite(self.x))
            and np.all(np.isfinite(self.m))
            and np.all(np.isfinite(self.z))
        ):
            raise ValueError("particle state contains non-finite values")
        return self

    def copy(self):
        return ParticleState(self.x.copy(), self.m.copy(), self.z.copy())


@dataclass
class Controls:
    """Shooting unknowns: scalar momenta and initial vector momenta."""

    alpha: np.ndarray
    z0: np.ndarray

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.z0 = np.atleast_2d(np.asarray(self.z0, dtype=float))

    @property
    def n(self):
        return self.alpha.shape[0]

    def validate(self):
        if self.z0.shape[0] != self.alpha.shape[0]:
            raise ValueError(
                f"controls disagree on N: alpha {self.alpha.shape}, z0 {self.z0.shape}"
            )
        if not (np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.z0))):
            raise ValueError("controls contain non-finite values")
        return self

    @staticmethod
    def zeros(n, d):
        return Controls(np.zeros(n), np.zeros((n, d)))


@dataclass(frozen=True)
class SolverConfig:
    """Trade-off sigma, step count and the two kernels."""

    sigma: float = 1.0
    timesteps: int = 10
    kernel_v: KernelParams = field(default_factory=lambda: KernelParams(1.5, Family.V))
    kernel_h: KernelParams = field(default_factory=lambda: KernelParams(0.5, Family.H))

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if int(self.timesteps) != self.timesteps or self.timesteps < 1:
            raise ValueError(f"timesteps must be a positive integer, got {self.timesteps}")

    @property
    def dt(self):
        return 1.0 / self.timesteps


@dataclass
class Trajectory:
    """All T+1 particle states at times i * dt, plus the config that made them.

    ``stages`` optionally holds the four RK4 stage states of every step
    (filled by ``shoot(..., keep_stages=True)``); the discrete adjoint reuses
    them instead of re-integrating.
    """

    states: tuple
    dt: float
    config: SolverConfig
    stages: tuple | None = None

    @property
    def sigma(self):
        return self.config.sigma

    @property
    def timesteps(self):
        return len(self.states) - 1

    @property
    def times(self):
        return np.arange(len(self.states)) * self.dt

    def __len__(self):
        return len(self.states)


def _rhs_arrays(x, m, z, alpha, config):
    n = x.shape[0]
    inv_sig2 = 1.0 / config.sigma**2
    xdot = np.empty_like(x)
    mdot = np.empty_like(m)
    zdot = np.empty_like(z)
    zzt = z @ z.T
    for blk in iter_row_blocks(n, n):
        tab = coeff_tables(config.kernel_v, config.kernel_h, x[blk], x, gamma=True)
        xdot[blk] = tab.value_v @ z
        mdot[blk] = tab.value_h @ alpha
        # sum_l S_kl (x_k - x_l) = rowsum(S) x_k - S @ x
        s = tab.gamma_v
        s *= zzt[blk]
        sh = tab.gamma_h
        sh *= alpha[blk, None]
        sh *= alpha[None, :]
        sh *= inv_sig2
        s += sh
        zdot[blk] = s @ x
        zdot[blk] -= s.sum(axis=1)[:, None] * x[blk]
    return xdot, mdot, zdot


def rhs(state: ParticleState, alpha, config: SolverConfig):
    """Time derivative (xdot, mdot, zdot) of the particle system."""
    state.validate()
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if alpha.shape != (state.n,):
        raise ValueError(f"alpha has shape {alpha.shape}, expected ({state.n},)")
    return _rhs_arrays(state.x, state.m, state.z, alpha, config)


def _rk4_step(x, m, z, alpha, config, h):
    """One RK4 step; returns the new state arrays and the stage states."""
    kx1, km1, kz1 = _rhs_arrays(x, m, z, alpha, config)
    x2, m2, z2 = x + 0.5 * h * kx1, m + 0.5 * h * km1, z + 0.5 * h * kz1
    kx2, km2, kz2 = _rhs_arrays(x2, m2, z2, alpha, config)
    x3, m3, z3 = x + 0.5 * h * kx2, m + 0.5 * h * km2, z + 0.5 * h * kz2
    kx3, km3, kz3 = _rhs_arrays(x3, m3, z3, alpha, config)
    x4, m4, z4 = x + h * kx3, m + h * km3, z + h * kz3
    kx4, km4, kz4 = _rhs_arrays(x4, m4, z4, alpha, config)
    c = h / 6.0
    xn = x + c * (kx1 + 2.0 * kx2 + 2.0 * kx3 + kx4)
    mn = m + c * (km1 + 2.0 * km2 + 2.0 * km3 + km4)
    zn = z + c * (kz1 + 2.0 * kz2 + 2.0 * kz3 + kz4)
    stages = (
        ParticleState(x, m, z),
        ParticleState(x2, m2, z2),
        ParticleState(x3, m3, z3),
        ParticleState(x4, m4, z4),
    )
    return xn, mn, zn, stages


def shoot(x0, m0, controls: Controls, config: SolverConfig, keep_stages=False) -> Trajectory:
    """Integrate the particle system from t=0 to t=1 with T fixed RK4 steps."""
    controls.validate()
    state0 = ParticleState(np.array(x0, dtype=float), np.array(m0, dtype=float), controls.z0.copy())
    state0.validate()
    if controls.n != state0.n:
        raise ValueError(f"controls are for {controls.n} particles, state has {state0.n}")
    alpha = controls.alpha
    t_steps = config.timesteps
    h = config.dt
    states = [state0]
    all_stages = [] if keep_stages else None
    x, m, z = state0.x, state0.m, state0.z
    for step in range(t_steps):
        x, m, z, stages = _rk4_step(x, m, z, alpha, config, h)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(m)) and np.all(np.isfinite(z))):
            raise DivergenceError(step)
        states.append(ParticleState(x, m, z))
        if keep_stages:
            all_stages.append(stages)
    return Trajectory(tuple(states), h, config, tuple(all_stages) if keep_stages else None)


def hamiltonian(state: ParticleState, alpha, config: SolverConfig) -> float:
    """Conserved energy 1/2 z^T Kv z + 1/(2 sigma^2) alpha^T Kh alpha."""
    state.validate()
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    gv = gram_matrix(config.kernel_v, state.x)
    gh = gram_matrix(config.kernel_h, state.x)
    kin = 0.5 * float(np.sum(gv * (state.z @ state.z.T)))
    pot = 0.5 / config.sigma**2 * float(alpha @ gh @ alpha)
    return kin + pot


def fields_at(state: ParticleState, points, alpha, config: SolverConfig):
    """Velocity field and intensity rate of the kernel expansions at ``points``.

    Returns ``(v, zeta)`` with shapes (M, d) and (M,); used by the renderer,
    which needs both fields at the same query points.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vel = np.empty_like(pts)
    rate = np.empty(pts.shape[0])
    for blk in iter_row_blocks(pts.shape[0], state.n):
        tab = coeff_tables(config.kernel_v, config.kernel_h, pts[blk], state.x)
        vel[blk] = tab.value_v @ state.z
        rate[blk] = tab.value_h @ alpha
    return vel, rate


def velocity_at(state: ParticleState, points, config: SolverConfig):
    """Velocity field v(., x) = sum_l K_V(., x_l) z_l at the query points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vel = np.empty_like(pts)
    for blk in iter_row_blocks(pts.shape[0], state.n):
        vel[blk] = profile_value(config.kernel_v, pairwise_dist(pts[blk], state.x)) @ state.z
    return vel


def intensity_rate_at(state: ParticleState, points, alpha, config: SolverConfig):
    """Intensity rate zeta(., x) = sum_l K_H(., x_l) alpha_l at the points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    rate = np.empty(pts.shape[0])
    for blk in iter_row_blocks(pts.shape[0], state.n):
        rate[blk] = profile_value(config.kernel_h, pairwise_dist(pts[blk], state.x)) @ alpha
    return rate


def write_trajectory_csv(traj: Trajectory, path):
    """One row per (step, particle): t, k, x[0..d), m, z[0..d) at 17 digits."""
    d = traj.states[0].d
    header = ["t", "k"] + [f"x{i}" for i in range(d)] + ["m"] + [f"z{i}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, state in enumerate(traj.states):
            t = i * traj.dt
            for k in range(state.n):
                row = [f"{t:.17g}", str(k)]
                row += [f"{v:.17g}" for v in state.x[k]]
                row += [f"{state.m[k]:.17g}"]
                row += [f"{v:.17g}" for v in state.z[k]]
                writer.writerow(row)


def read_trajectory_csv(path, config: SolverConfig) -> Trajectory:
    """Rebuild a trajectory from the CSV written by ``write_trajectory_csv``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = sum(1 for name in header if name.startswith("x"))
        rows = [[float(v) for v in row] for row in reader]
    data = np.asarray(rows)
    times = np.unique(data[:, 0])
    states = []
    for t in times:
        at_t = data[np.isclose(data[:, 0], t)]
        at_t = at_t[np.argsort(at_t[:, 1])]
        states.append(
            ParticleState(at_t[:, 2 : 2 + d], at_t[:, 2 + d], at_t[:, 3 + d : 3 + 2 * d])
        )
    if len(times) < 2:
        raise ValueError(f"trajectory file {path} holds fewer than two time samples")
    return Trajectory(tuple(states), float(times[1] - times[0]), config)
