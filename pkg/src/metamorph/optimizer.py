"""Nonlinear conjugate-gradient shooting loop.

Minimizes the endpoint mismatch over the shooting controls (z0, alpha), or
over alpha alone when the constraint z0_k = -alpha_k grad q0(x0_k) is
enforced.  The search direction follows Polak-Ribiere with the non-negativity
clamp (PR+), restarted to steepest descent on a fixed schedule and whenever
the computed direction fails to be a descent direction.  Steps are chosen by
Armijo backtracking; gradients come from the discrete adjoint and can be
preconditioned by the kernel Gram matrices (the natural inner product of the
momenta), which are factored once since the initial particle grid is fixed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import linalg

from . import image_field
from .adjoint_grad import ConditioningError, backprop, bc_residual_of, energy, terminal_adjoint
from .dynamics import Controls, SolverConfig, shoot
from .kernels import gram_matrix

__all__ = ["OptimOptions", "OptimStatus", "OptimResult", "run", "step_accept"]


@dataclass
class OptimOptions:
    """Stopping rules and line-search policy.

    ``cg_restart`` defaults to the number of unknowns capped at 50;
    ``precond_ridge`` defaults to 1e-6 * N (dense particle grids give
    near-singular Gram matrices).
    """

    max_iters: int = 500
    grad_tol: float = 1e-6
    energy_tol: float = 1e-12
    constrained: bool = False
    preconditioned: bool = False
    ls_shrink: float = 0.5
    ls_c1: float = 1e-4
    ls_max_evals: int = 30
    cg_restart: int | None = None
    precond_ridge: float | None = None

    def __post_init__(self):
        if not 0 < self.ls_shrink < 1:
            raise ValueError(f"ls_shrink must lie in (0, 1), got {self.ls_shrink}")
        if not 0 < self.ls_c1 < 1:
            raise ValueError(f"ls_c1 must lie in (0, 1), got {self.ls_c1}")
        if self.max_iters < 1 or self.ls_max_evals < 1:
            raise ValueError("max_iters and ls_max_evals must be positive")
        if self.grad_tol <= 0 or self.energy_tol <= 0:
            raise ValueError("tolerances must be positive")


class OptimStatus(Enum):
    converged_grad = "converged_grad"
    converged_energy = "converged_energy"
    max_iters = "max_iters"
    line_search_failed = "line_search_failed"


@dataclass
class OptimResult:
    controls: Controls
    energy_history: np.ndarray
    grad_norm_history: np.ndarray
    iterations: int
    status: OptimStatus


def step_accept(prev_energy, trial_energy, directional_derivative, step, c1) -> bool:
    """Armijo rule: accept iff trial <= prev + c1 * step * slope."""
    if directional_derivative >= 0:
        raise ValueError("directional derivative must be negative for a descent step")
    return trial_energy <= prev_energy + c1 * step * directional_derivative


def _log(stream, record):
    if stream is not None:
        stream.write(json.dumps(record) + "\n")


def run(
    template: image_field.ScalarField,
    target: image_field.ScalarField,
    x0,
    m0,
    config: SolverConfig,
    opts: OptimOptions | None = None,
    log_stream=None,
) -> OptimResult:
    """Shooting optimization from zero controls; see module docstring."""
    opts = opts or OptimOptions()
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    m0 = np.atleast_1d(np.asarray(m0, dtype=float))
    n, d = x0.shape
    tpl_grad = image_field.grad(template, x0) if opts.constrained else None

    n_unknowns = n if opts.constrained else n * (d + 1)
    restart_every = opts.cg_restart or min(n_unknowns, 50)
    ridge = opts.precond_ridge if opts.precond_ridge is not None else 1e-6 * n

    def controls_of(u):
        if opts.constrained:
            return Controls(u.copy(), -u[:, None] * tpl_grad)
        return Controls(u[n * d :].copy(), u[: n * d].reshape(n, d).copy())

    def eval_energy(u):
        traj = shoot(x0, m0, controls_of(u), config, keep_stages=True)
        return energy(traj, target), traj

    def eval_gradient(u, traj):
        adj0 = backprop(traj, terminal_adjoint(traj, target), controls_of(u).alpha, config)
        if opts.constrained:
            return adj0.eta_alpha - np.einsum("nd,nd->n", tpl_grad, adj0.xi_z)
        return np.concatenate([adj0.xi_z.ravel(), adj0.eta_alpha])

    apply_precond = None
    if opts.preconditioned:
        eye = np.eye(n)
        factors = {}
        for name, params in (("v", config.kernel_v), ("h", config.kernel_h)):
            if name == "v" and opts.constrained:
                continue
            try:
                factors[name] = linalg.cho_factor(gram_matrix(params, x0) + ridge * eye, lower=True)
            except linalg.LinAlgError as exc:
                raise ConditioningError(
                    f"{name.upper()}-kernel Gram is not positive definite at ridge={ridge}; "
                    "increase precond_ridge"
                ) from exc

        def apply_precond(g):
            if opts.constrained:
                return linalg.cho_solve(factors["h"], g)
            gz = linalg.cho_solve(factors["v"], g[: n * d].reshape(n, d))
            ga = linalg.cho_solve(factors["h"], g[n * d :])
            return np.concatenate([gz.ravel(), ga])

    u = np.zeros(n_unknowns)
    e_cur, traj = eval_energy(u)
    g = eval_gradient(u, traj)
    g_norm0 = float(np.linalg.norm(g))
    energies = [e_cur]
    grad_norms = [g_norm0]
    best_u, best_e = u.copy(), e_cur

    def result(status, iters, u_final):
        _log(log_stream, {"iter": iters, "energy": energies[-1],
                          "grad_norm": grad_norms[-1], "step": 0.0, "status": status.value})
        return OptimResult(
            controls=controls_of(u_final),
            energy_history=np.asarray(energies),
            grad_norm_history=np.asarray(grad_norms),
            iterations=iters,
            status=status,
        )

    if e_cur == 0.0:
        return result(OptimStatus.converged_energy, 0, u)
    if g_norm0 == 0.0:
        return result(OptimStatus.converged_grad, 0, u)

    p = apply_precond(g) if apply_precond else g
    direction = -p
    prev_step = None
    for it in range(1, opts.max_iters + 1):
        dd = float(g @ direction)
        if dd >= 0:  # not a descent direction: restart to steepest descent
            direction = -p
            dd = float(g @ direction)
        step = 2.0 * prev_step if prev_step is not None else 1.0 / (1.0 + g_norm0)
        accepted = False
        for _ in range(opts.ls_max_evals):
            trial_u = u + step * direction
            e_trial, trial_traj = eval_energy(trial_u)
            if e_trial < best_e:
                best_u, best_e = trial_u.copy(), e_trial
            if step_accept(e_cur, e_trial, dd, step, opts.ls_c1):
                accepted = True
                break
            step *= opts.ls_shrink
        if not accepted:
            return result(OptimStatus.line_search_failed, it - 1, best_u)

        g_new = eval_gradient(trial_u, trial_traj)
        p_new = apply_precond(g_new) if apply_precond else g_new
        e_prev, e_cur, u = e_cur, e_trial, trial_u
        g_norm = float(np.linalg.norm(g_new))
        energies.append(e_cur)
        grad_norms.append(g_norm)
        prev_step = step
        _log(log_stream, {"iter": it, "energy": e_cur, "grad_norm": g_norm,
                          "step": step, "status": "accepted"})

        if g_norm <= opts.grad_tol * g_norm0:
            return result(OptimStatus.converged_grad, it, u)
        if abs(e_prev - e_cur) <= opts.energy_tol * max(e_prev, np.finfo(float).tiny):
            return result(OptimStatus.converged_energy, it, u)

        beta = 0.0
        if it % restart_every != 0:
            denom = float(p @ g)
            if denom > 0:
                beta = max(0.0, float(p_new @ (g_new - g)) / denom)
        direction = -p_new + beta * direction
        g, p = g_new, p_new
    return result(OptimStatus.max_iters, opts.max_iters, u)


def diagnostics(result: OptimResult, template, target, x0, m0, config: SolverConfig):
    """Final-state report (energy, gradient norms, endpoint residuals)."""
    traj = shoot(x0, m0, result.controls, config)
    res = bc_residual_of(traj, result.controls.alpha, target)
    return {
        "status": result.status.value,
        "iterations": int(result.iterations),
        "energy": float(result.energy_history[-1]),
        "initial_energy": float(result.energy_history[0]),
        "grad_norm": float(result.grad_norm_history[-1]),
        "max_bc_residual": float(res.max()),
        "mean_bc_residual": float(res.mean()),
    }
