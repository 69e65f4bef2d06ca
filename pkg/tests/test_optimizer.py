"""Conjugate-gradient shooting loop: Armijo rule, convergence, modes."""

import io
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from metamorph import Controls, SolverConfig, shoot
from metamorph import image_field as imf
from metamorph import optimizer as opt
from metamorph.adjoint_grad import energy

from conftest import gaussian_bump, smooth_random_field


class TestStepAccept:
    def test_insufficient_decrease_rejected(self):
        assert not opt.step_accept(1.0, 1.0, -1.0, 1.0, 1e-4)

    def test_sufficient_decrease_accepted(self):
        assert opt.step_accept(1.0, 0.0, -1.0, 1.0, 1e-4)

    def test_increase_always_rejected(self):
        for c1 in (1e-6, 1e-4, 0.5, 0.999):
            assert not opt.step_accept(1.0, 2.0, -1.0, 0.5, c1)

    def test_nonnegative_slope_rejected(self):
        with pytest.raises(ValueError):
            opt.step_accept(1.0, 0.5, 0.1, 1.0, 1e-4)


class TestRun:
    def test_identical_images_converge_immediately(self, default_config):
        field = smooth_random_field(16, seed=21)
        x0, m0 = imf.sample_grid(field, 4)
        res = opt.run(field, field, x0, m0, default_config)
        assert res.iterations == 0
        assert res.status is opt.OptimStatus.converged_energy
        assert res.energy_history[0] == 0.0
        assert_allclose(res.controls.alpha, 0.0, atol=0.0)
        assert_allclose(res.controls.z0, 0.0, atol=0.0)

    def test_single_particle_analytic_objective(self, default_config):
        # one particle: E = (m0 + alpha - q1(x0 + z0))^2, smooth and coercive
        target = gaussian_bump(24, 12.0, 12.0)
        template = gaussian_bump(24, 10.0, 12.0)
        x0 = np.array([[10.0, 12.0]])
        m0 = imf.eval(template, x0)
        res = opt.run(template, target, x0, m0, default_config, opt.OptimOptions(max_iters=50))
        assert res.energy_history[-1] < 1e-10
        assert res.iterations <= 50

    def test_energy_history_monotone_until_stop(self, default_config):
        template = gaussian_bump(24, 10.0, 12.0)
        target = gaussian_bump(24, 14.0, 12.0)
        x0, m0 = imf.sample_grid(template, 4)
        res = opt.run(
            template, target, x0, m0, default_config,
            opt.OptimOptions(max_iters=25, preconditioned=True),
        )
        assert np.all(np.diff(res.energy_history) <= 0)
        assert res.energy_history[-1] < res.energy_history[0]

    def test_histories_align(self, default_config):
        template = gaussian_bump(20, 9.0, 10.0)
        target = gaussian_bump(20, 11.0, 10.0)
        x0, m0 = imf.sample_grid(template, 5)
        res = opt.run(template, target, x0, m0, default_config, opt.OptimOptions(max_iters=5))
        assert len(res.energy_history) == len(res.grad_norm_history) == res.iterations + 1

    def test_grad_tol_stop(self, default_config):
        template = gaussian_bump(20, 9.0, 10.0)
        target = gaussian_bump(20, 12.0, 10.0)
        x0, m0 = imf.sample_grid(template, 4)
        res = opt.run(
            template, target, x0, m0, default_config,
            opt.OptimOptions(max_iters=100, grad_tol=0.2, preconditioned=True),
        )
        assert res.status is opt.OptimStatus.converged_grad
        assert res.grad_norm_history[-1] <= 0.2 * res.grad_norm_history[0]

    def test_constrained_controls_tied_exactly(self, default_config):
        template = gaussian_bump(20, 9.0, 10.0)
        target = gaussian_bump(20, 12.0, 10.0)
        x0, m0 = imf.sample_grid(template, 4)
        res = opt.run(
            template, target, x0, m0, default_config,
            opt.OptimOptions(max_iters=10, constrained=True),
        )
        tied = -res.controls.alpha[:, None] * imf.grad(template, x0)
        assert np.array_equal(res.controls.z0, tied)

    def test_preconditioning_keeps_zero_gradient_fixed_points(self, default_config):
        # both runs must drive the raw gradient toward zero on the same problem
        template = gaussian_bump(20, 9.0, 10.0)
        target = gaussian_bump(20, 12.0, 10.0)
        x0, m0 = imf.sample_grid(template, 4)
        plain = opt.run(template, target, x0, m0, default_config,
                        opt.OptimOptions(max_iters=150))
        pre = opt.run(template, target, x0, m0, default_config,
                      opt.OptimOptions(max_iters=150, preconditioned=True))
        for res in (plain, pre):
            assert res.energy_history[-1] < 1e-2 * res.energy_history[0]
            assert res.grad_norm_history[-1] < 1e-2 * res.grad_norm_history[0]

    def test_line_search_failure_returns_best_so_far(self, default_config):
        # a single allowed trial with a draconian acceptance constant fails
        # as soon as the model over-promises; the run must surface the status
        # and keep the best evaluated controls
        template = gaussian_bump(20, 9.0, 10.0)
        target = gaussian_bump(20, 13.0, 10.0)
        x0, m0 = imf.sample_grid(template, 3)
        res = opt.run(
            template, target, x0, m0, default_config,
            opt.OptimOptions(max_iters=400, ls_max_evals=1, ls_c1=0.999999),
        )
        assert res.status is opt.OptimStatus.line_search_failed
        assert np.all(np.diff(res.energy_history) <= 0)
        e_final = energy(shoot(x0, m0, res.controls, default_config), target)
        assert e_final <= res.energy_history[-1] + 1e-12

    def test_iteration_log_stream(self, default_config):
        template = gaussian_bump(20, 9.0, 10.0)
        target = gaussian_bump(20, 11.0, 10.0)
        x0, m0 = imf.sample_grid(template, 5)
        log = io.StringIO()
        res = opt.run(template, target, x0, m0, default_config,
                      opt.OptimOptions(max_iters=3), log_stream=log)
        records = [json.loads(line) for line in log.getvalue().splitlines()]
        assert len(records) == res.iterations + 1
        for rec in records:
            assert set(rec) == {"iter", "energy", "grad_norm", "step", "status"}
        assert records[-1]["status"] == res.status.value


class TestOptionValidation:
    def test_bad_options_rejected(self):
        with pytest.raises(ValueError):
            opt.OptimOptions(ls_shrink=1.0)
        with pytest.raises(ValueError):
            opt.OptimOptions(ls_c1=0.0)
        with pytest.raises(ValueError):
            opt.OptimOptions(max_iters=0)
        with pytest.raises(ValueError):
            opt.OptimOptions(grad_tol=0.0)
