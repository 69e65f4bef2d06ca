"""Kernel values, derivatives and Gram matrices against independent oracles.

Expected spot values were frozen from direct evaluation of the closed-form
profiles: at unit scaled distance the order-4 profile gives
(1 + 1 + 3/7 + 2/21 + 1/105) e^-1 = (38/15) e^-1 and the order-2 profile
(1 + 1 + 1/3) e^-1 = (7/3) e^-1.  Derivatives are checked against central
finite differences of the level below.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from metamorph import kernels
from metamorph.kernels import Family, KernelParams

V15 = KernelParams(1.5, Family.V)
H05 = KernelParams(0.5, Family.H)
V_AT_1 = 0.931961250967654  # (38/15) exp(-1)
H_AT_1 = 0.858385362733366  # (7/3) exp(-1)


def fd_grad(params, x, y, h):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (kernels.eval(params, x + e, y) - kernels.eval(params, x - e, y)) / (2 * h)
    return g


def fd_hess(params, x, y, h):
    d = len(x)
    out = np.zeros((d, d))
    for i in range(d):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (kernels.grad1(params, x + e, y) - kernels.grad1(params, x - e, y)) / (2 * h)
    return out.T


class TestEval:
    def test_unit_at_coincident_points(self):
        for params in (V15, H05, KernelParams(7.3, Family.V)):
            p = np.array([2.0, -1.0])
            assert kernels.eval(params, p, p) == 1.0

    def test_spot_value_V_at_unit_distance(self):
        assert_allclose(
            kernels.eval(V15, np.array([1.5, 0.0]), np.zeros(2)), V_AT_1, rtol=1e-6
        )

    def test_spot_value_H_at_unit_distance(self):
        assert_allclose(
            kernels.eval(H05, np.array([0.0, 0.5]), np.zeros(2)), H_AT_1, rtol=1e-6
        )

    def test_symmetric_exactly(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x, y = rng.uniform(-5, 5, (2, 2))
            for params in (V15, H05):
                assert kernels.eval(params, x, y) == kernels.eval(params, y, x)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            kernels.eval(V15, np.array([np.nan, 0.0]), np.zeros(2))
        with pytest.raises(ValueError):
            kernels.eval(V15, np.array([np.inf, 0.0]), np.zeros(2))

    def test_rejects_bad_tau(self):
        with pytest.raises(ValueError):
            KernelParams(0.0, Family.V)
        with pytest.raises(ValueError):
            KernelParams(-1.0, Family.H)


class TestGrad1:
    def test_zero_at_coincident_points(self):
        for params in (V15, H05):
            p = np.array([0.3, 0.7])
            assert_allclose(kernels.grad1(params, p, p), 0.0, atol=0.0)

    def test_small_offset_taylor_H(self):
        # profile expands as 1 - u^2/6, so d/dx1 at offset (h, 0) is -h/3 + O(h^3)
        params = KernelParams(1.0, Family.H)
        for h in (1e-3, 1e-4):
            g = kernels.grad1(params, np.array([h, 0.0]), np.zeros(2))
            assert_allclose(g[0], -h / 3.0, rtol=1e-5)
            assert g[1] == 0.0

    def test_antisymmetric_in_arguments(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x, y = rng.uniform(-4, 4, (2, 2))
            for params in (V15, H05):
                assert_allclose(
                    kernels.grad1(params, x, y), -kernels.grad1(params, y, x), atol=0.0
                )

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for params in (V15, H05):
            h = 1e-5 * params.tau
            for _ in range(25):
                x, y = rng.uniform(-4, 4, (2, 2))
                g = kernels.grad1(params, x, y)
                fd = fd_grad(params, x, y, h)
                assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


class TestHess11:
    def test_value_at_coincident_points_H(self):
        got = kernels.hess11(KernelParams(1.0, Family.H), np.zeros(2), np.zeros(2))
        assert_allclose(got, -np.eye(2) / 3.0, rtol=1e-12)

    def test_symmetric_matrix(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x, y = rng.uniform(-4, 4, (2, 2))
            for params in (V15, H05):
                m = kernels.hess11(params, x, y)
                assert_allclose(m, m.T, atol=1e-14)

    def test_hess12_is_negated_hess11(self):
        x, y = np.array([1.0, 2.0]), np.array([0.5, 0.1])
        full = kernels.evaluate(V15, x, y)
        assert_allclose(full.hess12, -full.hess11, atol=0.0)

    def test_matches_finite_differences_of_grad1(self):
        rng = np.random.default_rng(4)
        for params in (V15, H05):
            h = 1e-5 * params.tau
            for _ in range(25):
                x, y = rng.uniform(-4, 4, (2, 2))
                m = kernels.hess11(params, x, y)
                fd = fd_hess(params, x, y, h)
                assert np.linalg.norm(m - fd) < 1e-6 * max(np.linalg.norm(m), 1e-6)


class TestContinuityAtOrigin:
    """eval, grad1, hess11 are continuous across |x - y| -> 0."""

    @pytest.mark.parametrize("params", [V15, H05, KernelParams(3.0, Family.V)])
    def test_limits_match_tiny_offsets(self, params):
        p = np.array([0.2, -0.4])
        eps = 1e-8 * params.tau
        q = p + np.array([eps, 0.0])
        assert abs(kernels.eval(params, p, q) - kernels.eval(params, p, p)) < 1e-6
        assert np.linalg.norm(kernels.grad1(params, p, q) - kernels.grad1(params, p, p)) < 1e-6
        assert (
            np.linalg.norm(kernels.hess11(params, p, q) - kernels.hess11(params, p, p)) < 1e-6
        )


class TestGramMatrix:
    def test_single_point(self):
        g = kernels.gram_matrix(V15, np.array([[1.0, 2.0]]))
        assert g.shape == (1, 1) and g[0, 0] == 1.0

    def test_far_separation_is_identity(self):
        pts = np.array([[0.0, 0.0], [1e6, 0.0]])
        assert_allclose(kernels.gram_matrix(H05, pts), np.eye(2), atol=1e-300)

    def test_unit_diagonal_and_symmetry(self):
        pts = np.random.default_rng(5).uniform(0, 10, (20, 2))
        g = kernels.gram_matrix(V15, pts)
        assert np.all(np.diag(g) == 1.0)
        assert_allclose(g, g.T, atol=0.0)

    @pytest.mark.parametrize("n", [5, 17, 50])
    def test_positive_semidefinite(self, n):
        rng = np.random.default_rng(n)
        for params in (V15, H05):
            pts = rng.uniform(0, 10, (n, 2))
            g = kernels.gram_matrix(params, pts)
            min_eig = np.linalg.eigvalsh(g).min()
            assert min_eig >= -1e-10 * np.trace(g) / n


class TestCoeffTables:
    """The blocked engine agrees with the scalar API."""

    def test_tables_match_pointwise_api(self):
        rng = np.random.default_rng(6)
        xs = rng.uniform(0, 8, (7, 2))
        ys = rng.uniform(0, 8, (9, 2))
        tab = kernels.coeff_tables(V15, H05, xs, ys, hess=True)
        for i in range(7):
            for j in range(9):
                assert_allclose(tab.value_v[i, j], kernels.eval(V15, xs[i], ys[j]), rtol=1e-13)
                assert_allclose(tab.value_h[i, j], kernels.eval(H05, xs[i], ys[j]), rtol=1e-13)
                d = xs[i] - ys[j]
                assert_allclose(
                    tab.gamma_v[i, j] * d, kernels.grad1(V15, xs[i], ys[j]), rtol=1e-12
                )
                want = kernels.hess11(H05, xs[i], ys[j])
                got = tab.gamma_h[i, j] * np.eye(2) + tab.hcoef_h[i, j] * np.outer(d, d)
                assert_allclose(got, want, rtol=1e-11, atol=1e-14)

    def test_shared_exponential_matches_generic_path(self):
        # tau ratio 3 runs the cubed-exponential shortcut; an incommensurate
        # ratio takes the generic second exp
        rng = np.random.default_rng(7)
        xs = rng.uniform(0, 8, (6, 2))
        fast = kernels.coeff_tables(V15, H05, xs, xs)
        slow = kernels.coeff_tables(KernelParams(1.5, Family.V), KernelParams(0.5001, Family.H), xs, xs)
        direct = kernels.coeff_tables(KernelParams(4.5, Family.V), H05, xs, xs)
        assert_allclose(fast.value_h, direct.value_h, rtol=1e-14)
        assert not np.allclose(slow.value_h, fast.value_h, rtol=1e-6)
