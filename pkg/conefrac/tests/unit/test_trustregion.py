"""Unit tests for the trust-region subproblem and minimizer."""

import math

import numpy as np
import pytest
from scipy import sparse
from scipy.linalg import cholesky, eigh

from conefrac.core.errors import NotPositiveDefiniteError, TrustRegionError
from conefrac.services.assembly.bulk import EnergyEval
from conefrac.services.trustregion import (
    TRConfig,
    compute_delta_xi,
    minimize,
    q_and_derivative,
    is_positive_definite,
    scaling_matrix,
    start_metric,
)

TIGHT = TRConfig(tol4=1e-10)


def _n_norm(p, N):
    return math.sqrt(p @ N @ p)


def double_well(xi, order=2):
    """(x^2 - 1)^2 + y^2."""
    x, y = xi
    value = (x**2 - 1.0) ** 2 + y**2
    gradient = np.array([4.0 * x * (x**2 - 1.0), 2.0 * y]) if order >= 1 else None
    hessian = np.diag([12.0 * x**2 - 4.0, 2.0]) if order >= 2 else None
    return EnergyEval(value, gradient, hessian)


def steep_wall(xi, order=2):
    """-x - x^2/4 - log(1 - x)/10, whose barrier wall sits just past the first trial step."""
    x = float(xi[0])
    if x >= 1.0:
        return EnergyEval(math.inf)
    value = -x - 0.25 * x**2 - 0.1 * math.log(1.0 - x)
    gradient = np.array([-1.0 - 0.5 * x + 0.1 / (1.0 - x)])
    hessian = np.array([[-0.5 + 0.1 / (1.0 - x) ** 2]])
    return EnergyEval(value, gradient, hessian)


class TestSubproblem:
    """Test compute_delta_xi and the secular function."""

    def test_boundary_solution(self):
        """Test H = I, g = (2, 0), R = 1, where lambda = 1 and p = -g/2."""
        step, lam = compute_delta_xi(np.eye(2), np.eye(2), np.array([2.0, 0.0]), 1.0)

        assert lam == pytest.approx(1.0)
        np.testing.assert_allclose(step, [-1.0, 0.0])

    def test_interior_solution(self):
        """Test that a short Newton step is returned with lambda = 0."""
        step, lam = compute_delta_xi(np.diag([2.0, 4.0]), np.eye(2), np.array([2.0, 4.0]), 10.0)

        assert lam == 0.0
        np.testing.assert_allclose(step, [-1.0, -1.0])

    def test_zero_gradient(self):
        """Test the stationary shortcut."""
        step, lam = compute_delta_xi(-np.eye(3), np.eye(3), np.zeros(3), 1.0)

        assert lam == 0.0
        np.testing.assert_allclose(step, 0.0)

    def test_random_subproblems_satisfy_optimality(self, rng):
        """Test (H + lam N) p = -g, H + lam N psd, lam >= 0 and complementarity."""
        for _ in range(25):
            n = int(rng.integers(2, 8))
            A = rng.standard_normal((n, n))
            H = 0.5 * (A + A.T)
            B = rng.standard_normal((n, n))
            N = B @ B.T + n * np.eye(n)
            g = rng.standard_normal(n)
            R = float(rng.uniform(0.05, 2.0))

            step, lam = compute_delta_xi(H, N, g, R, TIGHT)

            K = H + lam * N
            L = cholesky(N, lower=True)
            Kt = np.linalg.solve(L, np.linalg.solve(L, K).T)
            assert lam >= 0.0
            assert eigh(Kt, eigvals_only=True).min() >= -1e-8 * max(1.0, lam)
            assert _n_norm(step, N) <= R * (1.0 + 1e-8)
            if lam > TIGHT.tol1:
                assert _n_norm(step, N) == pytest.approx(R, rel=1e-8)
                np.testing.assert_allclose(K @ step, -g, atol=1e-6 * (1.0 + np.abs(g).max()))

    def test_secular_function_decreases(self):
        """Test q(lam) = 1/R - 1/|p|_N and its derivative on the definite range."""
        H = np.array([[3.0, 1.0], [1.0, 2.0]])
        N = np.diag([1.0, 4.0])
        g = np.array([1.0, -2.0])
        lams = [0.0, 0.5, 1.0, 2.0, 5.0]

        values = [q_and_derivative(lam, H, N, g, 0.5) for lam in lams]

        qs = [v[0] for v in values]
        assert all(a > b for a, b in zip(qs, qs[1:]))
        assert all(v[1] < 0.0 for v in values)
        h = 1e-6
        fd = (q_and_derivative(1.0 + h, H, N, g, 0.5)[0] - q_and_derivative(1.0 - h, H, N, g, 0.5)[0]) / (2 * h)
        assert values[2][1] == pytest.approx(fd, rel=1e-6)

    def test_secular_function_needs_definite_shift(self):
        """Test the factorization failure."""
        with pytest.raises(NotPositiveDefiniteError):
            q_and_derivative(0.5, -np.eye(2), np.eye(2), np.ones(2), 1.0)

    def test_sparse_and_dense_agree(self):
        """Test that CSR input gives the dense answer."""
        H = np.diag([-1.0, 2.0, 3.0]) + 0.1 * np.ones((3, 3))
        N = np.diag([1.0, 2.0, 0.5])
        g = np.array([1.0, -1.0, 0.5])

        dense = compute_delta_xi(H, N, g, 0.7, TIGHT)
        csr = compute_delta_xi(sparse.csr_matrix(H), sparse.csr_matrix(N), g, 0.7, TIGHT)

        np.testing.assert_allclose(csr[0], dense[0], rtol=1e-10)
        assert csr[1] == pytest.approx(dense[1], rel=1e-10)

    def test_sampled_model_decrease(self, rng):
        """Test 50 indefinite instances against the best of 10^5 points sampled in the N-ball."""
        for _ in range(50):
            n = int(rng.integers(2, 6))
            Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
            eigs = rng.uniform(-2.0, 2.0, n)
            eigs[0] = -abs(eigs[0]) - 0.1
            H = Q @ np.diag(eigs) @ Q.T
            B = rng.standard_normal((n, n))
            N = B @ B.T + n * np.eye(n)
            g = rng.standard_normal(n)
            R = float(rng.uniform(0.1, 2.0))

            step, _ = compute_delta_xi(H, N, g, R, TIGHT)

            direction = rng.standard_normal((100_000, n))
            direction /= np.linalg.norm(direction, axis=1)[:, None]
            radius = R * rng.uniform(0.0, 1.0, 100_000) ** (1.0 / n)
            L = cholesky(N, lower=True)
            samples = np.linalg.solve(L.T, (direction * radius[:, None]).T).T
            sampled = samples @ g + 0.5 * np.einsum("ki,ij,kj->k", samples, H, samples)
            best = float(sampled.min())
            model = float(g @ step + 0.5 * step @ H @ step)
            assert _n_norm(step, N) <= R * (1.0 + 1e-8)
            assert model <= best + 1e-3 * abs(best)

    def test_hard_case(self):
        """Test g orthogonal to the most negative eigenvector of H."""
        H = np.diag([-1.0, 2.0])
        g = np.array([0.0, 1.0])

        step, lam = compute_delta_xi(H, np.eye(2), g, 2.0)

        assert lam == pytest.approx(1.0, abs=1e-6)
        assert np.linalg.norm(step) == pytest.approx(2.0, rel=1e-6)
        assert step[1] == pytest.approx(-1.0 / 3.0, abs=1e-6)
        assert abs(step[0]) == pytest.approx(math.sqrt(4.0 - 1.0 / 9.0), rel=1e-6)


class TestScalingMatrix:
    """Test the scaled norm."""

    def test_shift(self):
        """Test N = H_bar + 1e-3 nu I."""
        N = scaling_matrix(np.diag([2.0, 3.0]), 5.0, 2)

        np.testing.assert_allclose(N.toarray(), np.diag([2.005, 3.005]))

    def test_missing_and_mismatched(self):
        """Test that absent or stale preprocessed Hessians fall back to a multiple of I."""
        np.testing.assert_allclose(scaling_matrix(None, 0.0, 2).toarray(), np.eye(2))
        np.testing.assert_allclose(scaling_matrix(np.eye(3), 100.0, 2).toarray(), 0.1 * np.eye(2))

    def test_shift_is_raised_until_definite(self):
        """Test the tenfold shift increase."""
        N = scaling_matrix(np.diag([-1.0, 1.0]), 1.0, 2)

        np.testing.assert_allclose(N.toarray(), np.diag([9.0, 11.0]))

    def test_weighted_shift(self):
        """Test N = H_bar + 1e-3 nu diag(w)."""
        N = scaling_matrix(np.eye(2), 1.0, 2, weights=np.array([4.0, 0.5]))

        np.testing.assert_allclose(N.toarray(), np.diag([1.004, 1.0005]))

    @pytest.mark.parametrize(
        "A, expected",
        [(np.eye(2), True), (np.diag([1.0, 0.0]), False), (np.diag([1.0, -1.0]), False)],
    )
    def test_positive_definite(self, A, expected):
        """Test the factorization-based definiteness check."""
        assert is_positive_definite(sparse.csr_matrix(A)) is expected


class TestStartMetric:
    """Test the scaling matrix built at the start of a minimization."""

    def test_start_hessian_stands_in(self):
        """Test that badly scaled variables each get a shift in their own units."""
        N = start_metric(sparse.diags([1e8, 1e-2]))

        np.testing.assert_allclose(N.diagonal(), [1.001e8, 1.001e-2], rtol=1e-12)

    def test_scaled_norm(self):
        """Test nu as the 1-norm of the Jacobi-scaled Hessian."""
        H = np.array([[4.0, 2.0], [2.0, 1.0]])

        N = start_metric(H)

        np.testing.assert_allclose(N.toarray(), H + 2e-3 * np.diag([4.0, 1.0]))

    def test_indefinite_start_uses_shift_alone(self):
        """Test the fallback when the shifted start Hessian does not factor."""
        N = start_metric(np.diag([-4.0, 2.0]))

        np.testing.assert_allclose(N.toarray(), np.diag([4e-3, 2e-3]))

    def test_preprocessed_hessian_kept(self):
        """Test that a matching preprocessed Hessian replaces the start Hessian."""
        H_bar = sparse.csr_matrix([[2.0, 1.0], [1.0, 2.0]])

        N = start_metric(np.diag([1e6, 1.0]), H_bar)

        np.testing.assert_allclose(N.toarray(), [[1002.0, 1.0], [1.0, 2.001]])

    def test_stale_preprocessed_hessian_ignored(self):
        """Test that a Hessian of another size is dropped."""
        N = start_metric(np.diag([2.0, 2.0]), np.eye(3))

        np.testing.assert_allclose(N.toarray(), np.diag([2.002, 2.002]))


class TestMinimize:
    """Test the outer trust-region loop."""

    def test_double_well(self):
        """Test escape from an indefinite start to the minimizer (1, 0)."""
        result = minimize(double_well, np.array([0.1, 0.5]))

        assert result.converged
        np.testing.assert_allclose(result.xi, [1.0, 0.0], atol=1e-6)
        assert all(a >= b for a, b in zip(result.values, result.values[1:]))

    def test_gradient_ratio_rejection(self):
        """Test that a step with a good value ratio but a wild gradient is rejected."""
        R_init = 0.99 * math.sqrt(1.0004)

        result = minimize(steep_wall, np.array([0.0]), H_bar=np.eye(1), R_init=R_init)

        assert result.rejections["gradient_ratio"] >= 1
        assert result.xi[0] == pytest.approx((-1.0 + math.sqrt(8.2)) / 2.0, abs=1e-6)

    def test_barrier_problem(self, rng):
        """Test a strictly convex 10-variable log-barrier problem."""
        A = rng.standard_normal((10, 10))
        A = A @ A.T + np.eye(10)
        b = rng.standard_normal(10)
        mu = 0.1

        def barrier(xi, order=2):
            if np.any(xi <= 0.0):
                return EnergyEval(math.inf)
            value = 0.5 * xi @ A @ xi - b @ xi - mu * np.sum(np.log(xi))
            return EnergyEval(value, A @ xi - b - mu / xi, A + np.diag(mu / xi**2))

        result = minimize(barrier, np.ones(10))

        assert np.all(result.xi > 0.0)
        assert np.linalg.norm(A @ result.xi - b - mu / result.xi) <= 1e-6

    def test_nonconvex_barrier_problem(self, rng):
        """Test an indefinite quadratic in a barrier-bounded box against 10^5 sampled neighbours."""
        Q, _ = np.linalg.qr(rng.standard_normal((10, 10)))
        A = Q @ np.diag(np.linspace(-3.0, 2.0, 10)) @ Q.T
        b = rng.standard_normal(10)
        mu = 0.05

        def values(X):
            X = np.atleast_2d(X)
            inside = np.all((X > 0.0) & (X < 1.0), axis=1)
            out = np.full(len(X), math.inf)
            Y = X[inside]
            out[inside] = (
                0.5 * np.einsum("ki,ij,kj->k", Y, A, Y)
                - Y @ b
                - mu * np.sum(np.log(Y) + np.log(1.0 - Y), axis=1)
            )
            return out

        def barrier(xi, order=2):
            value = float(values(xi)[0])
            if not math.isfinite(value):
                return EnergyEval(math.inf)
            gradient = A @ xi - b - mu / xi + mu / (1.0 - xi)
            return EnergyEval(value, gradient, A + np.diag(mu / xi**2 + mu / (1.0 - xi) ** 2))

        assert eigh(A, eigvals_only=True).min() < 0.0
        result = minimize(barrier, np.full(10, 0.5))

        xi = result.xi
        assert np.all((xi > 0.0) & (xi < 1.0))
        assert np.linalg.norm(barrier(xi).gradient) <= 1e-6
        assert eigh(barrier(xi).hessian, eigvals_only=True).min() >= -1e-8
        offsets = rng.standard_normal((100_000, 10))
        offsets *= (1e-4 * rng.uniform(0.0, 1.0, 100_000) ** 0.1 / np.linalg.norm(offsets, axis=1))[:, None]
        assert values(xi + offsets).min() >= barrier(xi).value - 1e-10

    def test_infeasible_start(self):
        """Test that the start must lie in the domain."""
        with pytest.raises(TrustRegionError, match="infeasible"):
            minimize(steep_wall, np.array([2.0]))

    def test_iteration_cap(self):
        """Test the iteration limit."""
        with pytest.raises(TrustRegionError, match="no convergence"):
            minimize(double_well, np.array([0.1, 0.5]), cfg=TRConfig(max_iterations=1))

    @pytest.mark.parametrize("field, value", [("tol1", 0.0), ("tol4", -1.0), ("max_iterations", 0)])
    def test_config_validation(self, field, value):
        """Test that tolerances must be positive."""
        with pytest.raises(ValueError):
            TRConfig(**{field: value})
