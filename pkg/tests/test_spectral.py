import math

import numpy as np
import pytest

from labelprior.model import QboProblem, SolverTag
from labelprior.spectral import (QrReducedProblem, SpectralConfig, SpectralError, TrsProblem,
                                 companion_matrix, qr_relaxation, spectral_decode,
                                 spectral_decode_qr, trs_solve)
from oracles import brute_max, brute_max_k, circle_search, random_general, trs_oracle


def _hard_instance(rng, V, near=0.0):
    A = rng.standard_normal((V, V))
    A = 0.5 * (A + A.T)
    w, Q = np.linalg.eigh(A)
    c = rng.standard_normal(V)
    c -= Q[:, 0] * (Q[:, 0] @ c)
    c *= 0.05 * (w[1] - w[0]) / np.linalg.norm(c)
    c += near * Q[:, 0]
    return A, c


class TestTrs:
    def test_zero_linear_term(self, rng):
        A = rng.standard_normal((5, 5))
        A = 0.5 * (A + A.T)
        u, val, lam = trs_solve(TrsProblem(A, np.zeros(5), 5))
        w, Q = np.linalg.eigh(A)
        assert val == pytest.approx(-5 * w[0], rel=1e-12)
        assert abs(abs(u @ Q[:, 0]) - math.sqrt(5)) < 1e-10

    def test_two_dimensional_closed_form(self):
        u, val, lam = trs_solve(TrsProblem(np.diag([1.0, 2.0]), [2.0, 0.0], 2))
        assert val == pytest.approx(2 * math.sqrt(2) - 2, abs=1e-9)
        assert np.allclose(u, [math.sqrt(2), 0], atol=1e-9)

    @pytest.mark.parametrize("seed", range(4))
    def test_random_suite_against_secular_oracle(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(40):
            V = int(rng.integers(1, 9))
            A = rng.standard_normal((V, V))
            A = 0.5 * (A + A.T)
            c = rng.standard_normal(V) * rng.choice([0.01, 1, 10])
            u, val, lam = trs_solve(TrsProblem(A, c, V))
            assert val == pytest.approx(trs_oracle(A, c, V), abs=1e-6)
            assert u @ u == pytest.approx(V, rel=1e-8)
            assert np.linalg.norm((A - lam * np.eye(V)) @ u - 0.5 * c) <= 1e-6 * (1 + abs(lam))
            assert lam <= np.linalg.eigvalsh(A)[0] + 1e-9

    @pytest.mark.parametrize("near", [0.0, 1e-14, 1e-11, 1e-8])
    def test_hard_and_near_hard_cases(self, near):
        rng = np.random.default_rng(17)
        for _ in range(10):
            V = int(rng.integers(2, 9))
            A, c = _hard_instance(rng, V, near)
            u, val, lam = trs_solve(TrsProblem(A, c, V))
            assert val == pytest.approx(trs_oracle(A, c, V), abs=1e-6)
            assert u @ u == pytest.approx(V, rel=1e-8)
            assert np.linalg.norm((A - lam * np.eye(V)) @ u - 0.5 * c) <= 1e-6

    def test_companion_eigenvalue_is_the_multiplier(self):
        # the smallest real eigenvalue of the companion matrix is the optimal multiplier;
        # the smallest singular value of the same matrix is not
        rng = np.random.default_rng(5)
        eig_ok = svd_ok = 0
        for _ in range(30):
            V = int(rng.integers(2, 7))
            A = rng.standard_normal((V, V))
            A = 0.5 * (A + A.T)
            c = rng.standard_normal(V)
            _, _, lam = trs_solve(TrsProblem(A, c, V))
            S = companion_matrix(A, c, V)
            mu = np.linalg.eigvals(S)
            real = mu[np.abs(mu.imag) < 1e-8].real
            eig_ok += abs(real.min() - lam) < 1e-6 * (1 + abs(lam))
            svd_ok += abs(np.linalg.svd(S, compute_uv=False).min() - lam) < 1e-6 * (1 + abs(lam))
        assert eig_ok == 30 and svd_ok == 0

    def test_validation(self):
        with pytest.raises(ValueError):
            TrsProblem(np.eye(2), [1, 1], 0.0)
        with pytest.raises(ValueError):
            TrsProblem(np.eye(3), [1, 1], 2.0)


class TestDecode:
    def test_linear_objective(self):
        sol = spectral_decode(QboProblem(np.zeros((2, 2)), [3.0, -1.0]))
        assert np.allclose(sol.relaxed_u, np.array([3, -1]) * math.sqrt(2 / 10))
        assert sol.rounded.tolist() == [1, -1]
        assert sol.relaxation_value == pytest.approx(math.sqrt(20))

    def test_attractive_pair_bounds(self):
        sol = spectral_decode(QboProblem([[0, -1], [-1, 0]], [2, -0.5]))
        assert sol.relaxation_value >= 3.5 - 1e-12 and sol.rounded_value <= 3.5 + 1e-12

    def test_balanced_pair(self):
        p = QboProblem(np.zeros((2, 2)), [1.0, 1.0], (np.ones(2), 0.0))
        sol = spectral_decode(p)
        assert sol.relaxation_value >= -1e-9
        assert (sol.rounded > 0).sum() == 1 and sol.rounded_value == 0.0

    @pytest.mark.parametrize("seed", range(6))
    def test_relaxation_bound_and_feasibility(self, seed):
        rng = np.random.default_rng(200 + seed)
        for _ in range(8):
            V = int(rng.integers(2, 13))
            A, b = random_general(rng, V)
            k = int(rng.integers(0, V + 1))
            for p, exact in ((QboProblem(A, b), brute_max(A, b)[0]),
                             (QboProblem.with_cardinality(A, b, k), brute_max_k(A, b, k)[0])):
                sol = spectral_decode(p)
                assert sol.relaxation_value >= exact - 1e-6
                assert sol.rounded_value <= exact + 1e-9
                assert p.is_feasible(sol.rounded)
                assert sol.rounded_value == pytest.approx(p.objective(sol.rounded), abs=0)

    def test_tangent_constraint(self):
        A, b = random_general(np.random.default_rng(1), 4)
        sol = spectral_decode(QboProblem.with_cardinality(A, b, 4))
        assert sol.rounded.tolist() == [1] * 4
        assert sol.relaxation_value == pytest.approx(sol.rounded_value)

    def test_hyperplane_misses_sphere(self):
        with pytest.raises(SpectralError):
            spectral_decode(QboProblem(np.zeros((2, 2)), [1, 1], (np.array([1.0, 0.0]), 5.0)))

    def test_bracket_failure_is_reported(self):
        p = QboProblem.with_cardinality(np.zeros((4, 4)), [50.0, 40, 30, 20], 1)
        with pytest.raises(SpectralError, match="bracket"):
            spectral_decode(p, SpectralConfig(mu_cap=0.5))

    def test_convexity_check_runs(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            A, b = random_general(rng, 6)
            spectral_decode(QboProblem.with_cardinality(A, b, 2),
                            SpectralConfig(check_convexity=True))

    def test_zero_alpha_rejected(self):
        p = QboProblem(np.zeros((3, 3)), [1, 2, 3], (np.zeros(3), 0.0))
        with pytest.raises(ValueError):
            spectral_decode(p)
        with pytest.raises(ValueError):
            spectral_decode_qr(p)


def _hyperplane_sphere_oracle(A, b, alpha, beta):
    """Constrained sphere optimum by an orthonormal hyperplane basis and the secular oracle."""
    V = len(b)
    A = 0.5 * (A + A.T)
    center = beta * alpha / (alpha @ alpha)
    _, _, Vt = np.linalg.svd(alpha[None, :])
    N = Vt[1:].T                                   # V x (V-1), orthonormal, N'alpha = 0
    r = V - center @ center
    const = center @ b - center @ A @ center
    c = N.T @ (b - 2 * A @ center)
    return const + trs_oracle(N.T @ A @ N, c, r)


class TestQr:
    def test_factorization_reproduces_constraints(self):
        rng = np.random.default_rng(4)
        A, b = random_general(rng, 5)
        alpha = rng.standard_normal(5)
        red = QrReducedProblem.from_problem(QboProblem(A, b, (alpha, 0.7)))
        Nmat = np.zeros((6, 2))
        Nmat[:5, 0], Nmat[5, 1] = alpha, 1.0
        assert np.abs(red.Q[:, :2] @ red.R[:2] - Nmat).max() <= 1e-12
        v = red.Q @ np.concatenate([red.fixed, rng.standard_normal(4)])
        assert v[:5] @ alpha == pytest.approx(0.7, abs=1e-12) and v[5] == pytest.approx(1.0)

    def test_small_example_three_ways(self):
        p = QboProblem(np.zeros((3, 3)), [1.0, 2.0, 3.0], (np.ones(3), 1.0))
        grid = circle_search(p.A, p.b, np.ones(3), 1.0)
        qr = spectral_decode_qr(p)
        dual = spectral_decode(p)
        assert qr.relaxation_value == pytest.approx(grid, abs=1e-6)
        assert dual.relaxation_value == pytest.approx(grid, abs=1e-6)
        assert qr.solver_tag is SolverTag.SPECTRAL_QR
        assert (qr.rounded > 0).sum() == 2

    @pytest.mark.parametrize("seed", range(4))
    def test_qr_matches_constrained_sphere_oracle(self, seed):
        rng = np.random.default_rng(400 + seed)
        for _ in range(10):
            V = int(rng.integers(2, 9))
            A, b = random_general(rng, V)
            alpha = rng.standard_normal(V) if seed % 2 else np.ones(V)
            beta = float(rng.uniform(-0.8, 0.8) * np.linalg.norm(alpha) * math.sqrt(V))
            p = QboProblem(A, b, (alpha, beta))
            u, value, _, _ = qr_relaxation(p)
            assert u @ alpha == pytest.approx(beta, abs=1e-9) and u @ u == pytest.approx(V)
            assert value == pytest.approx(
                _hyperplane_sphere_oracle(p.A, b, alpha, beta), abs=1e-6)

    def test_random_v6_suite_against_bisection(self):
        # agreement wherever the bisection reaches a zero subgradient; elsewhere the
        # dual minimizer sits at a kink and weak duality is all that holds
        rng = np.random.default_rng(6)
        converged = 0
        for _ in range(60):
            A, b = random_general(rng, 6)
            k = int(rng.integers(1, 6))
            p = QboProblem.with_cardinality(A, b, k)
            qr, dual = spectral_decode_qr(p), spectral_decode(p)
            assert dual.relaxation_value >= qr.relaxation_value - 1e-7
            assert qr.relaxation_value >= brute_max_k(A, b, k)[0] - 1e-9
            if dual.info["converged"]:
                converged += 1
                assert dual.relaxation_value == pytest.approx(qr.relaxation_value, abs=1e-6)
        assert converged >= 20

    def test_zero_slack_rejected(self):
        p = QboProblem(np.zeros((2, 2)), [1, 1], (np.array([1.0, 1.0]), 2.0))
        with pytest.raises(SpectralError):
            spectral_decode_qr(p)
