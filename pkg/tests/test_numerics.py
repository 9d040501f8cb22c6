import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from paradiag.exceptions import Breakdown, MaxIterations, SingularBlock
from paradiag.numerics import (
    BlockOptions,
    BlockSolver,
    ComplexProxyBlock,
    WeightedDftPlan,
    as_csr,
    complex_proxy_matrix,
    complex_proxy_solve,
    fft_forward,
    fft_inverse,
    gmres,
    weighted_forward,
    weighted_inverse,
)

from .oracles import complex_solve, direct_dft


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300)


class TestFFT:
    def test_delta(self):
        np.testing.assert_allclose(fft_forward([1, 0]), [1, 1])

    def test_constant(self):
        np.testing.assert_allclose(fft_forward([1, 1, 1, 1]), [4, 0, 0, 0], atol=1e-15)

    def test_matches_direct_dft(self, rng):
        v = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        assert rel(fft_forward(v), direct_dft(v)) < 1e-12

    def test_inverse_divides_by_n(self):
        np.testing.assert_allclose(fft_inverse([4, 0, 0, 0]), [1, 1, 1, 1])

    @pytest.mark.parametrize("n", [1, 7, 64, 4096])
    def test_round_trip(self, rng, n):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        assert rel(fft_inverse(fft_forward(v)), v) < 1e-12


class TestWeightedDftPlan:
    def test_gamma_first_entry_and_monotone(self):
        g = WeightedDftPlan(8, 0.01).gamma
        assert g[0] == 1.0
        assert np.all(np.diff(g) < 0)

    def test_gamma_unit_for_alpha_one(self):
        assert np.all(WeightedDftPlan(5, 1.0).gamma == 1.0)

    def test_gamma_read_only(self):
        with pytest.raises(ValueError):
            WeightedDftPlan(4, 0.5).gamma[0] = 2.0

    @pytest.mark.parametrize("nt, alpha", [(0, 0.5), (4, 0.0), (4, 1.5), (2.5, 0.5)])
    def test_rejects_bad_parameters(self, nt, alpha):
        with pytest.raises(ValueError):
            WeightedDftPlan(nt, alpha)

    def test_alpha_one_is_plain_fft(self, rng):
        v = rng.standard_normal(6)
        np.testing.assert_allclose(weighted_forward(WeightedDftPlan(6, 1.0), v), fft_forward(v))

    def test_hand_example(self):
        out = weighted_forward(WeightedDftPlan(2, 0.25), np.array([1.0, -1.0]))
        np.testing.assert_allclose(out, [0.5, 1.5])

    def test_round_trip_small_alpha(self, rng):
        plan = WeightedDftPlan(64, 1e-4)
        v = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        assert rel(weighted_inverse(plan, weighted_forward(plan, v)), v) < 1e-12

    def test_axis_argument(self, rng):
        plan = WeightedDftPlan(4, 0.1)
        X = rng.standard_normal((3, 4))
        rows = np.array([plan.forward(x) for x in X])
        np.testing.assert_allclose(plan.forward(X, axis=1), rows)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            WeightedDftPlan(4, 0.1).forward(np.ones(3))

    @settings(max_examples=40, deadline=None)
    @given(nt=st.integers(1, 1024), alpha=st.floats(1e-4, 1.0), seed=st.integers(0, 2**32 - 1))
    def test_round_trip_property(self, nt, alpha, seed):
        r = np.random.default_rng(seed)
        plan = WeightedDftPlan(nt, alpha)
        v = r.standard_normal(nt) + 1j * r.standard_normal(nt)
        assert rel(plan.inverse(plan.forward(v)), v) < 1e-12


class TestSparse:
    def test_csr_sorted_and_deduplicated(self):
        A = sp.coo_matrix(([1.0, 2.0, 3.0], ([0, 0, 1], [2, 2, 0])), shape=(2, 3))
        C = as_csr(A)
        assert C.has_sorted_indices
        for i in range(C.shape[0]):
            idx = C.indices[C.indptr[i]:C.indptr[i + 1]]
            assert np.all(np.diff(idx) > 0)
        assert C[0, 2] == 3.0

    def test_matvec_and_linearity(self, rng):
        A = as_csr(sp.random(20, 20, density=0.3, random_state=1))
        x, y = rng.standard_normal(20), rng.standard_normal(20)
        assert rel(A @ x, A.toarray() @ x) < 1e-12
        assert rel(A @ (2 * x - 3 * y), 2 * (A @ x) - 3 * (A @ y)) < 1e-12


class TestComplexProxy:
    def test_identity_system(self, rng):
        b = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        I = sp.identity(5)
        x = complex_proxy_solve(sp.csr_matrix((5, 5)), I, 1.0, 0.0, b)
        np.testing.assert_allclose(x, b, atol=1e-14)

    def test_real_coefficients_give_real_solution(self, rng):
        A = sp.csr_matrix(rng.standard_normal((6, 6)) + 6 * np.eye(6))
        b = rng.standard_normal(6)
        x = complex_proxy_solve(A, sp.identity(6), 2.0, 0.5, b)
        assert np.abs(x.imag).max() <= 1e-12
        np.testing.assert_allclose(x.real, np.linalg.solve(2 * np.eye(6) + 0.5 * A.toarray(), b), rtol=1e-12)

    def test_matches_native_complex_solve(self, rng):
        A = rng.standard_normal((4, 4))
        b = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        x = complex_proxy_solve(sp.csr_matrix(A), sp.identity(4), 1 + 2j, 3 - 1j, b)
        assert rel(x, complex_solve(A, np.eye(4), 1 + 2j, 3 - 1j, b)) < 1e-10

    @pytest.mark.parametrize("method", ["dense_lu", "sparse_lu", "gmres"])
    def test_methods_agree(self, rng, method):
        n = 16
        A = sp.diags([-1, 2.5, -1], [-1, 0, 1], shape=(n, n))
        M = sp.identity(n)
        b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        x = complex_proxy_solve(A, M, 1 - 0.5j, 0.7 + 0.2j, b, method=method, tol=1e-12)
        assert rel(x, complex_solve(A, M, 1 - 0.5j, 0.7 + 0.2j, b)) < 1e-9

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(1, 32), seed=st.integers(0, 2**32 - 1))
    def test_embedding_property(self, n, seed):
        r = np.random.default_rng(seed)
        A = r.standard_normal((n, n)) + n * np.eye(n)
        M = np.eye(n) + 0.1 * r.standard_normal((n, n))
        l1 = complex(*r.uniform(0.5, 2, 2))
        l2 = complex(*r.uniform(0.5, 2, 2))
        b = r.standard_normal(n) + 1j * r.standard_normal(n)
        x = complex_proxy_solve(sp.csr_matrix(A), sp.csr_matrix(M), l1, l2, b)
        assert rel(x, complex_solve(A, M, l1, l2, b)) < 1e-10

    def test_embedding_layout(self):
        A = sp.csr_matrix([[2.0]])
        M = sp.csr_matrix([[1.0]])
        E = complex_proxy_matrix(A, M, 1 + 2j, 3 - 1j).toarray()
        re, im = 1 + 3 * 2, 2 - 1 * 2
        np.testing.assert_allclose(E, [[re, -im], [im, re]])

    def test_both_coefficients_zero(self):
        with pytest.raises(SingularBlock):
            complex_proxy_solve(sp.identity(3), sp.identity(3), 0.0, 0.0, np.ones(3))

    def test_singular_block(self):
        A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
        with pytest.raises(SingularBlock):
            complex_proxy_solve(A, sp.csr_matrix((2, 2)), 0.0, 1.0, np.ones(2))

    def test_inner_gmres_max_iterations(self, rng):
        n = 40
        A = sp.diags([-1, 2, -1], [-1, 0, 1], shape=(n, n))
        opts = BlockOptions("gmres", maxiter=2, preconditioner="none")
        block = ComplexProxyBlock(A, sp.identity(n), 1e-3, 1.0, opts, tol=1e-12)
        with pytest.raises(MaxIterations):
            block.solve(rng.standard_normal(n))

    def test_fixed_iterations(self, rng):
        n = 30
        A = sp.diags([-1, 2, -1], [-1, 0, 1], shape=(n, n))
        opts = BlockOptions("gmres", fixed_iters=3, preconditioner="none")
        _, its = ComplexProxyBlock(A, sp.identity(n), 1.0, 1.0, opts).solve(rng.standard_normal(n))
        assert its == 3


class TestBlockSolver:
    def test_direct_counts_one_iteration(self, rng):
        A = sp.csr_matrix(np.diag([1.0, 2.0, 4.0]))
        x, its = BlockSolver(A).solve(np.array([1.0, 2.0, 4.0]))
        np.testing.assert_allclose(x, 1.0)
        assert its == 1

    def test_rejects_unknown_method(self):
        with pytest.raises(ValueError):
            BlockOptions("cholesky")


class TestGmres:
    def test_identity_one_iteration(self, rng):
        b = rng.standard_normal(10)
        res = gmres(lambda v: v, b, psolve=lambda v: v, rtol=1e-12)
        assert res.iterations == 1
        np.testing.assert_allclose(res.x, b)

    def test_zero_rhs(self):
        res = gmres(lambda v: v, np.zeros(4))
        assert res.iterations == 0 and res.converged

    def test_solves_nonsymmetric_system(self, rng):
        A = rng.standard_normal((30, 30)) + 10 * np.eye(30)
        b = rng.standard_normal(30)
        res = gmres(lambda v: A @ v, b, rtol=1e-12, maxiter=30)
        assert np.linalg.norm(b - A @ res.x) <= 1e-12 * np.linalg.norm(b) * 1.01
        assert res.residuals[-1] == pytest.approx(np.linalg.norm(b - A @ res.x))

    def test_restarted(self, rng):
        A = rng.standard_normal((30, 30)) + 10 * np.eye(30)
        b = rng.standard_normal(30)
        res = gmres(lambda v: A @ v, b, rtol=1e-10, restart=5, maxiter=200)
        assert np.linalg.norm(b - A @ res.x) <= 1e-10 * np.linalg.norm(b) * 1.01

    def test_flexible_saves_one_application(self, rng):
        A = rng.standard_normal((20, 20)) + 8 * np.eye(20)
        D = np.diag(1 / np.diag(A))
        b = rng.standard_normal(20)
        g = gmres(lambda v: A @ v, b, psolve=lambda v: D @ v, rtol=1e-10)
        f = gmres(lambda v: A @ v, b, psolve=lambda v: D @ v, rtol=1e-10, flexible=True)
        assert g.iterations == f.iterations
        assert g.pc_applications == f.pc_applications + 1
        np.testing.assert_allclose(g.x, f.x, rtol=1e-8)

    def test_max_iterations_carries_history(self, rng):
        A = np.diag(np.linspace(1, 1000, 50))
        with pytest.raises(MaxIterations) as info:
            gmres(lambda v: A @ v, rng.standard_normal(50), rtol=1e-14, maxiter=3)
        assert len(info.value.history) == 4

    def test_breakdown_short_of_tolerance(self):
        # A singular operator whose Krylov space is exhausted before the residual vanishes
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(Breakdown):
            gmres(lambda v: A @ v, np.array([0.0, 1.0]), rtol=1e-12, maxiter=10)
