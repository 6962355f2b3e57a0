import math

import numpy as np
import pytest
import scipy.sparse as sp

from bscahn.assembly import (
    BulkSurfacePair,
    CompatibilityError,
    CouplingParams,
    assemble,
    sigma,
)

from _oracles import dense_poincare, dense_solve_S

CP = CouplingParams(K=1.0, L=1.0, alpha=0.5, beta=2.0)


def random_pair(ops, rng, scale=1.0):
    return BulkSurfacePair(
        scale * rng.standard_normal(ops.n_bulk), scale * rng.standard_normal(ops.n_surf)
    )


def mean_free(ops, cp, pair):
    if math.isinf(cp.L):
        mb, ms = ops.component_means(pair)
        return pair - ops.constant_pair(mb, ms)
    c = ops.bs_mean(pair, cp)
    return pair - ops.constant_pair(cp.beta * c, c)


class TestCouplingParams:
    def test_sigma_cases(self):
        assert sigma(0.0) == 0.0
        assert sigma(math.inf) == 0.0
        assert sigma(4.0) == 0.25

    def test_gamma_flags_zero(self):
        assert CouplingParams(K=0.0, L=1.0, alpha=0.5, beta=1.0).gamma_K == 1.0
        assert CP.gamma_K == 0.0

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            CouplingParams(K=1.0, L=1.0, alpha=1.5, beta=1.0)

    def test_degenerate_measures_rejected(self, ops2):
        cp = CouplingParams(K=1.0, L=1.0, alpha=-1.0, beta=4.0)
        with pytest.raises(ValueError, match="degenerate"):
            cp.validate_measures(ops2.area_bulk, ops2.area_surf)


class TestOperators:
    def test_measures_exact(self, ops2):
        assert ops2.area_bulk == pytest.approx(1.0, abs=1e-12)
        assert ops2.area_surf == pytest.approx(4.0, abs=1e-12)

    def test_constants_in_stiffness_kernel(self, ops2):
        one = np.ones(ops2.n_bulk)
        assert np.abs(ops2.A_bulk @ one).max() <= 1e-12
        assert np.abs(ops2.A_surf @ np.ones(ops2.n_surf)).max() <= 1e-12

    def test_constant_mass_quadratic_form(self, ops2):
        c = 3.0 * np.ones(ops2.n_bulk)
        assert c @ (ops2.M_bulk @ c) == pytest.approx(9.0, abs=1e-12)

    def test_matrices_symmetric_and_definite(self, ops4):
        for mat in (ops4.A_bulk, ops4.M_bulk, ops4.A_surf, ops4.M_surf):
            dense = mat.toarray()
            assert np.abs(dense - dense.T).max() <= 1e-14
        for mat in (ops4.M_bulk, ops4.M_surf):
            w = np.linalg.eigvalsh(mat.toarray())
            assert w.min() > 0
        for mat in (ops4.A_bulk, ops4.A_surf):
            w = np.linalg.eigvalsh(mat.toarray())
            assert w.min() >= -1e-12

    def test_quadrature_mass_identity(self, ops4, rng):
        # the 3-point rule integrates products of linear fields exactly, so
        # the quadrature norm equals the consistent-mass norm
        u = rng.standard_normal(ops4.n_bulk)
        quad = float(np.sum(ops4.tri_qweights * ops4.bulk_at_tri_quad(u) ** 2))
        assert quad == pytest.approx(float(u @ (ops4.M_bulk @ u)), rel=1e-13)
        v = rng.standard_normal(ops4.n_surf)
        quad_s = float(np.sum(ops4.surf_qweights * ops4.surf_at_quad(v) ** 2))
        assert quad_s == pytest.approx(float(v @ (ops4.M_surf @ v)), rel=1e-13)


class TestBilinearForms:
    def test_compatible_constants_vanish(self, ops4):
        a = ops4.constant_pair(3.0, 1.5)  # bulk = beta * surf
        assert ops4.inner_lb(a, a, CP) == pytest.approx(0.0, abs=1e-12)

    def test_surface_mode_against_loop_quadrature(self, ops8):
        arc = ops8.mesh.arc_lengths[:-1]
        psi = np.sin(2 * np.pi * arc / ops8.mesh.perimeter)
        pair = BulkSurfacePair(np.zeros(ops8.n_bulk), psi)
        val = ops8.inner_lb(pair, pair, CP)
        # independent piecewise integration of the linear interpolant
        h = ops8.surf_h
        grad_part = float(np.sum((np.roll(psi, -1) - psi) ** 2 / h))
        p0, p1 = psi, np.roll(psi, -1)
        mass_part = float(np.sum(h * (p0 * p0 + p0 * p1 + p1 * p1) / 3.0))
        assert val == pytest.approx(grad_part + CP.sigma_L * CP.beta**2 * mass_part, rel=1e-12)

    def test_unbounded_exchange_drops_coupling(self, ops8, rng):
        cp_inf = CouplingParams(K=1.0, L=math.inf, alpha=0.5, beta=2.0)
        a = random_pair(ops8, rng)
        expected = float(
            a.bulk @ (ops8.A_bulk @ a.bulk) + a.surf @ (ops8.A_surf @ a.surf)
        )
        assert ops8.inner_lb(a, a, cp_inf) == pytest.approx(expected, rel=1e-13)

    def test_weighted_constant_in_form_kernel(self, ops4, rng):
        # the pair (beta, 1) annihilates the exchange form against anything
        kb = ops4.constant_pair(CP.beta, 1.0)
        for _ in range(5):
            x = random_pair(ops4, rng)
            assert abs(ops4.inner_lb(x, kb, CP)) <= 1e-11

    def test_ka_form_positive_and_definite_on_mean_free(self, ops4, rng):
        for _ in range(10):
            a = mean_free(ops4, CP, random_pair(ops4, rng))
            q = ops4.inner_ka(a, a, CP)
            assert q >= 0.0
            if ops4.l2_norm(a) > 1e-8:
                assert q > 0.0

    def test_shape_mismatch_rejected(self, ops2, ops4):
        a = ops4.zero_pair()
        with pytest.raises(ValueError, match="shape"):
            ops2.inner_lb(a, a, CP)


class TestMeans:
    def test_weighted_constant_has_unit_mean(self, ops2):
        assert ops2.bs_mean(ops2.constant_pair(2.0, 1.0), CP) == pytest.approx(1.0)

    def test_zero_pair(self, ops2):
        assert ops2.bs_mean(ops2.zero_pair(), CP) == 0.0

    def test_square_arithmetic(self, ops2):
        # |bulk| = 1, |surface| = 4, weight 2: (2*1*1 + 0) / (4 + 4)
        assert ops2.bs_mean(ops2.constant_pair(1.0, 0.0), CP) == pytest.approx(0.25)

    def test_linearity(self, ops4, rng):
        a, b = random_pair(ops4, rng), random_pair(ops4, rng)
        lhs = ops4.bs_mean(a + 2.0 * b, CP)
        assert lhs == pytest.approx(ops4.bs_mean(a, CP) + 2.0 * ops4.bs_mean(b, CP), rel=1e-12)


class TestConstraintProjection:
    def test_identity_off_the_zero_regime(self, ops4, rng):
        a = random_pair(ops4, rng)
        out = ops4.project_constraint(a, CP, "L")
        assert np.array_equal(out.bulk, a.bulk)

    def test_overwrites_boundary_values(self, ops4):
        cp = CouplingParams(K=1.0, L=0.0, alpha=0.5, beta=2.0)
        a = BulkSurfacePair(np.zeros(ops4.n_bulk), np.ones(ops4.n_surf))
        out = ops4.project_constraint(a, cp, "L")
        assert np.all(out.bulk[ops4.mesh.surface_nodes] == 2.0)
        assert np.all(out.bulk[ops4.interior_nodes] == 0.0)

    def test_phase_trace_with_negative_weight(self, ops4, rng):
        cp = CouplingParams(K=0.0, L=1.0, alpha=-1.0, beta=2.0)
        psi = rng.standard_normal(ops4.n_surf)
        a = BulkSurfacePair(rng.standard_normal(ops4.n_bulk), psi)
        out = ops4.project_constraint(a, cp, "K")
        assert np.allclose(out.bulk[ops4.mesh.surface_nodes], -psi)

    def test_idempotent(self, ops4, rng):
        cp = CouplingParams(K=1.0, L=0.0, alpha=0.5, beta=2.0)
        a = random_pair(ops4, rng)
        once = ops4.project_constraint(a, cp, "L")
        twice = ops4.project_constraint(once, cp, "L")
        assert np.array_equal(once.bulk, twice.bulk)


class TestInverseOperator:
    def test_zero_maps_to_zero(self, ops2):
        s = ops2.solve_S_lb(ops2.zero_pair(), CP)
        assert ops2.l2_norm(s) <= 1e-14

    def test_incompatible_rhs_reports_mean(self, ops2):
        with pytest.raises(CompatibilityError, match="integral"):
            ops2.solve_S_lb(ops2.constant_pair(1.0, 1.0), CP)

    def test_definitional_dual_identity(self, ops2, rng):
        a = mean_free(ops2, CP, random_pair(ops2, rng))
        s = ops2.solve_S_lb(a, CP)
        lhs = ops2.dual_norm(a, CP) ** 2
        rhs = -(
            float(s.bulk @ (ops2.M_bulk @ a.bulk)) + float(s.surf @ (ops2.M_surf @ a.surf))
        )
        assert lhs == pytest.approx(rhs, rel=1e-10)

    @pytest.mark.parametrize("L", [0.0, 1.0, math.inf])
    def test_dense_pseudoinverse_oracle(self, ops2, L):
        cp = CouplingParams(K=1.0, L=L, alpha=0.5, beta=2.0)
        rng = np.random.default_rng(42)
        a = mean_free(ops2, cp, random_pair(ops2, rng))
        s = ops2.solve_S_lb(a, cp)
        s_oracle = dense_solve_S(ops2, cp, a)
        gap = ops2.l2_norm(s - s_oracle)
        assert gap <= 1e-8
        if L == 0.0:
            trace_err = np.abs(
                s.bulk[ops2.mesh.surface_nodes] - cp.beta * s.surf
            ).max()
            assert trace_err <= 1e-12

    def test_solution_is_mean_free(self, ops4, rng):
        a = mean_free(ops4, CP, random_pair(ops4, rng))
        s = ops4.solve_S_lb(a, CP)
        assert abs(ops4.bs_mean(s, CP)) <= 1e-12

    def test_variational_identity_against_full_basis(self, ops4, rng):
        # at the solution the constraint multiplier vanishes, so the weak
        # identity holds for every test pair, not only mean-free ones
        a = mean_free(ops4, CP, random_pair(ops4, rng))
        s = ops4.solve_S_lb(a, CP)
        for _ in range(5):
            t = random_pair(ops4, rng)
            lhs = ops4.inner_lb(s, t, CP)
            rhs = -(
                float(t.bulk @ (ops4.M_bulk @ a.bulk))
                + float(t.surf @ (ops4.M_surf @ a.surf))
            )
            assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-10)

    def test_self_adjoint(self, ops4, rng):
        a = mean_free(ops4, CP, random_pair(ops4, rng))
        b = mean_free(ops4, CP, random_pair(ops4, rng))
        sa, sb = ops4.solve_S_lb(a, CP), ops4.solve_S_lb(b, CP)

        def pairing(x, y):
            return float(x.bulk @ (ops4.M_bulk @ y.bulk) + x.surf @ (ops4.M_surf @ y.surf))

        assert pairing(a, sb) == pytest.approx(pairing(b, sa), rel=1e-10, abs=1e-12)


class TestDualNorm:
    def test_zero(self, ops2):
        assert ops2.dual_norm(ops2.zero_pair(), CP) == 0.0

    def test_absolute_homogeneity(self, ops4, rng):
        a = mean_free(ops4, CP, random_pair(ops4, rng))
        assert ops4.dual_norm(-3.0 * a, CP) == pytest.approx(
            3.0 * ops4.dual_norm(a, CP), rel=1e-10
        )

    def test_against_dense_oracle(self, ops2):
        rng = np.random.default_rng(7)
        a = mean_free(ops2, CP, random_pair(ops2, rng))
        s_oracle = dense_solve_S(ops2, CP, a)
        val_oracle = math.sqrt(ops2.inner_lb(s_oracle, s_oracle, CP))
        assert ops2.dual_norm(a, CP) == pytest.approx(val_oracle, rel=1e-8)


class TestPoincare:
    def test_positive_and_finite(self, ops4):
        c = ops4.poincare_constant(CP)
        assert 0.0 < c < math.inf

    def test_monotone_in_exchange_strength(self, ops2):
        c1 = ops2.poincare_constant(CouplingParams(K=1.0, L=1.0, alpha=1.0, beta=2.0))
        c2 = ops2.poincare_constant(CouplingParams(K=0.5, L=1.0, alpha=1.0, beta=2.0))
        assert c2 <= c1 + 1e-12

    @pytest.mark.parametrize("K,alpha", [(1.0, 1.0), (0.0, 1.0), (1.0, 0.5), (0.0, -0.5)])
    def test_dense_eigensolver_oracle(self, ops2, K, alpha):
        cp = CouplingParams(K=K, L=1.0, alpha=alpha, beta=2.0)
        assert ops2.poincare_constant(cp) == pytest.approx(
            dense_poincare(ops2, cp), abs=1e-8
        )

    def test_unbounded_regime_rejected(self, ops2):
        with pytest.raises(ValueError):
            ops2.poincare_constant(CouplingParams(K=math.inf, L=1.0, alpha=0.5, beta=2.0))

    def test_bounds_l2_by_coupled_form(self, ops4, rng):
        c = ops4.poincare_constant(CP)
        for _ in range(10):
            a = mean_free(ops4, CP, random_pair(ops4, rng))
            assert ops4.l2_norm(a) <= c * math.sqrt(ops4.inner_ka(a, a, CP)) * (1 + 1e-10)
