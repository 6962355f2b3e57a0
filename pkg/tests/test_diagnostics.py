import math

import numpy as np
import pytest

from bscahn.assembly import BulkSurfacePair, CouplingParams
from bscahn.diagnostics import (
    continuous_dependence_experiment,
    mean_compatible_direction,
    regime_interpolation_study,
    scaling_exponent,
    separation_report,
    strong_estimate_monitor,
    trace_interpolation_report,
    velocity_h1_norm,
    velocity_l2_norm,
    velocity_l3_norm,
    yosida_convergence_study,
)
from bscahn.potentials import PotentialSpec, YosidaParams
from bscahn.stepper import ConstantMobility, QuadraticMobility, StepperConfig, TimeStepper
from bscahn.velocity import StreamFunctionVelocity, ZeroVelocity

CP = CouplingParams(K=1.0, L=1.0, alpha=0.5, beta=2.0)


def make_config(cp=CP, dt=1e-3, lam=1e-3, mobility=None):
    return StepperConfig(
        dt=dt, cp=cp, pot=PotentialSpec(), yp=YosidaParams(lam=lam),
        mobility=mobility or ConstantMobility(),
    )


def admissible_random(ops, cp, rng, mean=0.05, amp=0.3):
    pair = BulkSurfacePair(
        mean + amp * rng.uniform(-1, 1, ops.n_bulk),
        mean + amp * rng.uniform(-1, 1, ops.n_surf),
    )
    if cp.K == 0.0:
        pair.bulk[ops.mesh.surface_nodes] = cp.alpha * pair.surf
    return pair


class TestVelocityNorms:
    def test_zero_field(self, ops4):
        assert velocity_l2_norm(ops4, ZeroVelocity(), 0.0) == 0.0
        assert velocity_h1_norm(ops4, ZeroVelocity(), 0.0) == 0.0

    def test_l2_scales_linearly(self, ops4):
        f = StreamFunctionVelocity(amplitude=1.0, profile="sine")
        assert velocity_l2_norm(ops4, f.scaled(3.0), 0.0) == pytest.approx(
            3.0 * velocity_l2_norm(ops4, f, 0.0), rel=1e-12
        )

    def test_norm_ordering(self, ops8):
        f = StreamFunctionVelocity(amplitude=1.0, profile="sine")
        l2 = velocity_l2_norm(ops8, f, 0.0)
        h1 = velocity_h1_norm(ops8, f, 0.0)
        assert 0 < l2 < h1
        assert velocity_l3_norm(ops8, f, 0.0) > 0


class TestMeanCompatibleDirection:
    @pytest.mark.parametrize(
        "cp",
        [
            CP,
            CouplingParams(K=0.0, L=1.0, alpha=0.5, beta=2.0),
            CouplingParams(K=1.0, L=math.inf, alpha=0.5, beta=2.0),
            CouplingParams(K=0.0, L=math.inf, alpha=-0.5, beta=2.0),
        ],
    )
    def test_direction_mean_free_and_admissible(self, ops4, cp, rng):
        d = mean_compatible_direction(ops4, cp, rng)
        assert ops4.l2_norm(d) == pytest.approx(1.0, rel=1e-12)
        if math.isinf(cp.L):
            mb, ms = ops4.component_means(d)
            assert abs(mb) <= 1e-12 and abs(ms) <= 1e-12
        else:
            assert abs(ops4.bs_mean(d, cp)) <= 1e-12
        if cp.K == 0.0:
            assert np.allclose(
                d.bulk[ops4.mesh.surface_nodes], cp.alpha * d.surf, atol=1e-13
            )


class TestContinuousDependence:
    def test_zero_perturbation_gives_zero(self, ops4, rng):
        cfg = make_config()
        init = admissible_random(ops4, CP, rng)
        res = continuous_dependence_experiment(
            ops4, cfg, ZeroVelocity(), init, 5e-3, [(0.0, 0.0)]
        )
        assert res.extras["lhs_values"][0] == 0.0

    def test_quadratic_scaling(self, ops8, rng):
        cfg = make_config()
        init = admissible_random(ops8, CP, rng)
        field = StreamFunctionVelocity(amplitude=0.5, profile="sine2")
        res = continuous_dependence_experiment(
            ops8, cfg, field, init, 0.1, [(2e-3, 0.0), (1e-3, 0.0)], seed=5
        )
        lhs = res.extras["lhs_values"]
        expo = scaling_exponent(lhs[0], lhs[1])
        assert 1.8 <= expo <= 2.2
        assert res.passed

    def test_velocity_perturbation_contributes(self, ops4, rng):
        cfg = make_config()
        init = admissible_random(ops4, CP, rng)
        field = StreamFunctionVelocity(amplitude=0.5, profile="sine2")
        res = continuous_dependence_experiment(
            ops4, cfg, field, init, 5e-3, [(0.0, 0.5)]
        )
        assert res.extras["lhs_values"][0] > 0
        assert res.rows[0]["velocity_term"] > 0

    def test_variable_mobility_rejected(self, ops4, rng):
        cfg = make_config(mobility=QuadraticMobility())
        with pytest.raises(ValueError, match="constant"):
            continuous_dependence_experiment(
                ops4, cfg, ZeroVelocity(), admissible_random(ops4, CP, rng), 1e-3, [(0.0, 0.0)]
            )

    def test_reruns_bit_identical(self, ops4, rng):
        cfg = make_config()
        init = admissible_random(ops4, CP, rng)
        st = TimeStepper(ops4, cfg)
        t1 = st.run(init, ZeroVelocity(), 5e-3)
        t2 = st.run(init, ZeroVelocity(), 5e-3)
        for a, b in zip(t1.states, t2.states):
            assert np.array_equal(a.phi_psi.bulk, b.phi_psi.bulk)
            assert np.array_equal(a.phi_psi.surf, b.phi_psi.surf)
            assert np.array_equal(a.mu_theta.bulk, b.mu_theta.bulk)


class TestYosidaStudies:
    def test_linear_mode_is_parameter_free(self, ops4, rng):
        # with the singular part disabled the trajectories cannot depend on
        # the regularization parameter at all
        pot = PotentialSpec(theta=0.0, theta_c=1.0, theta_surf=0.0, theta_c_surf=1.0)
        cfg = StepperConfig(dt=1e-3, cp=CP, pot=pot, yp=YosidaParams(lam=1e-2))
        init = admissible_random(ops4, CP, rng)
        res = yosida_convergence_study(
            "time", ops4, cfg, [1e-2, 1e-3, 1e-4], field_=ZeroVelocity(),
            initial=init, t_end=5e-3,
        )
        assert all(d == 0.0 for d in res.extras["distances"])

    def test_elliptic_distances_decrease(self, ops4, rng):
        cfg = make_config()
        rhs = BulkSurfacePair(
            rng.standard_normal(ops4.n_bulk), rng.standard_normal(ops4.n_surf)
        )
        res = yosida_convergence_study(
            "elliptic", ops4, cfg, [1e-1, 1e-2, 1e-3, 1e-4, 1e-5], rhs=rhs
        )
        assert res.passed

    def test_time_distances_decrease(self, ops8, rng):
        cfg = make_config()
        init = admissible_random(ops8, CP, rng)
        res = yosida_convergence_study(
            "time", ops8, cfg, [1e-2, 1e-3, 1e-4], field_=ZeroVelocity(),
            initial=init, t_end=0.05,
        )
        assert res.passed

    def test_bad_schedule_rejected(self, ops4):
        cfg = make_config()
        with pytest.raises(ValueError):
            yosida_convergence_study("elliptic", ops4, cfg, [1e-3, 1e-2], rhs=ops4.zero_pair())


class TestStrongEstimateMonitor:
    def test_steady_state_ratio_is_tight(self, ops4):
        cfg = make_config(cp=CouplingParams(K=1.0, L=1.0, alpha=1.0, beta=1.0), dt=1e-2, lam=1e-2)
        init = ops4.constant_pair(0.3, 0.3)
        res = strong_estimate_monitor(ops4, cfg, ZeroVelocity(), init, 3e-2, amplitudes=(0.0,))
        row = res.rows[0]
        st = TimeStepper(ops4, cfg)
        w0 = st.initial_mu_theta(init)
        assert row["sup_potential_norm_sq"] == pytest.approx(
            ops4.norm_lb(w0, cfg.cp) ** 2, abs=1e-12
        )
        assert row["time_derivative_sum"] <= 1e-12

    def test_amplitude_family_bounded(self, ops8, rng):
        cfg = make_config()
        init = admissible_random(ops8, CP, rng)
        field = StreamFunctionVelocity(amplitude=1.0, profile="sine2")
        res = strong_estimate_monitor(ops8, cfg, field, init, 0.02)
        assert res.passed
        assert res.extras["spread"] <= 10.0

    def test_initial_potential_scaling_stays_bounded(self, ops4, rng):
        cfg = make_config()
        field = StreamFunctionVelocity(amplitude=1.0, profile="sine2")
        ratios = []
        for amp in (0.15, 0.3):
            init = admissible_random(ops4, CP, rng, mean=0.05, amp=amp)
            res = strong_estimate_monitor(ops4, cfg, field, init, 0.01, amplitudes=(1.0,))
            ratios.append(res.rows[0]["ratio"])
        assert max(ratios) / min(ratios) <= 10.0

    def test_preconditions(self, ops4, rng):
        init = admissible_random(ops4, CP, rng)
        with pytest.raises(ValueError, match="L in"):
            strong_estimate_monitor(
                ops4,
                make_config(cp=CouplingParams(K=1.0, L=0.0, alpha=0.5, beta=2.0)),
                ZeroVelocity(), init, 1e-3,
            )
        cp0 = CouplingParams(K=0.0, L=1.0, alpha=0.5, beta=2.0)
        with pytest.raises(ValueError, match="trace"):
            strong_estimate_monitor(
                ops4, make_config(cp=cp0),
                StreamFunctionVelocity(profile="sine"),
                admissible_random(ops4, cp0, rng), 1e-3,
            )


class TestSeparationReport:
    def test_zero_trajectory(self, ops4):
        cfg = make_config()
        st = TimeStepper(ops4, cfg)
        traj = st.run(ops4.zero_pair(), ZeroVelocity(), 2e-3)
        rep = separation_report(traj)
        assert rep.delta_bulk == pytest.approx(1.0)
        assert rep.delta_surf == pytest.approx(1.0)
        assert rep.warning is None

    def test_constant_trajectory(self, ops4):
        cfg = make_config(cp=CouplingParams(K=1.0, L=1.0, alpha=1.0, beta=1.0), dt=1e-2, lam=1e-2)
        st = TimeStepper(ops4, cfg)
        traj = st.run(ops4.constant_pair(0.3, 0.3), ZeroVelocity(), 2e-2)
        rep = separation_report(traj)
        assert rep.delta_bulk == pytest.approx(0.7, abs=1e-9)
        assert rep.passed

    def test_spinodal_run_reports_positive_margin(self, ops8, rng):
        cfg = make_config(lam=1e-4)
        st = TimeStepper(ops8, cfg)
        init = admissible_random(ops8, CP, rng, mean=0.0, amp=0.4)
        traj = st.run(init, ZeroVelocity(), 0.05)
        rep = separation_report(traj)
        assert rep.passed
        step, node = rep.argmax_bulk
        assert 0 <= step < len(traj.states)
        assert 0 <= node < ops8.n_bulk


class TestRegimeInterpolation:
    def _factory(self, ops, rng_seed=3):
        base = np.random.default_rng(rng_seed)
        bulk = 0.05 + 0.3 * base.uniform(-1, 1, ops.n_bulk)
        surf = 0.05 + 0.3 * base.uniform(-1, 1, ops.n_surf)

        def factory(cp):
            # trace slaved in every regime: shared admissible data
            pair = BulkSurfacePair(bulk.copy(), surf.copy())
            pair.bulk[ops.mesh.surface_nodes] = cp.alpha * pair.surf
            return pair

        return factory

    def test_gaps_shrink_toward_both_limits(self, ops8):
        cfg = make_config(dt=1e-3)
        for which in ("K", "L"):
            res = regime_interpolation_study(
                ops8, cfg, ZeroVelocity(), self._factory(ops8), 0.02, which=which
            )
            assert res.passed, res.reason

    def test_bad_axis_rejected(self, ops4):
        with pytest.raises(ValueError):
            regime_interpolation_study(
                ops4, make_config(), ZeroVelocity(), self._factory(ops4), 1e-3, which="Q"
            )


class TestTraceInterpolation:
    def test_measured_constants_finite_and_stable(self):
        report = trace_interpolation_report(resolutions=(4, 8))
        values = [row["measured_constant"] for row in report]
        assert all(0 < v < 10 for v in values)
        # refinement does not blow the measured constant up
        assert values[1] <= 4.0 * values[0]
