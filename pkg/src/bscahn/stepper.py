"""Energy-stable implicit time integration of the coupled bulk-surface system.

One step advances the phase fields and chemical potentials monolithically:
the convex (regularized singular) potential parts, all Laplacians and both
coupling exchange terms are implicit, the concave smooth parts and the
convection loads are explicit at the old state, and the mobilities are frozen
at the old state per step.  Trace constraints of the zero-coupling regimes
are eliminated, so they hold identically.

Tested with the discrete weighted-constant pair, the transport and exchange
terms vanish exactly, which is what makes the mass law a per-step identity;
testing the potential equation with the increment and the flux equation with
the new potentials gives the per-step energy dissipation inequality, exact up
to the Newton residual because every nonlinear term is sampled at quadrature
points (see assembly module notes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BulkSurfacePair, CouplingParams, FemOperators
from .potentials import (
    PotentialSpec,
    YosidaParams,
    f2,
    f2_prime,
    yosida_prime,
    yosida_second,
    yosida_value,
)
from .velocity import VelocityField


class StepError(RuntimeError):
    """Nonlinear solve failed for one step; suggests halving the time step."""

    def __init__(self, message, history=None):
        super().__init__(message + " (advice: halve dt and retry)")
        self.history = list(history or [])
        self.advice = "halve dt"


@dataclass(frozen=True)
class ConstantMobility:
    m_bulk: float = 1.0
    m_surf: float = 1.0

    def __post_init__(self):
        if self.m_bulk <= 0 or self.m_surf <= 0:
            raise ValueError("mobilities must be positive")

    is_constant = True
    bounds = property(lambda self: (self.m_bulk, self.m_bulk, self.m_surf, self.m_surf))

    def bulk(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.m_bulk)

    def surf(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.m_surf)


@dataclass(frozen=True)
class QuadraticMobility:
    """m(s) = lo + (hi - lo)(1 - clip(s)^2); bounded between lo and hi."""

    bulk_lo: float = 0.1
    bulk_hi: float = 1.0
    surf_lo: float = 0.1
    surf_hi: float = 1.0

    def __post_init__(self):
        if min(self.bulk_lo, self.surf_lo) <= 0:
            raise ValueError("mobility lower bounds must be positive")
        if self.bulk_hi < self.bulk_lo or self.surf_hi < self.surf_lo:
            raise ValueError("mobility upper bounds below lower bounds")

    is_constant = False
    bounds = property(lambda self: (self.bulk_lo, self.bulk_hi, self.surf_lo, self.surf_hi))

    def bulk(self, s):
        c = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
        return self.bulk_lo + (self.bulk_hi - self.bulk_lo) * (1.0 - c * c)

    def surf(self, s):
        c = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
        return self.surf_lo + (self.surf_hi - self.surf_lo) * (1.0 - c * c)


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    cp: CouplingParams
    pot: PotentialSpec = field(default_factory=PotentialSpec)
    yp: YosidaParams = field(default_factory=YosidaParams)
    mobility: object = field(default_factory=ConstantMobility)
    newton_tol: float = 1e-12
    newton_max_iter: int = 30

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class State:
    phi_psi: BulkSurfacePair
    mu_theta: BulkSurfacePair
    t: float


@dataclass(frozen=True)
class EnergyBreakdown:
    grad_bulk: float
    grad_surf: float
    pot_bulk: float
    pot_surf: float
    coupling: float

    @property
    def total(self) -> float:
        return self.grad_bulk + self.grad_surf + self.pot_bulk + self.pot_surf + self.coupling


@dataclass
class Trajectory:
    states: list
    rows: list
    failure: dict | None = None

    @property
    def final(self) -> State:
        return self.states[-1]


DIAGNOSTIC_COLUMNS = (
    "step,t,mass_bulk,mass_surf,mass_weighted,energy_total,energy_grad_bulk,"
    "energy_grad_surf,energy_pot_bulk,energy_pot_surf,energy_coupling,"
    "dissipation,balance_residual,max_abs_phi,max_abs_psi,newton_iters"
).split(",")


class TimeStepper:
    """Owns the assembled operators plus one coupling/potential configuration."""

    def __init__(self, ops: FemOperators, cfg: StepperConfig):
        cfg.cp.validate_measures(ops.area_bulk, ops.area_surf)
        self.ops = ops
        self.cfg = cfg
        cp = cfg.cp
        self.P_K = ops.reduction(cp.K, cp.alpha)
        self.P_L = ops.reduction(cp.L, cp.beta)
        self.mass = sp.block_diag([ops.M_bulk, ops.M_surf], format="csr")
        self.stiff_K = ops.form_matrix(cp.sigma_K, cp.alpha)
        self.Q_L = ops.coupling_matrix(cp.sigma_L, cp.beta)
        self.mass_UW = self._project(self.mass, self.P_L, self.P_K)
        self.mass_WU = self._project(self.mass, self.P_K, self.P_L)
        if cfg.mobility.is_constant:
            self._diss_const = self._dissipation_matrix(None)

    @staticmethod
    def _project(mat, left, right):
        if left is not None:
            mat = left.T @ mat
        if right is not None:
            mat = mat @ right
        return sp.csr_matrix(mat)

    def _reduce(self, vec, P):
        return vec if P is None else P.T @ vec

    def _prolong(self, red, P):
        return red if P is None else P @ red

    def _to_reduced(self, pair: BulkSurfacePair, P) -> np.ndarray:
        full = self.ops.to_vector(pair)
        if P is None:
            return full
        ni = len(self.ops.interior_nodes)
        red = np.empty(P.shape[1])
        red[:ni] = pair.bulk[self.ops.interior_nodes]
        red[ni:] = pair.surf
        return red

    # -- element mobility weights and the dissipation operator -----------------

    def _dissipation_matrix(self, state_pair: BulkSurfacePair | None) -> sp.csr_matrix:
        """Mobility-weighted stiffness plus the potential exchange coupling."""
        ops, cfg = self.ops, self.cfg
        mob = cfg.mobility
        if mob.is_constant:
            wb = np.full(len(ops.tri_areas), mob.m_bulk)
            ws = np.full(ops.n_surf, mob.m_surf)
        else:
            wb = mob.bulk(state_pair.bulk[ops.mesh.triangles]).mean(axis=1)
            ws = mob.surf(state_pair.surf[ops.surf_elems]).mean(axis=1)
        out = sp.block_diag(
            [ops.bulk_weighted_stiffness(wb), ops.surf_weighted_stiffness(ws)],
            format="csr",
        )
        if cfg.cp.sigma_L != 0.0:
            out = out + self.Q_L
        return sp.csr_matrix(out)

    def dissipation_matrix(self, state_pair: BulkSurfacePair) -> sp.csr_matrix:
        if self.cfg.mobility.is_constant:
            return self._diss_const
        return self._dissipation_matrix(state_pair)

    # -- loads -------------------------------------------------------------------

    def convection_load(self, pair: BulkSurfacePair, field_: VelocityField, t: float) -> np.ndarray:
        """Transport load pair: integrals of (old field) * velocity . grad(test)."""
        ops = self.ops
        out = np.zeros(ops.n_bulk + ops.n_surf)
        if field_.is_zero:
            return out
        qc = ops.tri_qcoords
        v = field_.sample_bulk(qc[..., 0], qc[..., 1], t)
        if np.any(v):
            phi_q = ops.bulk_at_tri_quad(pair.bulk)
            common = ops.tri_qweights * phi_q
            for a in range(3):
                flux = np.einsum("tq,tqd,td->t", common, v, ops.tri_grads[:, a, :])
                np.add.at(out[: ops.n_bulk], ops.mesh.triangles[:, a], flux)
        speeds = np.asarray(field_.sample_surface(ops.surf_qarcs[:, 0], t))
        if np.any(speeds):
            # per element: speed * int psi * d(test)/ds, the integral of the
            # P1 interpolant over the element is exact
            iS, jS = ops.surf_elems[:, 0], ops.surf_elems[:, 1]
            seg = 0.5 * (pair.surf[iS] + pair.surf[jS]) * speeds
            np.add.at(out[ops.n_bulk :], iS, -seg)
            np.add.at(out[ops.n_bulk :], jS, seg)
        return out

    def _convex_load(self, pair: BulkSurfacePair) -> np.ndarray:
        ops, pot, yp = self.ops, self.cfg.pot, self.cfg.yp
        return np.concatenate(
            [
                ops.tri_quad_load(yosida_prime(ops.bulk_at_tri_quad(pair.bulk), pot.theta, yp)),
                ops.surf_quad_load(yosida_prime(ops.surf_at_quad(pair.surf), pot.theta_surf, yp)),
            ]
        )

    def _concave_load(self, pair: BulkSurfacePair) -> np.ndarray:
        ops, pot = self.ops, self.cfg.pot
        return np.concatenate(
            [
                ops.tri_quad_load(f2_prime(ops.bulk_at_tri_quad(pair.bulk), pot.theta_c)),
                ops.surf_quad_load(f2_prime(ops.surf_at_quad(pair.surf), pot.theta_c_surf)),
            ]
        )

    def _curvature_matrix(self, pair: BulkSurfacePair) -> sp.csr_matrix:
        ops, pot, yp = self.ops, self.cfg.pot, self.cfg.yp
        return sp.block_diag(
            [
                ops.tri_weighted_mass(yosida_second(ops.bulk_at_tri_quad(pair.bulk), pot.theta, yp)),
                ops.surf_weighted_mass(yosida_second(ops.surf_at_quad(pair.surf), pot.theta_surf, yp)),
            ],
            format="csr",
        )

    # -- observables ---------------------------------------------------------------

    def energy(self, pair: BulkSurfacePair) -> EnergyBreakdown:
        """Free energy with the regularized potential; quadrature-exact gradients."""
        ops, pot, yp, cp = self.ops, self.cfg.pot, self.cfg.yp, self.cfg.cp
        qb = ops.bulk_at_tri_quad(pair.bulk)
        qs = ops.surf_at_quad(pair.surf)
        pot_b = ops.tri_quad_integral(yosida_value(qb, pot.theta, yp) + f2(qb, pot.theta_c))
        pot_s = ops.surf_quad_integral(
            yosida_value(qs, pot.theta_surf, yp) + f2(qs, pot.theta_c_surf)
        )
        coupling = 0.0
        if cp.sigma_K != 0.0:
            d = cp.alpha * pair.surf - ops.trace @ pair.bulk
            coupling = 0.5 * cp.sigma_K * float(d @ (ops.M_surf @ d))
        return EnergyBreakdown(
            grad_bulk=0.5 * float(pair.bulk @ (ops.A_bulk @ pair.bulk)),
            grad_surf=0.5 * float(pair.surf @ (ops.A_surf @ pair.surf)),
            pot_bulk=pot_b,
            pot_surf=pot_s,
            coupling=coupling,
        )

    def mass_of(self, pair: BulkSurfacePair) -> tuple[float, float, float]:
        """(weighted total, bulk integral, surface integral)."""
        ib, isurf = self.ops.integrals(pair)
        return self.cfg.cp.beta * ib + isurf, ib, isurf

    def dissipation_rate(self, old_pair: BulkSurfacePair, mu_theta: BulkSurfacePair) -> float:
        w = self.ops.to_vector(mu_theta)
        return float(w @ (self.dissipation_matrix(old_pair) @ w))

    # -- one implicit step -----------------------------------------------------------

    def initial_mu_theta(self, pair: BulkSurfacePair) -> BulkSurfacePair:
        """Compatibility projection of the potential equation at the initial data.

        Uses the full (unsplit) potential derivative.  With an eliminated
        phase-field trace the tested equation under-determines the result;
        the minimal-mass-norm representative is returned then.
        """
        ops = self.ops
        g = self.stiff_K @ ops.to_vector(pair) + self._convex_load(pair) + self._concave_load(pair)
        if self.P_K is None and self.P_L is None:
            w = np.concatenate(
                [
                    spla.spsolve(ops.M_bulk.tocsc(), g[: ops.n_bulk]),
                    spla.spsolve(ops.M_surf.tocsc(), g[ops.n_bulk :]),
                ]
            )
            return ops.from_vector(w)
        # the tested equation lives against the phase-trace-constrained basis
        # when that is reduced, otherwise against the potential-trace one; the
        # solution sits in the potential-constrained space when L = 0, else
        # the minimal-mass-norm representative is taken
        test_p = self.P_K if self.P_K is not None else self.P_L
        sol_p = self.P_L if self.P_L is not None else self.P_K
        mat = self._project(self.mass, test_p, sol_p).tocsc()
        red = spla.spsolve(mat, self._reduce(g, test_p))
        return ops.from_vector(self._prolong(red, sol_p))

    def step(self, state: State, field_: VelocityField) -> tuple[State, dict]:
        """Advance one implicit step; returns the new state and per-step data."""
        ops, cfg = self.ops, self.cfg
        cp, dt = cfg.cp, cfg.dt
        u_old = ops.to_vector(state.phi_psi)
        t_mid = state.t + 0.5 * dt

        diss = self.dissipation_matrix(state.phi_psi)
        conv = self.convection_load(state.phi_psi, field_, t_mid)
        concave = self._concave_load(state.phi_psi)
        explicit_A = self.mass @ u_old + dt * conv

        u_red = self._to_reduced(state.phi_psi, self.P_K)
        w_red = self._to_reduced(state.mu_theta, self.P_L)

        dt_diss = self._project(dt * diss, self.P_L, self.P_L)
        history = []
        for it in range(cfg.newton_max_iter):
            u_full = self._prolong(u_red, self.P_K)
            w_full = self._prolong(w_red, self.P_L)
            pair_u = ops.from_vector(u_full)
            res_a = self._reduce(self.mass @ u_full + dt * (diss @ w_full) - explicit_A, self.P_L)
            res_b = self._reduce(
                self.mass @ w_full - self.stiff_K @ u_full - self._convex_load(pair_u) - concave,
                self.P_K,
            )
            rnorm = max(
                float(np.abs(res_a).max(initial=0.0)), float(np.abs(res_b).max(initial=0.0))
            )
            history.append(rnorm)
            if rnorm <= cfg.newton_tol:
                new_state = State(phi_psi=pair_u, mu_theta=ops.from_vector(w_full), t=state.t + dt)
                info = self._step_info(state, new_state, field_, conv, diss, it, rnorm)
                return new_state, info

            h_mat = self._project(self.stiff_K + self._curvature_matrix(pair_u), self.P_K, self.P_K)
            jac = sp.bmat(
                [[self.mass_UW, dt_diss], [-h_mat, self.mass_WU]], format="csc"
            )
            delta = spla.spsolve(jac, -np.concatenate([res_a, res_b]))
            nu = len(u_red)
            step_scale = 1.0
            base = math.hypot(float(np.linalg.norm(res_a)), float(np.linalg.norm(res_b)))
            for _ in range(20):
                u_try = u_red + step_scale * delta[:nu]
                w_try = w_red + step_scale * delta[nu:]
                uf = self._prolong(u_try, self.P_K)
                wf = self._prolong(w_try, self.P_L)
                ra = self._reduce(self.mass @ uf + dt * (diss @ wf) - explicit_A, self.P_L)
                rb = self._reduce(
                    self.mass @ wf
                    - self.stiff_K @ uf
                    - self._convex_load(ops.from_vector(uf))
                    - concave,
                    self.P_K,
                )
                trial_norm = math.hypot(float(np.linalg.norm(ra)), float(np.linalg.norm(rb)))
                if trial_norm < base or max(
                    float(np.abs(ra).max()), float(np.abs(rb).max())
                ) <= cfg.newton_tol:
                    u_red, w_red = u_try, w_try
                    break
                step_scale *= 0.5
            else:
                raise StepError(
                    f"step Newton line search stalled at residual {rnorm:.3e}", history
                )
        raise StepError(
            f"step Newton did not reach tol {cfg.newton_tol:g} in "
            f"{cfg.newton_max_iter} iterations (residual {history[-1]:.3e})",
            history,
        )

    def _step_info(self, old: State, new: State, field_, conv, diss, iters, resid) -> dict:
        w = self.ops.to_vector(new.mu_theta)
        dissipation = float(w @ (diss @ w))
        conv_work = float(conv @ w)
        e_new = self.energy(new.phi_psi).total
        e_old = self.energy(old.phi_psi).total
        return {
            "newton_iters": iters,
            "residual": resid,
            "dissipation": dissipation,
            "convection_work": conv_work,
            "balance_residual": (e_new - e_old) / self.cfg.dt + dissipation - conv_work,
        }

    # -- trajectories ------------------------------------------------------------------

    def check_initial_data(self, pair: BulkSurfacePair) -> None:
        cp, ops = self.cfg.cp, self.ops
        if pair.max_abs() > 1.0 + 1e-12:
            raise ValueError("initial phase fields must satisfy max |value| <= 1")
        if math.isinf(cp.L):
            mb, ms = ops.component_means(pair)
            if not (-1.0 < mb < 1.0 and -1.0 < ms < 1.0):
                raise ValueError(f"component means ({mb:g}, {ms:g}) must lie in (-1, 1)")
        else:
            mean = ops.bs_mean(pair, cp)
            if not (-1.0 < mean < 1.0 and -1.0 < cp.beta * mean < 1.0):
                raise ValueError(
                    f"generalized mean {mean:g} (weighted {cp.beta * mean:g}) must lie in (-1, 1)"
                )
        if cp.K == 0.0:
            err = np.abs(pair.bulk[ops.mesh.surface_nodes] - cp.alpha * pair.surf).max()
            if err > 1e-10:
                raise ValueError(f"initial data violates the phase trace constraint by {err:g}")

    def run(
        self,
        initial: BulkSurfacePair,
        field_: VelocityField,
        t_end: float,
        observers=(),
    ) -> Trajectory:
        """March from t = 0 to t_end, collecting states and diagnostics rows."""
        self.check_initial_data(initial)
        n_steps = int(round(t_end / self.cfg.dt))
        state = State(phi_psi=initial.copy(), mu_theta=self.initial_mu_theta(initial), t=0.0)
        states = [state]
        rows = [self._row(0, state, {"newton_iters": 0, "dissipation": 0.0,
                                     "balance_residual": 0.0})]
        for k in range(1, n_steps + 1):
            try:
                state, info = self.step(state, field_)
            except StepError as exc:
                return Trajectory(
                    states=states,
                    rows=rows,
                    failure={"step": k, "error": str(exc), "history": exc.history},
                )
            states.append(state)
            rows.append(self._row(k, state, info))
            for obs in observers:
                obs(state, info)
        return Trajectory(states=states, rows=rows)

    def _row(self, k: int, state: State, info: dict) -> dict:
        e = self.energy(state.phi_psi)
        weighted, mb, ms = self.mass_of(state.phi_psi)
        return {
            "step": k,
            "t": state.t,
            "mass_bulk": mb,
            "mass_surf": ms,
            "mass_weighted": weighted,
            "energy_total": e.total,
            "energy_grad_bulk": e.grad_bulk,
            "energy_grad_surf": e.grad_surf,
            "energy_pot_bulk": e.pot_bulk,
            "energy_pot_surf": e.pot_surf,
            "energy_coupling": e.coupling,
            "dissipation": info.get("dissipation", 0.0),
            "balance_residual": info.get("balance_residual", 0.0),
            "max_abs_phi": float(np.abs(state.phi_psi.bulk).max()),
            "max_abs_psi": float(np.abs(state.phi_psi.surf).max()),
            "newton_iters": info.get("newton_iters", 0),
        }

    def energy_balance_residuals(self, traj: Trajectory, field_: VelocityField) -> np.ndarray:
        """Recompute the per-step energy-balance residuals from stored states."""
        out = []
        for old, new in zip(traj.states, traj.states[1:]):
            diss = self.dissipation_matrix(old.phi_psi)
            conv = self.convection_load(old.phi_psi, field_, old.t + 0.5 * self.cfg.dt)
            w = self.ops.to_vector(new.mu_theta)
            r = (
                (self.energy(new.phi_psi).total - self.energy(old.phi_psi).total) / self.cfg.dt
                + float(w @ (diss @ w))
                - float(conv @ w)
            )
            out.append(r)
        return np.array(out)
