"""P1 finite-element operators for the coupled bulk-surface problem.

Assembles consistent mass and stiffness matrices on the triangulated bulk and
on the 1D periodic boundary loop, the coupling-weighted bilinear forms, the
generalized bulk-surface mean, constrained subspaces (trace elimination for
the zero-coupling regimes), the inverse elliptic solution operator with its
dual norm, and the discrete Poincare constant.

Quadrature convention: nonlinear integrands are evaluated with the 3-point
edge-midpoint rule on triangles and 2-point Gauss on boundary segments.  Both
rules integrate products of two P1 functions exactly, so the quadrature norm
of a P1 field coincides with its consistent-mass norm; the contraction and
dissipation identities downstream rely on that exactness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh


class CompatibilityError(ValueError):
    """Right-hand side violates the mean-compatibility of the inverse operator."""


class SolverError(RuntimeError):
    """Linear or eigen-iteration failure."""


def sigma(value: float) -> float:
    """1/K for finite positive K, 0 for K in {0, inf}."""
    if value == 0.0 or math.isinf(value):
        return 0.0
    return 1.0 / value


@dataclass(frozen=True)
class CouplingParams:
    """Coupling constants K, L (each 0, finite positive, or inf) and alpha, beta."""

    K: float
    L: float
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("K", "L"):
            v = getattr(self, name)
            if not (v >= 0.0):  # also rejects NaN
                raise ValueError(f"{name} must be in [0, inf], got {v!r}")
        if not (-1.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [-1, 1], got {self.alpha}")

    @property
    def sigma_K(self) -> float:
        return sigma(self.K)

    @property
    def sigma_L(self) -> float:
        return sigma(self.L)

    @property
    def gamma_K(self) -> float:
        return 1.0 if self.K == 0.0 else 0.0

    def validate_measures(self, area_bulk: float, area_surf: float) -> None:
        if abs(self.alpha * self.beta * area_bulk + area_surf) < 1e-12:
            raise ValueError(
                f"degenerate coupling: alpha*beta*|Omega| + |Gamma| = "
                f"{self.alpha * self.beta * area_bulk + area_surf:g}"
            )


@dataclass
class BulkSurfacePair:
    """A bulk nodal coefficient vector paired with a surface one."""

    bulk: np.ndarray
    surf: np.ndarray

    def __post_init__(self):
        self.bulk = np.asarray(self.bulk, dtype=float)
        self.surf = np.asarray(self.surf, dtype=float)

    def copy(self) -> "BulkSurfacePair":
        return BulkSurfacePair(self.bulk.copy(), self.surf.copy())

    def __add__(self, other):
        return BulkSurfacePair(self.bulk + other.bulk, self.surf + other.surf)

    def __sub__(self, other):
        return BulkSurfacePair(self.bulk - other.bulk, self.surf - other.surf)

    def __mul__(self, c: float):
        return BulkSurfacePair(c * self.bulk, c * self.surf)

    __rmul__ = __mul__

    def max_abs(self) -> float:
        vals = [0.0]
        if self.bulk.size:
            vals.append(float(np.abs(self.bulk).max()))
        if self.surf.size:
            vals.append(float(np.abs(self.surf).max()))
        return max(vals)


_TRI_QPOINTS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
_GAUSS2 = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])


class FemOperators:
    """Assembled sparse operators plus quadrature tables for one mesh.

    Use :func:`assemble`; instances are immutable by convention and cache
    factorizations of the constrained saddle systems internally.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        nodes, tris = mesh.nodes, mesh.triangles
        self.n_bulk = mesh.num_nodes
        self.n_surf = mesh.num_surface_nodes

        # triangle geometry
        p = nodes[tris]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        if np.any(areas <= 0):
            raise ValueError("degenerate or inverted triangle in assembly")
        self.tri_areas = areas

        # P1 gradients: grad lambda_a, shape (T, 3, 2)
        g = np.empty((len(tris), 3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            edge = p[:, c] - p[:, b]
            g[:, a, 0] = -edge[:, 1]
            g[:, a, 1] = edge[:, 0]
        g /= (2.0 * areas)[:, None, None]
        self.tri_grads = g

        # bulk stiffness and consistent mass
        ke = np.einsum("tad,tbd,t->tab", g, g, areas)
        me = (areas[:, None, None] / 12.0) * (np.ones((3, 3)) + np.eye(3))
        rows = np.repeat(tris, 3, axis=1).ravel()
        cols = np.tile(tris, (1, 3)).ravel()
        nb = self.n_bulk
        self.A_bulk = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(nb, nb)).tocsr()
        self.M_bulk = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(nb, nb)).tocsr()

        # surface loop: element i joins surface nodes (i, i+1 mod M)
        M = self.n_surf
        self.surf_elems = np.column_stack([np.arange(M), (np.arange(M) + 1) % M])
        h = mesh.surface_edge_lengths()
        self.surf_h = h
        iS = self.surf_elems[:, 0]
        jS = self.surf_elems[:, 1]
        rowsS = np.concatenate([iS, iS, jS, jS])
        colsS = np.concatenate([iS, jS, iS, jS])
        a_data = np.concatenate([1.0 / h, -1.0 / h, -1.0 / h, 1.0 / h])
        m_data = np.concatenate([h / 3.0, h / 6.0, h / 6.0, h / 3.0])
        self.A_surf = sp.coo_matrix((a_data, (rowsS, colsS)), shape=(M, M)).tocsr()
        self.M_surf = sp.coo_matrix((m_data, (rowsS, colsS)), shape=(M, M)).tocsr()

        # trace operator: surface index -> bulk node
        self.trace = sp.coo_matrix(
            (np.ones(M), (np.arange(M), mesh.surface_nodes)), shape=(M, nb)
        ).tocsr()

        self.mass_vec_bulk = np.asarray(self.M_bulk.sum(axis=1)).ravel()
        self.mass_vec_surf = np.asarray(self.M_surf.sum(axis=1)).ravel()
        self.area_bulk = float(self.mass_vec_bulk.sum())
        self.area_surf = float(self.mass_vec_surf.sum())

        # quadrature tables
        self.tri_qbasis = _TRI_QPOINTS  # (q, a) barycentric values
        self.tri_qweights = np.repeat(areas[:, None] / 3.0, 3, axis=1)  # (T, q)
        self.tri_qcoords = np.einsum("qa,tad->tqd", _TRI_QPOINTS, p)  # (T, q, 2)

        xi = _GAUSS2
        self.surf_qbasis = np.column_stack([1.0 - xi, xi])  # (q, a)
        self.surf_qweights = np.repeat(h[:, None] / 2.0, 2, axis=1)  # (M, q)
        arc = mesh.arc_lengths
        self.surf_qarcs = arc[:-1, None] + xi[None, :] * h[:, None]  # (M, q)
        pts = nodes[mesh.surface_nodes]
        nxt = np.roll(pts, -1, axis=0)
        self.surf_qcoords = pts[:, None, :] + xi[None, :, None] * (nxt - pts)[:, None, :]
        d = nxt - pts
        self.surf_tangents = d / h[:, None]
        self.surf_normals = np.column_stack([d[:, 1], -d[:, 0]]) / h[:, None]

        self.interior_nodes = np.setdiff1d(
            np.arange(nb), mesh.surface_nodes, assume_unique=False
        )
        self._cache: dict = {}

    # -- pair/vector plumbing -------------------------------------------------

    def zero_pair(self) -> BulkSurfacePair:
        return BulkSurfacePair(np.zeros(self.n_bulk), np.zeros(self.n_surf))

    def constant_pair(self, cb: float, cs: float) -> BulkSurfacePair:
        return BulkSurfacePair(np.full(self.n_bulk, float(cb)), np.full(self.n_surf, float(cs)))

    def to_vector(self, a: BulkSurfacePair) -> np.ndarray:
        return np.concatenate([a.bulk, a.surf])

    def from_vector(self, x: np.ndarray) -> BulkSurfacePair:
        return BulkSurfacePair(x[: self.n_bulk].copy(), x[self.n_bulk :].copy())

    def _check_shapes(self, *pairs: BulkSurfacePair) -> None:
        for a in pairs:
            if a.bulk.shape != (self.n_bulk,) or a.surf.shape != (self.n_surf,):
                raise ValueError(
                    f"pair shape {(a.bulk.shape, a.surf.shape)} does not match "
                    f"operators ({self.n_bulk}, {self.n_surf})"
                )

    # -- quadrature evaluation -------------------------------------------------

    def bulk_at_tri_quad(self, v: np.ndarray) -> np.ndarray:
        """Values of the P1 field at the triangle quadrature points, (T, q)."""
        return np.einsum("qa,ta->tq", self.tri_qbasis, v[self.mesh.triangles])

    def surf_at_quad(self, v: np.ndarray) -> np.ndarray:
        return np.einsum("qa,ea->eq", self.surf_qbasis, v[self.surf_elems])

    def tri_quad_integral(self, qvals: np.ndarray) -> float:
        return float(np.sum(self.tri_qweights * qvals))

    def surf_quad_integral(self, qvals: np.ndarray) -> float:
        return float(np.sum(self.surf_qweights * qvals))

    def tri_quad_load(self, qvals: np.ndarray) -> np.ndarray:
        """Nodal load of a quadrature-sampled integrand against P1 test functions."""
        contrib = np.einsum("tq,qa->ta", self.tri_qweights * qvals, self.tri_qbasis)
        out = np.zeros(self.n_bulk)
        np.add.at(out, self.mesh.triangles, contrib)
        return out

    def surf_quad_load(self, qvals: np.ndarray) -> np.ndarray:
        contrib = np.einsum("eq,qa->ea", self.surf_qweights * qvals, self.surf_qbasis)
        out = np.zeros(self.n_surf)
        np.add.at(out, self.surf_elems, contrib)
        return out

    def tri_weighted_mass(self, qweights: np.ndarray) -> sp.csr_matrix:
        """Mass matrix with an extra quadrature-sampled nonnegative weight (T, q)."""
        tris = self.mesh.triangles
        data = np.einsum("tq,qa,qb->tab", self.tri_qweights * qweights, self.tri_qbasis, self.tri_qbasis)
        rows = np.repeat(tris, 3, axis=1).ravel()
        cols = np.tile(tris, (1, 3)).ravel()
        return sp.coo_matrix((data.ravel(), (rows, cols)), shape=(self.n_bulk, self.n_bulk)).tocsr()

    def surf_weighted_mass(self, qweights: np.ndarray) -> sp.csr_matrix:
        data = np.einsum("eq,qa,qb->eab", self.surf_qweights * qweights, self.surf_qbasis, self.surf_qbasis)
        rows = np.repeat(self.surf_elems, 2, axis=1).ravel()
        cols = np.tile(self.surf_elems, (1, 2)).ravel()
        return sp.coo_matrix((data.ravel(), (rows, cols)), shape=(self.n_surf, self.n_surf)).tocsr()

    def bulk_weighted_stiffness(self, elem_weights: np.ndarray) -> sp.csr_matrix:
        """Stiffness with a per-element scalar weight (mobility averaged per element)."""
        tris = self.mesh.triangles
        ke = np.einsum("tad,tbd,t->tab", self.tri_grads, self.tri_grads, self.tri_areas * elem_weights)
        rows = np.repeat(tris, 3, axis=1).ravel()
        cols = np.tile(tris, (1, 3)).ravel()
        return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(self.n_bulk, self.n_bulk)).tocsr()

    def surf_weighted_stiffness(self, elem_weights: np.ndarray) -> sp.csr_matrix:
        iS, jS = self.surf_elems[:, 0], self.surf_elems[:, 1]
        w = elem_weights / self.surf_h
        rows = np.concatenate([iS, iS, jS, jS])
        cols = np.concatenate([iS, jS, iS, jS])
        data = np.concatenate([w, -w, -w, w])
        return sp.coo_matrix((data, (rows, cols)), shape=(self.n_surf, self.n_surf)).tocsr()

    # -- coupled bilinear forms -------------------------------------------------

    def coupling_matrix(self, sig: float, weight: float) -> sp.csr_matrix:
        """sig * E^T M_surf E with E x = weight * x_surf - trace(x_bulk)."""
        nb, ns = self.n_bulk, self.n_surf
        if sig == 0.0:
            return sp.csr_matrix((nb + ns, nb + ns))
        R, Ms = self.trace, self.M_surf
        Qbb = R.T @ Ms @ R
        Qbs = -weight * (R.T @ Ms)
        Qss = weight * weight * Ms
        return sig * sp.bmat([[Qbb, Qbs], [Qbs.T, Qss]], format="csr")

    def form_matrix(self, sig: float, weight: float) -> sp.csr_matrix:
        base = sp.block_diag([self.A_bulk, self.A_surf], format="csr")
        if sig == 0.0:
            return base
        return (base + self.coupling_matrix(sig, weight)).tocsr()

    def _coupling_deficit(self, a: BulkSurfacePair, weight: float) -> np.ndarray:
        return weight * a.surf - self.trace @ a.bulk

    def inner_lb(self, a: BulkSurfacePair, b: BulkSurfacePair, cp: CouplingParams) -> float:
        """The (L, beta)-weighted bilinear form of two pairs."""
        self._check_shapes(a, b)
        val = float(a.bulk @ (self.A_bulk @ b.bulk) + a.surf @ (self.A_surf @ b.surf))
        if cp.sigma_L != 0.0:
            da = self._coupling_deficit(a, cp.beta)
            db = self._coupling_deficit(b, cp.beta)
            val += cp.sigma_L * float(da @ (self.M_surf @ db))
        return val

    def inner_ka(self, a: BulkSurfacePair, b: BulkSurfacePair, cp: CouplingParams) -> float:
        """The (K, alpha)-weighted bilinear form of two pairs."""
        self._check_shapes(a, b)
        val = float(a.bulk @ (self.A_bulk @ b.bulk) + a.surf @ (self.A_surf @ b.surf))
        if cp.sigma_K != 0.0:
            da = self._coupling_deficit(a, cp.alpha)
            db = self._coupling_deficit(b, cp.alpha)
            val += cp.sigma_K * float(da @ (self.M_surf @ db))
        return val

    def norm_ka(self, a: BulkSurfacePair, cp: CouplingParams) -> float:
        return math.sqrt(max(self.inner_ka(a, a, cp), 0.0))

    def norm_lb(self, a: BulkSurfacePair, cp: CouplingParams) -> float:
        return math.sqrt(max(self.inner_lb(a, a, cp), 0.0))

    def l2_norm(self, a: BulkSurfacePair) -> float:
        self._check_shapes(a)
        return math.sqrt(
            max(float(a.bulk @ (self.M_bulk @ a.bulk) + a.surf @ (self.M_surf @ a.surf)), 0.0)
        )

    def h1_norm(self, a: BulkSurfacePair) -> float:
        self._check_shapes(a)
        val = float(
            a.bulk @ ((self.M_bulk + self.A_bulk) @ a.bulk)
            + a.surf @ ((self.M_surf + self.A_surf) @ a.surf)
        )
        return math.sqrt(max(val, 0.0))

    # -- means and constraints ----------------------------------------------------

    def integrals(self, a: BulkSurfacePair) -> tuple[float, float]:
        self._check_shapes(a)
        return float(self.mass_vec_bulk @ a.bulk), float(self.mass_vec_surf @ a.surf)

    def component_means(self, a: BulkSurfacePair) -> tuple[float, float]:
        ib, isurf = self.integrals(a)
        return ib / self.area_bulk, isurf / self.area_surf

    def bs_mean(self, a: BulkSurfacePair, cp: CouplingParams, weight: float | None = None) -> float:
        """Generalized bulk-surface mean (beta-weighted unless overridden)."""
        w = cp.beta if weight is None else weight
        ib, isurf = self.integrals(a)
        return (w * ib + isurf) / (w * w * self.area_bulk + self.area_surf)

    def project_constraint(self, a: BulkSurfacePair, cp: CouplingParams, which: str) -> BulkSurfacePair:
        """Overwrite boundary bulk coefficients by weight * surface values.

        Acts only in the zero-coupling regime of the requested space
        (which = "K" or "L"); otherwise the identity.  Idempotent.
        """
        if which not in ("K", "L"):
            raise ValueError("which must be 'K' or 'L'")
        value = cp.K if which == "K" else cp.L
        weight = cp.alpha if which == "K" else cp.beta
        out = a.copy()
        if value == 0.0:
            out.bulk[self.mesh.surface_nodes] = weight * out.surf
        return out

    def prolongator(self, weight: float) -> sp.csr_matrix:
        """Map reduced dofs [interior bulk, surface] to the full pair vector,
        slaving boundary bulk dofs to weight * surface."""
        key = ("prol", float(weight))
        if key not in self._cache:
            nb, ns = self.n_bulk, self.n_surf
            ni = len(self.interior_nodes)
            rows = np.concatenate([self.interior_nodes, self.mesh.surface_nodes, np.arange(nb, nb + ns)])
            cols = np.concatenate([np.arange(ni), ni + np.arange(ns), ni + np.arange(ns)])
            data = np.concatenate([np.ones(ni), np.full(ns, float(weight)), np.ones(ns)])
            self._cache[key] = sp.coo_matrix((data, (rows, cols)), shape=(nb + ns, ni + ns)).tocsr()
        return self._cache[key]

    def reduction(self, value: float, weight: float) -> sp.csr_matrix | None:
        """Prolongator for the given coupling value, or None when unconstrained."""
        return self.prolongator(weight) if value == 0.0 else None

    # -- the inverse operator and dual norm ----------------------------------------

    def _slb_factorization(self, cp: CouplingParams):
        key = ("slb", cp.L, cp.beta)
        if key in self._cache:
            return self._cache[key]
        C = self.form_matrix(cp.sigma_L, cp.beta)
        g_mean = np.concatenate([cp.beta * self.mass_vec_bulk, self.mass_vec_surf])
        P = self.reduction(cp.L, cp.beta)
        if P is not None:
            C = (P.T @ C @ P).tocsr()
        if math.isinf(cp.L):
            g1 = np.concatenate([self.mass_vec_bulk, np.zeros(self.n_surf)])
            g2 = np.concatenate([np.zeros(self.n_bulk), self.mass_vec_surf])
            G = np.column_stack([g1, g2])
        else:
            G = g_mean[:, None]
            if P is not None:
                G = P.T @ G
        ncon = G.shape[1]
        saddle = sp.bmat([[C, sp.csr_matrix(G)], [sp.csr_matrix(G.T), None]], format="csc")
        lu = spla.splu(saddle)
        self._cache[key] = (lu, P, ncon)
        return self._cache[key]

    def solve_S_lb(
        self, a: BulkSurfacePair, cp: CouplingParams, compat_tol: float = 1e-8
    ) -> BulkSurfacePair:
        """Mean-free solution S of (S, test)_{L,beta} = -<a, test> for all tests.

        The right-hand side must be compatible: weighted integral zero for
        finite L, both component integrals zero for L = inf.
        """
        self._check_shapes(a)
        ib, isurf = self.integrals(a)
        scale = 1.0 + self.l2_norm(a)
        if math.isinf(cp.L):
            if abs(ib) > compat_tol * scale or abs(isurf) > compat_tol * scale:
                raise CompatibilityError(
                    f"rhs means not zero: bulk integral {ib:.3e}, surface integral {isurf:.3e}"
                )
        else:
            if abs(cp.beta * ib + isurf) > compat_tol * scale:
                raise CompatibilityError(
                    f"rhs weighted integral {cp.beta * ib + isurf:.3e} not zero"
                )
        lu, P, ncon = self._slb_factorization(cp)
        b = -np.concatenate([self.M_bulk @ a.bulk, self.M_surf @ a.surf])
        if P is not None:
            b = P.T @ b
        rhs = np.concatenate([b, np.zeros(ncon)])
        x = lu.solve(rhs)[: len(b)]
        if P is not None:
            x = P @ x
        return self.from_vector(x)

    def dual_norm(self, a: BulkSurfacePair, cp: CouplingParams, compat_tol: float = 1e-8) -> float:
        s = self.solve_S_lb(a, cp, compat_tol=compat_tol)
        return math.sqrt(max(self.inner_lb(s, s, cp), 0.0))

    # -- the discrete Poincare constant ----------------------------------------------

    def poincare_constant(
        self, cp: CouplingParams, tol: float = 1e-12, max_iter: int = 200, block: int = 4
    ) -> float:
        """Optimal constant in ||pair||_{L2} <= C_P ||pair||_{K,alpha} on mean-free pairs.

        Blocked inverse power iteration (with a Rayleigh-Ritz rotation per
        sweep) on the (K, alpha)-form against the mass form, restricted to
        zero generalized (beta-weighted) mean.  The block is needed because
        the square's x/y symmetry makes the two smallest eigenvalues nearly
        degenerate.
        """
        if math.isinf(cp.K):
            raise ValueError("Poincare constant requires K in [0, inf)")
        cp.validate_measures(self.area_bulk, self.area_surf)
        C = self.form_matrix(cp.sigma_K, cp.alpha)
        B = sp.block_diag([self.M_bulk, self.M_surf], format="csr")
        g = np.concatenate([cp.beta * self.mass_vec_bulk, self.mass_vec_surf])
        P = self.reduction(cp.K, cp.alpha)
        if P is not None:
            C = (P.T @ C @ P).tocsr()
            B = (P.T @ B @ P).tocsr()
            g = P.T @ g
        nred = C.shape[0]
        block = min(block, nred - 1)
        saddle = sp.bmat(
            [[C, sp.csr_matrix(g[:, None])], [sp.csr_matrix(g[None, :]), None]], format="csc"
        )
        lu = spla.splu(saddle)

        rng = np.random.default_rng(20240517)
        X = rng.standard_normal((nred, block))
        X -= np.outer(g, g @ X) / (g @ g)
        lam_old = math.inf
        hits = 0
        for _ in range(max_iter):
            Y = np.empty_like(X)
            for j in range(block):
                Y[:, j] = lu.solve(np.concatenate([B @ X[:, j], [0.0]]))[:nred]
            # B-orthonormalize, dropping directions lost to roundoff
            S = Y.T @ (B @ Y)
            w, U = np.linalg.eigh(S)
            keep = w > w[-1] * 1e-13
            Y = Y @ (U[:, keep] / np.sqrt(w[keep]))
            # Rayleigh-Ritz rotation inside the subspace
            A_small = Y.T @ (C @ Y)
            wr, V = np.linalg.eigh(0.5 * (A_small + A_small.T))
            X = Y @ V
            lam = float(wr[0])
            if abs(lam - lam_old) <= tol * max(abs(lam), 1e-30):
                hits += 1
                if hits >= 2:
                    return 1.0 / math.sqrt(lam)
            else:
                hits = 0
            lam_old = lam
        raise SolverError(
            f"Poincare inverse iteration did not settle in {max_iter} sweeps "
            f"(last eigenvalue {lam_old:g})"
        )


def assemble(mesh: Mesh) -> FemOperators:
    """Assemble all sparse operators for a mesh."""
    return FemOperators(mesh)
