"""Scott-Vogelius P4 / discontinuous P3 discretization of the Stokes problem.

Weak form: (grad u, grad v) + (p, div v) + (q, div u) = (f, v) with homogeneous
Dirichlet velocity and a zero-mean pressure enforced by one Lagrange
multiplier.  With the plus sign on (p, div v) the source for an exact pair
(u, p) is f = -Lap u - grad p.

Velocity DOF numbering (per scalar component): vertices, then three nodes per
edge ordered from the lower to the higher global vertex id, then three
interior nodes per triangle.  The x component occupies [0, n) and the y
component [n, 2n).  Pressure DOF 10 t + i is the i-th P3 Lagrange node of
triangle t.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elements import (LOCAL_EDGES, LYNESS16, P3, P4, QuadratureRule,
                       collapsed_rule, sting_lagrange_coefficients)
from .mesh import SingularityReport, Triangulation, vertex_star

SourceFunction = Callable[[np.ndarray, np.ndarray], tuple]

LOAD_RULE_DEGREE = 12


class SolverError(RuntimeError):
    """Factorization breakdown or an unacceptable algebraic residual."""


# ---------------------------------------------------------------------------
# Degrees of freedom
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DofMap:
    n_vertices: int
    n_edges: int
    n_triangles: int
    cell_dofs: np.ndarray        # (nt, 15) scalar P4 dofs per triangle
    boundary: np.ndarray         # bool mask over scalar dofs
    node_coords: np.ndarray      # (n_scalar, 2)

    @property
    def n_scalar(self) -> int:
        return self.n_vertices + 3 * self.n_edges + 3 * self.n_triangles

    @property
    def n_velocity(self) -> int:
        return 2 * self.n_scalar

    @property
    def n_pressure(self) -> int:
        return 10 * self.n_triangles

    @property
    def free_velocity(self) -> np.ndarray:
        """Indices of the non-Dirichlet velocity DOFs in the 2n numbering."""
        interior = np.flatnonzero(~self.boundary)
        return np.concatenate([interior, interior + self.n_scalar])

    def velocity_cell_dofs(self) -> np.ndarray:
        """(nt, 30) velocity dofs, x component first."""
        return np.hstack([self.cell_dofs, self.cell_dofs + self.n_scalar])


def build_dof_map(mesh: Triangulation) -> DofMap:
    nv, ne, nt = mesh.n_vertices, mesh.n_edges, mesh.n_triangles
    tris = mesh.triangles
    cell = np.empty((nt, 15), dtype=np.int64)
    cell[:, :3] = tris
    for le, (i, j) in enumerate(LOCAL_EDGES):
        e = mesh.triangle_edges[:, le]
        forward = tris[:, j] > tris[:, i]     # walking toward the larger id
        for m in range(3):
            k = np.where(forward, m, 2 - m)
            cell[:, 3 + 3 * le + m] = nv + 3 * e + k
    cell[:, 12:] = nv + 3 * ne + 3 * np.arange(nt)[:, None] + np.arange(3)

    n = nv + 3 * ne + 3 * nt
    boundary = np.zeros(n, dtype=bool)
    boundary[:nv] = mesh.boundary_vertex
    bedges = np.flatnonzero(mesh.boundary_edge)
    for m in range(3):
        boundary[nv + 3 * bedges + m] = True

    coords = np.empty((n, 2))
    local_xy = np.einsum("nk,tkd->tnd", P4.node_barycentric, mesh.vertices[tris])
    coords[cell.ravel()] = local_xy.reshape(-1, 2)
    return DofMap(nv, ne, nt, cell, boundary, coords)


# ---------------------------------------------------------------------------
# Element tables
# ---------------------------------------------------------------------------

def _geometry(mesh: Triangulation):
    p = mesh.vertices[mesh.triangles]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)   # columns
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv_t = np.empty_like(jac)
    inv_t[:, 0, 0] = jac[:, 1, 1]
    inv_t[:, 0, 1] = -jac[:, 1, 0]
    inv_t[:, 1, 0] = -jac[:, 0, 1]
    inv_t[:, 1, 1] = jac[:, 0, 0]
    inv_t /= det[:, None, None]
    return p, 0.5 * det, inv_t


def _p4_gradients(inv_t, rule: QuadratureRule):
    """(nt, nq, 15, 2) physical P4 gradients at the rule points."""
    g_ref = P4.grad_ref(rule.bary)
    return np.einsum("tab,qib->tqia", inv_t, g_ref)


def element_matrices(mesh: Triangulation, rule: QuadratureRule = LYNESS16):
    """Per-triangle stiffness (nt,15,15) and divergence blocks (nt,10,15) x 2."""
    _, area, inv_t = _geometry(mesh)
    g = _p4_gradients(inv_t, rule)
    w = rule.weights
    a_loc = np.einsum("q,tqia,tqja->tij", w, g, g) * area[:, None, None]
    psi = P3.eval(rule.bary)
    bx = np.einsum("q,qk,tqi->tki", w, psi, g[..., 0]) * area[:, None, None]
    by = np.einsum("q,qk,tqi->tki", w, psi, g[..., 1]) * area[:, None, None]
    return a_loc, bx, by


def pressure_basis_integrals(mesh: Triangulation) -> np.ndarray:
    """(nt, 10) integrals of the P3 Lagrange basis functions."""
    ref = LYNESS16.weights @ P3.eval(LYNESS16.bary)
    return mesh.areas()[:, None] * ref[None, :]


def load_vector(mesh: Triangulation, dofs: DofMap, f: SourceFunction,
                degree: int = LOAD_RULE_DEGREE) -> np.ndarray:
    rule = collapsed_rule(degree)
    p, area, _ = _geometry(mesh)
    x = np.einsum("qk,tkd->tqd", rule.bary, p)
    fx, fy = f(x[..., 0], x[..., 1])
    phi = P4.eval(rule.bary)
    wa = rule.weights[None, :] * area[:, None]
    lx = np.einsum("tq,tq,qi->ti", wa, np.broadcast_to(fx, wa.shape), phi)
    ly = np.einsum("tq,tq,qi->ti", wa, np.broadcast_to(fy, wa.shape), phi)
    out = np.zeros(dofs.n_velocity)
    vd = dofs.velocity_cell_dofs()
    np.add.at(out, vd.ravel(), np.hstack([lx, ly]).ravel())
    return out


# ---------------------------------------------------------------------------
# Saddle-point system
# ---------------------------------------------------------------------------

@dataclass
class SaddleSystem:
    """[A B^T 0; B 0 m; 0 m^T 0] restricted to the free velocity DOFs."""

    mesh: Triangulation
    dofs: DofMap
    A: sp.csr_matrix            # free x free
    B: sp.csr_matrix            # pressure x free
    mean_row: np.ndarray        # pressure basis integrals
    rhs_velocity: np.ndarray    # free velocity load
    free: np.ndarray

    @property
    def n_free(self) -> int:
        return len(self.free)

    @property
    def n_pressure(self) -> int:
        return self.B.shape[0]

    @property
    def n_unknowns(self) -> int:
        return self.n_free + self.n_pressure + 1

    def matrix(self, pressure_shift: float = 0.0) -> sp.csc_matrix:
        m = sp.csr_matrix(self.mean_row[:, None])
        pp = None
        if pressure_shift:
            pp = -pressure_shift * sp.identity(self.n_pressure, format="csr")
        k = sp.bmat([[self.A, self.B.T, None],
                     [self.B, pp, m],
                     [None, m.T, None]], format="csc")
        return k

    def rhs(self) -> np.ndarray:
        out = np.zeros(self.n_unknowns)
        out[:self.n_free] = self.rhs_velocity
        return out


def _scatter(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


def assemble(mesh: Triangulation, dofs: Optional[DofMap] = None,
             f: Optional[SourceFunction] = None,
             rule: QuadratureRule = LYNESS16,
             load_degree: int = LOAD_RULE_DEGREE) -> SaddleSystem:
    if dofs is None:
        dofs = build_dof_map(mesh)
    nt = mesh.n_triangles
    a_loc, bx, by = element_matrices(mesh, rule)
    vd = dofs.velocity_cell_dofs()                      # (nt, 30)
    n2 = dofs.n_velocity

    a30 = np.zeros((nt, 30, 30))
    a30[:, :15, :15] = a_loc
    a30[:, 15:, 15:] = a_loc
    rows = np.repeat(vd[:, :, None], 30, axis=2)
    cols = np.repeat(vd[:, None, :], 30, axis=1)
    a_full = _scatter(rows, cols, a30, (n2, n2))

    b30 = np.concatenate([bx, by], axis=2)              # (nt, 10, 30)
    prow = 10 * np.arange(nt)[:, None] + np.arange(10)
    rows = np.repeat(prow[:, :, None], 30, axis=2)
    cols = np.repeat(vd[:, None, :], 10, axis=1)
    b_full = _scatter(rows, cols, b30, (10 * nt, n2))

    free = dofs.free_velocity
    a = a_full[free][:, free]
    a = (0.5 * (a + a.T)).tocsr()   # exact symmetry; entries already equal up to rounding
    b = b_full[:, free].tocsr()
    if f is None:
        rhs = np.zeros(len(free))
    else:
        rhs = load_vector(mesh, dofs, f, load_degree)[free]
    mean = pressure_basis_integrals(mesh).ravel()
    return SaddleSystem(mesh, dofs, a, b, mean, rhs, free)


def export_system(system: SaddleSystem, path) -> None:
    """Write the full saddle matrix in Matrix Market coordinate format."""
    scipy.io.mmwrite(str(path), system.matrix().tocoo(), comment="svstokes saddle system")


# ---------------------------------------------------------------------------
# Solve
# ---------------------------------------------------------------------------

@dataclass
class DiscreteSolution:
    mesh: Triangulation
    dofs: DofMap
    velocity: np.ndarray        # (2 n_scalar,) including Dirichlet zeros
    pressure: np.ndarray        # (nt, 10)
    multiplier: float = 0.0
    rank_deficient: bool = False
    diagnostics: dict = field(default_factory=dict)

    def velocity_cells(self) -> np.ndarray:
        """(nt, 15, 2) local velocity coefficients."""
        cd = self.dofs.cell_dofs
        n = self.dofs.n_scalar
        return np.stack([self.velocity[cd], self.velocity[cd + n]], axis=-1)


def _factor(k):
    # The pressure-shifted matrix is symmetric quasi-definite, so diagonal
    # pivots are safe in any symmetric minimum-degree order.
    return spla.splu(k, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                     options={"SymmetricMode": True})


def _null_probe(lu, system: SaddleSystem, eps: float, steps: int = 4) -> float:
    """Rayleigh quotient of eps (S + eps I)^{-1} by inverse iteration.

    S is the mean-constrained pressure Schur complement.  The value is ~1
    when S has a null space and eps / (lambda_min + eps) otherwise; the
    returned value is compared against 1 - null_tol.
    """
    nf, npr = system.n_free, system.n_pressure
    w = np.sin(1.0 + np.arange(npr))        # fixed start vector, no RNG
    w -= system.mean_row * (system.mean_row @ w) / (system.mean_row @ system.mean_row)
    w /= np.linalg.norm(w)
    mu = 0.0
    rhs = np.zeros(system.n_unknowns)
    for _ in range(steps):
        rhs[nf:nf + npr] = w
        z = -eps * lu.solve(rhs)[nf:nf + npr]
        mu = float(w @ z)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            break
        w = z / nz
    return mu


def solve(system: SaddleSystem, pressure_shift: Optional[float] = None,
          residual_tol: float = 1e-9, gmres_tol: float = 1e-13,
          restart: int = 200, max_restarts: int = 5, refine_steps: int = 50,
          null_tol: float = 1e-8, probe: bool = True) -> DiscreteSolution:
    """Direct sparse solve of the saddle system.

    The factorization is taken of the shifted matrix with -eps I in the
    pressure block (eps = 1e-10 ||A||_inf unless ``pressure_shift`` is given)
    and used to precondition GMRES on the unshifted system, so the result
    solves the original equations.  On a rank-deficient system the
    null-space component of the pressure stays at the value selected by the
    shifted solve and ``rank_deficient`` is set.
    """
    t0 = time.perf_counter()
    b = system.rhs()
    k0 = system.matrix()
    a_norm = float(abs(system.A).sum(axis=1).max()) if system.n_free else 1.0
    eps = 1e-10 * a_norm if pressure_shift is None else float(pressure_shift)
    diag = {"n_unknowns": system.n_unknowns, "pressure_shift": eps}
    try:
        lu = _factor(system.matrix(eps))
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc

    rank_deficient = False
    if probe and system.n_pressure > 1:
        mu = _null_probe(lu, system, eps)
        diag["null_probe"] = mu
        diag["pressure_eig_estimate"] = eps * (1.0 / mu - 1.0) if mu > 0 else float("inf")
        rank_deficient = (1.0 - mu) < null_tol

    # Quasi-singular pressure modes have Schur eigenvalues comparable to eps,
    # which stationary refinement resolves far too slowly, so the default is
    # GMRES on the unshifted system preconditioned by the shifted factor.
    # With an exact null space the preconditioned operator is singular and
    # GMRES lets the null component drift; stationary refinement keeps it at
    # zero because null vectors are eigenvectors of the shifted matrix.
    bnorm = np.linalg.norm(b)
    iters = 0
    if bnorm == 0.0:
        x = np.zeros(system.n_unknowns)
        res = 0.0
    else:
        x = lu.solve(b)
        res = np.linalg.norm(b - k0 @ x) / bnorm
        if rank_deficient:
            for _ in range(refine_steps):
                if res < gmres_tol:
                    break
                x_new = x + lu.solve(b - k0 @ x)
                res_new = np.linalg.norm(b - k0 @ x_new) / bnorm
                if res_new >= res:
                    break
                x, res = x_new, res_new
                iters += 1
        if res > gmres_tol and not (rank_deficient and res <= residual_tol):
            count = [0]

            def _count(_):
                count[0] += 1

            prec = spla.LinearOperator(k0.shape, lu.solve, dtype=float)
            x, _ = spla.gmres(k0, b, x0=x, M=prec, rtol=gmres_tol, atol=0.0,
                              restart=restart, maxiter=max_restarts,
                              callback=_count, callback_type="pr_norm")
            res = np.linalg.norm(b - k0 @ x) / bnorm
            iters += count[0]
    diag["iterations"] = iters
    if not np.isfinite(res) or res > residual_tol:
        raise SolverError(f"relative residual {res:.3e} above {residual_tol:.1e}")

    nf, npr = system.n_free, system.n_pressure
    vel = np.zeros(system.dofs.n_velocity)
    vel[system.free] = x[:nf]
    pres = x[nf:nf + npr].reshape(-1, 10)
    diag.update({
        "residual": float(res),
        "divergence_residual": float(np.linalg.norm(system.B @ x[:nf])),
        "pressure_mean": float(system.mean_row @ x[nf:nf + npr]),
        "factor_nnz": int(lu.L.nnz + lu.U.nnz),
        "seconds": time.perf_counter() - t0,
    })
    return DiscreteSolution(system.mesh, system.dofs, vel, pres,
                            float(x[-1]), rank_deficient, diag)


def smallest_pressure_singular_value(system: SaddleSystem, max_dense: int = 5000) -> float:
    """Smallest singular value of B on the mean-zero pressure complement (dense, small meshes)."""
    if system.n_pressure > max_dense:
        raise ValueError("dense singular value estimate limited to small systems")
    bt = system.B.toarray().T
    m = system.mean_row / np.linalg.norm(system.mean_row)
    basis = np.linalg.svd(np.eye(len(m)) - np.outer(m, m))[0][:, :-1]
    s = np.linalg.svd(bt @ basis, compute_uv=False)
    return float(s.min())


# ---------------------------------------------------------------------------
# Pressure helpers and spurious modes
# ---------------------------------------------------------------------------

def pressure_mean(mesh: Triangulation, pressure: np.ndarray) -> float:
    return float(np.sum(pressure_basis_integrals(mesh) * pressure) / mesh.areas().sum())


def sting_field(mesh: Triangulation, coefficients: dict) -> np.ndarray:
    """P3 coefficients (nt, 10) of sum c * s_{E V} over {(t, local vertex): c}."""
    out = np.zeros((mesh.n_triangles, 10))
    for (t, lv), c in coefficients.items():
        out[t] += c * sting_lagrange_coefficients(lv)
    return out


def spurious_coefficients(mesh: Triangulation, v: int) -> dict:
    """Alternating sting weights at v: (-1)^i / (l_i l_{i+1}) around the star."""
    star = vertex_star(mesh, v)
    if star.size == 1:
        return {(int(star.triangles[0]), mesh.local_index(star.triangles[0], v)): 1.0}
    coef = {}
    n_sp = len(star.lengths)
    for i, t in enumerate(star.triangles):
        la = star.lengths[i]
        lb = star.lengths[(i + 1) % n_sp]
        coef[(int(t), mesh.local_index(t, v))] = (-1.0) ** i / (la * lb)
    return coef


def spurious_mode(mesh: Triangulation, report: SingularityReport, v: int) -> np.ndarray:
    """Mean-free alternating sting combination at a (quasi-)singular vertex."""
    if not report.quasi_singular[v]:
        raise ValueError(f"vertex {v} is not singular or quasi-singular")
    star = vertex_star(mesh, v)
    if star.interior and star.size != 4:
        raise ValueError(f"interior vertex {v} has {star.size} triangles, expected 4")
    q = sting_field(mesh, spurious_coefficients(mesh, v))
    return q - pressure_mean(mesh, q)


def null_residual(system: SaddleSystem, q: np.ndarray) -> float:
    """||B^T q|| / ||q|| on the free velocity DOFs."""
    q = np.asarray(q).ravel()
    return float(np.linalg.norm(system.B.T @ q) / np.linalg.norm(q))


# ---------------------------------------------------------------------------
# Interpolation and evaluation
# ---------------------------------------------------------------------------

def interpolate_velocity(dofs: DofMap, u: Callable) -> np.ndarray:
    """Nodal P4 interpolant; u(x, y) returns (ux, uy)."""
    x = dofs.node_coords
    ux, uy = u(x[:, 0], x[:, 1])
    return np.concatenate([np.broadcast_to(ux, len(x)), np.broadcast_to(uy, len(x))]).astype(float)


def interpolate_pressure(mesh: Triangulation, p: Callable) -> np.ndarray:
    """Continuous nodal P3 interpolant as per-triangle coefficients (nt, 10)."""
    x = np.einsum("nk,tkd->tnd", P3.node_barycentric, mesh.vertices[mesh.triangles])
    return np.asarray(p(x[..., 0], x[..., 1]), dtype=float) * np.ones(x.shape[:2])


def evaluate_pressure(mesh: Triangulation, pressure: np.ndarray, t: int, bary) -> np.ndarray:
    return P3.eval(bary) @ pressure[t]


def divergence_norms(solution: DiscreteSolution, rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """Per-triangle ||div u_h||_{0,K}."""
    rule = rule or collapsed_rule(8)
    _, area, inv_t = _geometry(solution.mesh)
    g = _p4_gradients(inv_t, rule)
    uc = solution.velocity_cells()
    div = np.einsum("tqi,ti->tq", g[..., 0], uc[..., 0]) + np.einsum("tqi,ti->tq", g[..., 1], uc[..., 1])
    return np.sqrt(area * (div ** 2 @ rule.weights))


def h1_seminorm(solution: DiscreteSolution) -> float:
    a_loc, _, _ = element_matrices(solution.mesh)
    uc = solution.velocity_cells()
    return float(np.sqrt(np.einsum("ti,tij,tj->", uc[..., 0], a_loc, uc[..., 0])
                         + np.einsum("ti,tij,tj->", uc[..., 1], a_loc, uc[..., 1])))
