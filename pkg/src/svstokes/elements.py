"""Reference-element machinery.

Lagrange P3/P4 bases on the principal lattice, affine maps, the 16-point
Lyness rule, a collapsed Gauss-Jacobi rule of arbitrary degree, sting
functions, the interior bubble pairs g+/g- and the alternative P3 basis
built from them.

Local conventions used throughout the package:

* triangles are counterclockwise, local vertices 0, 1, 2;
* local edges are (0, 1), (1, 2), (2, 0);
* lattice nodes are ordered vertices, then edge nodes (edge by edge, walking
  from the first to the second endpoint), then interior nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial, sqrt

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


class DegenerateTriangleError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Lagrange bases
# ---------------------------------------------------------------------------

def lattice(k: int) -> np.ndarray:
    """Integer barycentric multi-indices of the degree-k principal lattice."""
    nodes = [tuple(k if i == j else 0 for i in range(3)) for j in range(3)]
    for a, b in LOCAL_EDGES:
        for j in range(1, k):
            alpha = [0, 0, 0]
            alpha[a], alpha[b] = k - j, j
            nodes.append(tuple(alpha))
    for i in range(1, k):
        for j in range(1, k - i):
            nodes.append((k - i - j, i, j))
    # interior ordering (2,1,1), (1,2,1), (1,1,2) for k = 4
    interior = sorted(nodes[3 + 3 * (k - 1):], reverse=True)
    return np.array(nodes[:3 + 3 * (k - 1)] + interior, dtype=int)


def _factor_table(k, alpha, t):
    """Values and derivatives of prod_{j<alpha} (k t - j)/(j + 1)."""
    val = np.ones_like(t)
    der = np.zeros_like(t)
    for j in range(alpha):
        f = (k * t - j) / (j + 1)
        df = k / (j + 1)
        der = der * f + val * df
        val = val * f
    return val, der


@dataclass(frozen=True)
class LagrangeBasis:
    """Nodal basis of P^k on the reference triangle (0,0), (1,0), (0,1)."""

    degree: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", lattice(self.degree))

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def node_barycentric(self) -> np.ndarray:
        return self.nodes / self.degree

    def _tables(self, bary):
        bary = np.atleast_2d(np.asarray(bary, dtype=float))
        k = self.degree
        n_pts = bary.shape[0]
        vals = np.ones((n_pts, self.size))
        dbary = np.zeros((n_pts, self.size, 3))
        for m, alpha in enumerate(self.nodes):
            parts = [_factor_table(k, alpha[i], bary[:, i]) for i in range(3)]
            v = [p[0] for p in parts]
            d = [p[1] for p in parts]
            vals[:, m] = v[0] * v[1] * v[2]
            dbary[:, m, 0] = d[0] * v[1] * v[2]
            dbary[:, m, 1] = v[0] * d[1] * v[2]
            dbary[:, m, 2] = v[0] * v[1] * d[2]
        return vals, dbary

    def eval(self, bary) -> np.ndarray:
        """Basis values at barycentric points, shape (n_pts, size)."""
        return self._tables(bary)[0]

    def grad_ref(self, bary) -> np.ndarray:
        """Gradients w.r.t. reference coordinates (xi, eta), shape (n_pts, size, 2)."""
        _, d = self._tables(bary)
        return np.stack([d[..., 1] - d[..., 0], d[..., 2] - d[..., 0]], axis=-1)


P3 = LagrangeBasis(3)
P4 = LagrangeBasis(4)


def bary_to_xy(triangle, bary) -> np.ndarray:
    return np.asarray(bary) @ np.asarray(triangle, dtype=float)


def xy_to_bary(triangle, x) -> np.ndarray:
    amap = AffineMap.from_triangle(triangle)
    ref = amap.inverse(x)
    ref = np.atleast_2d(ref)
    return np.column_stack([1.0 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]])


# ---------------------------------------------------------------------------
# Affine geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineMap:
    """x = jacobian @ xi + translation, mapping the reference triangle onto K."""

    jacobian: np.ndarray
    translation: np.ndarray

    @classmethod
    def from_triangle(cls, triangle):
        t = np.asarray(triangle, dtype=float)
        jac = np.column_stack([t[1] - t[0], t[2] - t[0]])
        return cls(jac, t[0].copy())

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.jacobian))

    @property
    def inv_transpose(self) -> np.ndarray:
        return np.linalg.inv(self.jacobian).T

    def __call__(self, xi):
        return np.asarray(xi) @ self.jacobian.T + self.translation

    def inverse(self, x):
        return (np.asarray(x) - self.translation) @ np.linalg.inv(self.jacobian).T


def triangle_area(triangle) -> float:
    t = np.asarray(triangle, dtype=float)
    return 0.5 * ((t[1, 0] - t[0, 0]) * (t[2, 1] - t[0, 1])
                  - (t[2, 0] - t[0, 0]) * (t[1, 1] - t[0, 1]))


def barycentric_gradients(triangle) -> np.ndarray:
    """Rows are grad(lambda_i), i = 0, 1, 2."""
    inv_t = AffineMap.from_triangle(triangle).inv_transpose
    g1, g2 = inv_t[:, 0], inv_t[:, 1]
    return np.array([-g1 - g2, g1, g2])


def physical_gradients(triangle, basis: LagrangeBasis, bary) -> np.ndarray:
    """Basis gradients on the physical triangle, shape (n_pts, size, 2)."""
    inv_t = AffineMap.from_triangle(triangle).inv_transpose
    return basis.grad_ref(bary) @ inv_t.T


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points with weights summing to one (integral = |K| * sum)."""

    bary: np.ndarray
    weights: np.ndarray
    degree: int

    def points(self, triangle) -> np.ndarray:
        return bary_to_xy(triangle, self.bary)

    def integrate(self, triangle, f) -> float:
        x = self.points(triangle)
        return triangle_area(triangle) * float(np.dot(self.weights, f(x[:, 0], x[:, 1])))


def _lyness16() -> QuadratureRule:
    a = (3.0 - sqrt(6.0)) / 6.0
    b = 1.0 - a
    ref = [(0, 0), (1, 0), (0, 1),
           (0, a), (0, b), (a, 0), (b, 0), (a, b), (b, a),
           (0, 0.5), (0.5, 0), (0.5, 0.5),
           (0.25, 0.25), (0.25, 0.5), (0.5, 0.25),
           (1 / 3, 1 / 3)]
    w = [-5 / 252] * 3 + [3 / 70] * 6 + [17 / 315] * 3 + [128 / 315] * 3 + [-81 / 140]
    ref = np.array(ref, dtype=float)
    bary = np.column_stack([1.0 - ref[:, 0] - ref[:, 1], ref])
    # the three G_i-type points must read exactly 1/2, 1/4, 1/4
    bary[12:15] = [[0.5, 0.25, 0.25], [0.25, 0.25, 0.5], [0.25, 0.5, 0.25]]
    bary[9:12] = [[0.5, 0.0, 0.5], [0.5, 0.5, 0.0], [0.0, 0.5, 0.5]]
    bary[15] = 1.0 / 3.0
    return QuadratureRule(bary, np.array(w), 6)


LYNESS16 = _lyness16()


@lru_cache(maxsize=None)
def collapsed_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi x Gauss-Legendre rule exact to total ``degree``."""
    n = max(1, (degree + 2) // 2)
    xu, wu = roots_jacobi(n, 1.0, 0.0)
    xv, wv = roots_legendre(n)
    u = 0.5 * (1.0 + xu)
    v = 0.5 * (1.0 + xv)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    xi = uu.ravel()
    eta = (vv * (1.0 - uu)).ravel()
    w = np.outer(wu, wv).ravel() / 4.0
    bary = np.column_stack([1.0 - xi - eta, xi, eta])
    return QuadratureRule(bary, w, degree)


def lyness_integrate(triangle, f) -> float:
    """|K| * sum_i w_i f(x_i) with the 16-point Lyness rule; f(x, y) is vectorized."""
    return LYNESS16.integrate(triangle, f)


def reference_monomial_integral(m: int, n: int) -> float:
    """Integral of x^m y^n over the reference triangle, m! n! / (m + n + 2)!."""
    return factorial(m) * factorial(n) / factorial(m + n + 2)


# ---------------------------------------------------------------------------
# Sting functions
# ---------------------------------------------------------------------------

def sting_profile(t):
    return (56.0 * t**3 - 63.0 * t**2 + 18.0 * t - 1.0) / 10.0


def sting_profile_deriv(t):
    return (168.0 * t**2 - 126.0 * t + 18.0) / 10.0


def rot90(v):
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


@dataclass(frozen=True)
class StingFunction:
    """Cubic on one triangle: 1 at the vertex ``vertex``, -1/10 on the opposite edge."""

    triangle: np.ndarray
    vertex: int
    triangle_id: int = -1

    def __post_init__(self):
        object.__setattr__(self, "triangle", np.asarray(self.triangle, dtype=float))

    @property
    def apex(self) -> np.ndarray:
        return self.triangle[self.vertex]

    @property
    def edge(self) -> tuple:
        t = self.triangle
        return t[(self.vertex + 1) % 3], t[(self.vertex + 2) % 3]

    @property
    def midpoint(self) -> np.ndarray:
        a, b = self.edge
        return 0.5 * (a + b)

    @property
    def outward_normal(self) -> np.ndarray:
        a, b = self.edge
        tau = (b - a) / np.linalg.norm(b - a)
        # ccw triangle: the outward normal is the clockwise rotation of the tangent
        return np.array([tau[1], -tau[0]])

    @property
    def height(self) -> float:
        return float(-self.outward_normal @ (self.apex - self.midpoint))

    def linear_form(self, x):
        return (np.asarray(x) - self.midpoint) @ (-self.outward_normal)

    def __call__(self, x):
        return sting_profile(self.linear_form(x) / self.height)

    def grad(self, x):
        t = self.linear_form(x) / self.height
        d = sting_profile_deriv(t) / self.height
        return np.multiply.outer(d, -self.outward_normal)


def sting_eval(sting: StingFunction, x):
    return sting(x)


def sting_grad(sting: StingFunction, x):
    return sting.grad(x)


def sting_lagrange_coefficients(vertex: int) -> np.ndarray:
    """P3 Lagrange coefficients of the sting at local vertex ``vertex`` (affine invariant)."""
    return sting_profile(P3.node_barycentric[:, vertex])


def sting_moment(sting: StingFunction, q) -> float:
    """(s, q)_K for a P3 field q given by local Lagrange coefficients: |K|/100 * q(V)."""
    return triangle_area(sting.triangle) / 100.0 * float(np.asarray(q)[sting.vertex])


def sting_moment_quadrature(sting: StingFunction, q) -> float:
    """Brute-force (s, q)_K by the Lyness rule (integrand of degree 6)."""
    x = LYNESS16.points(sting.triangle)
    qv = P3.eval(LYNESS16.bary) @ np.asarray(q, dtype=float)
    return triangle_area(sting.triangle) * float(np.dot(LYNESS16.weights, sting(x) * qv))


def _vertex_jacobian(triangle, vertex, v):
    """Jacobian d(v_1, v_2)/d(x, y) of a P4 vector field at a local vertex."""
    bary = np.zeros((1, 3))
    bary[0, vertex] = 1.0
    grads = physical_gradients(triangle, P4, bary)[0]      # (15, 2)
    return np.asarray(v, dtype=float).T @ grads           # (2, 2)


def sting_div_pairing(sting: StingFunction, v) -> float:
    """Closed form of (s_EV, div v)_K from directional derivatives of v at V.

    ``v`` holds the (15, 2) local P4 coefficients of the vector field.
    """
    t = sting.triangle
    i = sting.vertex
    V, A, B = t[i], t[(i + 1) % 3], t[(i + 2) % 3]
    l1, l2 = np.linalg.norm(A - V), np.linalg.norm(B - V)
    tau1, tau2 = (A - V) / l1, (B - V) / l2
    jac = _vertex_jacobian(t, i, v)
    dv1, dv2 = jac @ tau1, jac @ tau2
    return l1 * l2 / 200.0 * float(dv2 @ rot90(tau1) - dv1 @ rot90(tau2))


def sting_div_quadrature(sting: StingFunction, v) -> float:
    """Brute-force (s_EV, div v)_K with the Lyness rule."""
    t = sting.triangle
    grads = physical_gradients(t, P4, LYNESS16.bary)       # (16, 15, 2)
    v = np.asarray(v, dtype=float)
    div = grads[:, :, 0] @ v[:, 0] + grads[:, :, 1] @ v[:, 1]
    s = sting(LYNESS16.points(t))
    return triangle_area(t) * float(np.dot(LYNESS16.weights, s * div))


# ---------------------------------------------------------------------------
# Interior bubble pairs g+ / g-
# ---------------------------------------------------------------------------

def iota_plus(t):
    return 8.0 * t**3 + 3.0 * t**2


def iota_minus(t):
    return 8.0 * t**3 - 3.0 * t**2


def iota_plus_deriv(t):
    return 24.0 * t**2 + 6.0 * t


def iota_minus_deriv(t):
    return 24.0 * t**2 - 6.0 * t


@dataclass(frozen=True)
class BubblePair:
    """The cubics g+ = iota+(mu/d), g- = iota-(mu/d) attached to one vertex."""

    triangle: np.ndarray
    vertex: int
    triangle_id: int = -1

    def __post_init__(self):
        object.__setattr__(self, "triangle", np.asarray(self.triangle, dtype=float))

    @property
    def centroid(self) -> np.ndarray:
        return self.triangle.mean(axis=0)

    @property
    def direction(self) -> np.ndarray:
        g = self.centroid - self.triangle[self.vertex]
        return g / np.linalg.norm(g)

    @property
    def normal(self) -> np.ndarray:
        return rot90(self.direction)

    def mu(self, x):
        return (np.asarray(x) - self.centroid) @ self.normal

    @property
    def distance(self) -> float:
        other = self.triangle[(self.vertex + 1) % 3]
        return abs(float(self.mu(other)))

    def plus(self, x):
        return iota_plus(self.mu(x) / self.distance)

    def minus(self, x):
        return iota_minus(self.mu(x) / self.distance)

    def grad_plus(self, x):
        d = self.distance
        return np.multiply.outer(iota_plus_deriv(self.mu(x) / d) / d, self.normal)

    def grad_minus(self, x):
        d = self.distance
        return np.multiply.outer(iota_minus_deriv(self.mu(x) / d) / d, self.normal)


INTERIOR_LYNESS = slice(12, 16)


def bubble_gradient_check(triangle, vertex: int) -> dict:
    """Compare grad g+/- at the four interior Lyness points with 3/d * n or 0."""
    bp = BubblePair(triangle, vertex)
    pts = LYNESS16.points(triangle)[INTERIOR_LYNESS]
    mu = bp.mu(pts)
    scale = 3.0 / bp.distance
    tol = 1e-12 * bp.distance
    exp_plus = np.where((mu > tol)[:, None], scale * bp.normal, 0.0)
    exp_minus = np.where((mu < -tol)[:, None], scale * bp.normal, 0.0)
    gp, gm = bp.grad_plus(pts), bp.grad_minus(pts)
    return {
        "points": pts,
        "mu": mu,
        "distance": bp.distance,
        "grad_plus": gp,
        "grad_minus": gm,
        "max_dev_plus": float(np.abs(gp - exp_plus).max()),
        "max_dev_minus": float(np.abs(gm - exp_minus).max()),
    }


# ---------------------------------------------------------------------------
# Alternative P3 basis <1, g1+, g1-, g2+, g2-, g3+, g3-, s1, s2, s3>
# ---------------------------------------------------------------------------

def p3_alternative_basis_matrix(triangle) -> np.ndarray:
    """Columns: Lagrange P3 coefficients of the ten alternative basis members."""
    t = np.asarray(triangle, dtype=float)
    nodes = bary_to_xy(t, P3.node_barycentric)
    cols = [np.ones(10)]
    for i in range(3):
        bp = BubblePair(t, i)
        cols += [bp.plus(nodes), bp.minus(nodes)]
    for i in range(3):
        cols.append(StingFunction(t, i)(nodes))
    return np.column_stack(cols)


def p3_change_of_basis(triangle) -> np.ndarray:
    """Matrix taking Lagrange P3 coefficients to alternative-basis coefficients."""
    t = np.asarray(triangle, dtype=float)
    longest = max(np.sum((t[i] - t[i - 1]) ** 2) for i in range(3))
    if not longest > 0 or abs(triangle_area(t)) < 1e-12 * longest:
        raise DegenerateTriangleError("triangle is degenerate")
    m = p3_alternative_basis_matrix(t)
    if not np.all(np.isfinite(m)) or np.linalg.cond(m) > 1e12:
        raise DegenerateTriangleError("alternative P3 basis is numerically singular")
    return np.linalg.inv(m)
