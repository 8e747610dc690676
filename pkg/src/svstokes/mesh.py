"""Triangulations, vertex stars, singular-vertex classification and the
parametric mesh families used in the experiments."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

REGULAR, QUASI_SINGULAR, EXACTLY_SINGULAR = 0, 1, 2
CLASS_NAMES = ("regular", "quasi_singular", "exactly_singular")

EXACT_TOL = 1e-12
CORNER_TOL = 1e-9
DUPLICATE_TOL = 1e-12


class MeshError(ValueError):
    """Raised for meshes that violate the triangulation invariants."""


@dataclass(frozen=True, eq=False)
class Triangulation:
    vertices: np.ndarray            # (nv, 2)
    triangles: np.ndarray           # (nt, 3), counterclockwise
    edges: np.ndarray               # (ne, 2), sorted endpoints
    edge_triangles: np.ndarray      # (ne, 2), second entry -1 on the boundary
    triangle_edges: np.ndarray      # (nt, 3), local edges (0,1), (1,2), (2,0)
    boundary_edge: np.ndarray       # (ne,) bool
    boundary_vertex: np.ndarray     # (nv,) bool
    corner: np.ndarray              # (nv,) bool
    vertex_triangles: tuple = field(repr=False)
    boundary_loops: tuple = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_edge)

    def coords(self, t: int) -> np.ndarray:
        return self.vertices[self.triangles[t]]

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def local_index(self, t: int, v: int) -> int:
        hits = np.flatnonzero(self.triangles[t] == v)
        if len(hits) != 1:
            raise ValueError(f"vertex {v} is not a vertex of triangle {t}")
        return int(hits[0])

    def edge_index(self, a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        idx = np.searchsorted(self._edge_keys, key[0] * self.n_vertices + key[1])
        if idx >= self.n_edges or self._edge_keys[idx] != key[0] * self.n_vertices + key[1]:
            raise KeyError(f"no edge between {a} and {b}")
        return int(idx)

    @property
    def _edge_keys(self) -> np.ndarray:
        return self.edges[:, 0] * self.n_vertices + self.edges[:, 1]

    def vertex_location(self, v: int) -> str:
        if self.corner[v]:
            return "corner"
        return "boundary" if self.boundary_vertex[v] else "interior"


def _triangle_angles(p: np.ndarray) -> np.ndarray:
    """Interior angles (nt, 3) at the three local vertices."""
    out = np.empty(p.shape[:2])
    for i in range(3):
        a = p[:, (i + 1) % 3] - p[:, i]
        b = p[:, (i + 2) % 3] - p[:, i]
        cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        dot = (a * b).sum(axis=1)
        out[:, i] = np.arctan2(np.abs(cross), dot)
    return out


def build_connectivity(raw_vertices, raw_triangles) -> Triangulation:
    """Normalize orientation and derive edges, adjacency, boundary and corner tags."""
    verts = np.array(raw_vertices, dtype=float).reshape(-1, 2)
    tris = np.array(raw_triangles, dtype=int).reshape(-1, 3)
    nv = len(verts)
    if tris.size and (tris.min() < 0 or tris.max() >= nv):
        raise MeshError("triangle references an invalid vertex index")
    if np.any((tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])):
        raise MeshError("triangle with repeated vertex")
    pairs = cKDTree(verts).query_pairs(DUPLICATE_TOL)
    if pairs:
        i, j = sorted(pairs)[0]
        raise MeshError(f"duplicate vertices {i} and {j}")

    p = verts[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area2 = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    scale = max(np.ptp(verts, axis=0).max(), 1.0) if nv else 1.0
    degenerate = np.abs(area2) <= 1e-14 * scale**2
    if np.any(degenerate):
        raise MeshError(f"zero-area triangle {int(np.flatnonzero(degenerate)[0])}")
    flip = area2 < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    nt = len(tris)
    local = np.array([[0, 1], [1, 2], [2, 0]])
    half = tris[:, local].reshape(-1, 2)                 # (3 nt, 2), oriented
    keys = np.sort(half, axis=1)
    uniq, inverse, counts = np.unique(keys[:, 0] * nv + keys[:, 1], return_inverse=True,
                                      return_counts=True)
    if np.any(counts > 2):
        bad = uniq[np.flatnonzero(counts > 2)[0]]
        raise MeshError(f"non-manifold edge ({bad // nv}, {bad % nv})")
    edges = np.column_stack([uniq // nv, uniq % nv])
    ne = len(edges)
    triangle_edges = inverse.reshape(nt, 3)

    edge_triangles = -np.ones((ne, 2), dtype=int)
    owner = np.repeat(np.arange(nt), 3)
    for h in range(3 * nt):           # deterministic fill in triangle order
        e = inverse[h]
        slot = 0 if edge_triangles[e, 0] < 0 else 1
        edge_triangles[e, slot] = owner[h]
    boundary_edge = edge_triangles[:, 1] < 0
    # an interior edge must be traversed in opposite directions by its two triangles
    for e in np.flatnonzero(~boundary_edge):
        t0, t1 = edge_triangles[e]
        h0 = [tuple(x) for x in tris[t0, local]]
        h1 = [tuple(x) for x in tris[t1, local]]
        a, b = edges[e]
        if ((a, b) in h0) == ((a, b) in h1):
            raise MeshError(f"inconsistent orientation across edge ({a}, {b})")

    boundary_vertex = np.zeros(nv, dtype=bool)
    boundary_vertex[edges[boundary_edge].ravel()] = True

    vt = [[] for _ in range(nv)]
    for t, tri in enumerate(tris):
        for v in tri:
            vt[v].append(t)
    vertex_triangles = tuple(np.array(x, dtype=int) for x in vt)

    # boundary loops follow the counterclockwise orientation of the domain
    nxt = {}
    for h in np.flatnonzero(boundary_edge[inverse]):
        a, b = half[h]
        if a in nxt:
            raise MeshError(f"boundary pinch at vertex {a}")
        nxt[int(a)] = int(b)
    loops, seen = [], set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop, v = [], start
        while v not in seen:
            seen.add(v)
            loop.append(v)
            v = nxt[v]
        loops.append(np.array(loop, dtype=int))

    corner = np.zeros(nv, dtype=bool)
    prev = {b: a for a, b in nxt.items()}
    for v, b in nxt.items():
        a = prev[v]
        u, w = verts[v] - verts[a], verts[b] - verts[v]
        ang = np.arctan2(abs(u[0] * w[1] - u[1] * w[0]), u @ w)
        corner[v] = ang > CORNER_TOL

    return Triangulation(verts, tris, edges, edge_triangles, triangle_edges, boundary_edge,
                         boundary_vertex, corner, vertex_triangles, tuple(loops))


# ---------------------------------------------------------------------------
# Vertex stars
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VertexStar:
    """Triangles around a vertex in counterclockwise order.

    ``spokes`` are the neighbouring vertices; triangle ``triangles[i]`` lies
    between ``spokes[i]`` and ``spokes[i + 1]`` (indices mod N for interior
    vertices, so interior stars have N spokes and boundary stars N + 1).
    """

    vertex: int
    triangles: np.ndarray
    spokes: np.ndarray
    directions: np.ndarray
    lengths: np.ndarray
    angles: np.ndarray
    interior: bool

    @property
    def size(self) -> int:
        return len(self.triangles)

    def spoke_after(self, i: int) -> int:
        """Index into ``spokes`` of the far side of triangle i."""
        return (i + 1) % len(self.spokes) if self.interior else i + 1

    def adjacent_sums(self) -> np.ndarray:
        """Sums of angles of back-to-back triangle pairs (the set Upsilon)."""
        a = self.angles
        if self.interior:
            return a + np.roll(a, -1)
        return a[:-1] + a[1:]


def vertex_star(mesh: Triangulation, v: int) -> VertexStar:
    if not 0 <= v < mesh.n_vertices:
        raise IndexError(f"invalid vertex index {v}")
    tris = mesh.vertex_triangles[v]
    start_of, end_of = {}, {}
    for t in tris:
        i = mesh.local_index(t, v)
        a, b = mesh.triangles[t, (i + 1) % 3], mesh.triangles[t, (i + 2) % 3]
        start_of[int(a)] = int(t)
        end_of[int(t)] = int(b)
    interior = not mesh.boundary_vertex[v]
    if interior:
        first_spoke = int(mesh.triangles[tris[0], (mesh.local_index(tris[0], v) + 1) % 3])
    else:
        ends = set(end_of.values())
        first_spoke = next(s for s in start_of if s not in ends)
    order, spokes, s = [], [first_spoke], first_spoke
    for _ in range(len(tris)):
        t = start_of[s]
        order.append(t)
        s = end_of[t]
        spokes.append(s)
    if interior:
        spokes = spokes[:-1]
    spokes = np.array(spokes, dtype=int)
    vec = mesh.vertices[spokes] - mesh.vertices[v]
    lengths = np.linalg.norm(vec, axis=1)
    directions = vec / lengths[:, None]
    n = len(order)
    angles = np.empty(n)
    for i in range(n):
        u, w = directions[i], directions[(i + 1) % len(spokes)]
        angles[i] = np.arctan2(u[0] * w[1] - u[1] * w[0], u @ w)
    return VertexStar(v, np.array(order, dtype=int), spokes, directions, lengths, angles, interior)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Chain:
    """Maximal run of consecutive boundary quasi-singular vertices."""

    vertices: tuple         # in counterclockwise boundary order
    before: int             # boundary vertex preceding the run (-1 if the loop is all quasi)
    after: int              # boundary vertex following the run
    corners: tuple

    @property
    def has_corner(self) -> bool:
        return bool(self.corners)


@dataclass
class SingularityReport:
    min_angle: float
    theta_sigma: float
    upsilon: list
    vertex_class: np.ndarray
    location: list
    chains: list
    theta_min: float
    warnings: list = field(default_factory=list)

    @property
    def quasi_singular(self) -> np.ndarray:
        return self.vertex_class >= QUASI_SINGULAR

    @property
    def exactly_singular(self) -> np.ndarray:
        return self.vertex_class == EXACTLY_SINGULAR

    def vertices_of(self, location: str, quasi_only: bool = True) -> list:
        return [v for v, loc in enumerate(self.location)
                if loc == location and (not quasi_only or self.quasi_singular[v])]

    def counts(self) -> dict:
        return {
            "quasi_singular": int(self.quasi_singular.sum()),
            "exactly_singular": int(self.exactly_singular.sum()),
            "regular": int((self.vertex_class == REGULAR).sum()),
        }

    def to_dict(self) -> dict:
        return {
            "min_angle": self.min_angle,
            "theta_sigma": self.theta_sigma,
            "theta_min": self.theta_min,
            "counts": self.counts(),
            "chains": [{"vertices": list(c.vertices), "before": c.before, "after": c.after,
                        "corners": list(c.corners)} for c in self.chains],
            "warnings": list(self.warnings),
            "vertices": [{"index": v, "class": CLASS_NAMES[int(c)], "location": loc,
                          "upsilon": [float(x) for x in ups]}
                         for v, (c, loc, ups) in enumerate(zip(self.vertex_class, self.location,
                                                               self.upsilon))],
        }


def _extract_chains(mesh: Triangulation, quasi: np.ndarray) -> list:
    chains = []
    for loop in mesh.boundary_loops:
        n = len(loop)
        flags = quasi[loop]
        if flags.all():
            chains.append(Chain(tuple(int(v) for v in loop), -1, -1,
                                tuple(int(v) for v in loop if mesh.corner[v])))
            continue
        if not flags.any():
            continue
        start = int(np.flatnonzero(~flags)[0])
        run = []
        for k in range(1, n + 1):
            i = (start + k) % n
            if flags[i]:
                run.append(i)
            elif run:
                verts = tuple(int(loop[j]) for j in run)
                chains.append(Chain(verts, int(loop[(run[0] - 1) % n]), int(loop[i]),
                                    tuple(v for v in verts if mesh.corner[v])))
                run = []
    return chains


def classify(mesh: Triangulation) -> SingularityReport:
    angles = _triangle_angles(mesh.vertices[mesh.triangles])
    min_angle = float(angles.min())
    theta_sigma = min(min_angle, np.pi / 6)
    upsilon, vclass, location = [], np.zeros(mesh.n_vertices, dtype=int), []
    theta_min = np.inf
    warnings = []
    for v in range(mesh.n_vertices):
        star = vertex_star(mesh, v)
        ups = star.adjacent_sums()
        upsilon.append(ups)
        location.append(mesh.vertex_location(v))
        dev = np.abs(ups - np.pi)
        if np.all(dev < theta_sigma):
            vclass[v] = EXACTLY_SINGULAR if np.all(dev <= EXACT_TOL) else QUASI_SINGULAR
            if star.interior and star.size != 4:
                warnings.append(f"interior quasi-singular vertex {v} has {star.size} triangles")
        best = np.abs(np.sin(ups)).max() if len(ups) else 0.0
        theta_min = min(theta_min, max(best, 0.0))
    quasi = vclass >= QUASI_SINGULAR
    for e in mesh.interior_edges:
        a, b = mesh.edges[e]
        if quasi[a] and quasi[b]:
            warnings.append(f"interior edge ({a}, {b}) joins two quasi-singular vertices")
    for w in warnings:
        logger.warning(w)
    return SingularityReport(min_angle, theta_sigma, upsilon, vclass, location,
                             _extract_chains(mesh, quasi), float(theta_min), warnings)


def validate_assumptions(mesh: Triangulation, report: SingularityReport) -> list:
    """Violations of the mesh conditions the boundary postprocessing relies on.

    Clause 1: each straight boundary segment between two corners carries at
    least two regular vertices (corners included). Clause 2: no quasi-singular
    corner is joined by an interior edge to another boundary vertex.
    """
    violations = []
    quasi = report.quasi_singular
    for loop in mesh.boundary_loops:
        cidx = [i for i, v in enumerate(loop) if mesh.corner[v]]
        n = len(loop)
        for k, i in enumerate(cidx):
            j = cidx[(k + 1) % len(cidx)]
            span = (j - i) % n or n
            seg = [int(loop[(i + s) % n]) for s in range(span + 1)]
            n_regular = sum(not quasi[v] for v in seg)
            if n_regular < 2:
                violations.append(
                    f"clause 1: boundary segment {seg[0]}->{seg[-1]} has {n_regular} regular vertices")
    for e in mesh.interior_edges:
        a, b = (int(x) for x in mesh.edges[e])
        for c, o in ((a, b), (b, a)):
            if mesh.corner[c] and quasi[c] and mesh.boundary_vertex[o]:
                violations.append(
                    f"clause 2: quasi-singular corner {c} has interior edge to boundary vertex {o}")
    return violations


# ---------------------------------------------------------------------------
# Mesh families
# ---------------------------------------------------------------------------

def generate_foursplit(N: int, a: float = 1.0, b: float = 1.0) -> Triangulation:
    """Unit square, N x N cells, each split in four at a point on its rising diagonal.

    The added point divides the diagonal with ratio a:b from the lower-left corner.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    t = a / (a + b)
    if not 0.0 < t < 1.0:
        raise ValueError("ratio must place the added vertex strictly inside the cell")
    h = 1.0 / N
    xs = np.arange(N + 1) * h
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    cx, cy = np.meshgrid(np.arange(N) * h + t * h, np.arange(N) * h + t * h, indexing="xy")
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    verts = np.vstack([grid, centers])
    tris = []
    for j in range(N):
        for i in range(N):
            c00 = j * (N + 1) + i
            c10, c01, c11 = c00 + 1, c00 + N + 1, c00 + N + 2
            p = (N + 1) ** 2 + j * N + i
            tris += [(c00, c10, p), (c10, c11, p), (c11, c01, p), (c01, c00, p)]
    return build_connectivity(verts, tris)


def generate_boundary_singular_strip(N: int) -> Triangulation:
    """Unit square whose bottom row is made of fans with exactly singular boundary vertices.

    Row 0: cell i is a fan from its upper-left corner to 1 + (i mod 3) extra
    points on the bottom edge (graded spacing), so every extra point meets
    exactly two triangles. The lower-left corner then meets a single triangle.
    Rows 1..N-1 are four-split at the cell centres (interior exactly singular
    vertices). Grid vertices on the bottom edge stay regular.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    h = 1.0 / N
    xs = np.arange(N + 1) * h
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    verts = [np.column_stack([gx.ravel(), gy.ravel()])]
    nv = (N + 1) ** 2
    tris = []

    def g(i, j):
        return j * (N + 1) + i

    centers = []
    for j in range(1, N):
        for i in range(N):
            p = nv + len(centers)
            centers.append(((i + 0.5) * h, (j + 0.5) * h))
            c00, c10, c01, c11 = g(i, j), g(i + 1, j), g(i, j + 1), g(i + 1, j + 1)
            tris += [(c00, c10, p), (c10, c11, p), (c11, c01, p), (c01, c00, p)]
    verts.append(np.array(centers).reshape(-1, 2))
    nv += len(centers)

    extra = []
    for i in range(N):
        m = 1 + i % 3
        fr = (np.arange(1, m + 1) / (m + 1)) ** 1.25
        ids = list(range(nv + len(extra), nv + len(extra) + m))
        extra += [((i + f) * h, 0.0) for f in fr]
        bottom = [g(i, 0)] + ids + [g(i + 1, 0)]
        w = g(i, 1)
        tris += [(bottom[k], bottom[k + 1], w) for k in range(m + 1)]
        tris.append((g(i + 1, 0), g(i + 1, 1), w))
    verts.append(np.array(extra))
    return build_connectivity(np.vstack(verts), tris)


def generate_reentrant_corner() -> Triangulation:
    """Square [-2, 2]^2 minus its first quadrant, ten triangles.

    The re-entrant corner (0, 0) is a three-triangle fan of right angles and
    both boundary legs carry an exactly singular midpoint (1, 0) and (0, 1),
    so the corner chain has vertices on both sides of the corner.
    """
    verts = [(0, 0), (1, 0), (2, 0), (0, 1), (0, 2), (-1, 0), (0, -1),
             (2, -2), (-2, -2), (-2, 2)]
    c, v1, r, y1, y2, a, b, p1, p2, p3 = range(10)
    tris = [(c, a, y1), (c, b, a), (c, v1, b), (v1, r, b), (y1, a, y2),
            (r, p1, b), (b, p1, p2), (b, p2, a), (a, p2, p3), (a, p3, y2)]
    return build_connectivity(verts, tris)


def single_triangle() -> Triangulation:
    return build_connectivity([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


# ---------------------------------------------------------------------------
# JSON I/O
# ---------------------------------------------------------------------------

def mesh_to_dict(mesh: Triangulation) -> dict:
    return {"vertices": mesh.vertices.tolist(), "triangles": mesh.triangles.tolist()}


def save_mesh(mesh: Triangulation, path) -> None:
    Path(path).write_text(json.dumps(mesh_to_dict(mesh)))


def load_mesh(path) -> Triangulation:
    data = json.loads(Path(path).read_text())
    return build_connectivity(data["vertices"], data["triangles"])
