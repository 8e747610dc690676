"""Removal of spurious pressure components from vertex and midpoint jumps.

The computed correction s_h is a combination of sting functions supported at
(quasi-)singular vertices.  It is assembled in three stages, each reading the
jumps of the field already corrected by the previous stages:

1. interior vertices with four triangles,
2. boundary chains that do not contain a corner,
3. chains containing a corner, processed from the midpoint of the edge R-W
   next to the first regular vertex R back towards the corner, then around
   the corner fan, then along the other side of the corner.

The result is p_tilde = p_h - (s_h - mean(s_h)).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .elements import P3, p3_change_of_basis, sting_lagrange_coefficients
from .mesh import Chain, SingularityReport, Triangulation, _extract_chains, vertex_star

logger = logging.getLogger(__name__)

SCOPES = ("quasi_singular", "all_vertices")
INTERIOR, BOUNDARY_CHAIN, CORNER_CHAIN = "interior", "boundary_chain", "corner_chain"
STING_MEAN = 1.0 / 100.0          # integral of a sting over K divided by |K|


class PostprocessError(ValueError):
    """A stage precondition does not hold for the given vertex or chain."""


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JumpRecord:
    site: tuple                 # ("vertex", v) or ("midpoint", a, b)
    triangles: tuple            # (K_a, K_b)
    value: float                # p|K_a - p|K_b


@dataclass
class StingCorrection:
    coefficients: dict = field(default_factory=dict)    # (t, local vertex) -> value
    provenance: dict = field(default_factory=dict)      # (t, local vertex) -> stage tag
    mean: float = 0.0
    jumps: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def add(self, key, value, tag):
        key = (int(key[0]), int(key[1]))
        self.coefficients[key] = self.coefficients.get(key, 0.0) + float(value)
        self.provenance[key] = tag

    def is_empty(self) -> bool:
        return not self.coefficients

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "coefficients": [{"triangle": t, "local_vertex": lv, "value": c,
                              "stage": self.provenance[(t, lv)]}
                             for (t, lv), c in sorted(self.coefficients.items())],
            "jumps": [{"site": list(j.site), "triangles": list(j.triangles), "value": j.value}
                      for j in self.jumps],
            "warnings": list(self.warnings),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------------------
# Field helpers
# ---------------------------------------------------------------------------

def local_value(mesh: Triangulation, pressure: np.ndarray, t: int, v: int) -> float:
    """Trace of the P3 polynomial on triangle t at its vertex v (nodal value)."""
    return float(pressure[t, mesh.local_index(t, v)])


def vertex_jump(mesh: Triangulation, pressure: np.ndarray, v: int, ta: int, tb: int) -> float:
    """[[p]]_V = p|K_a(V) - p|K_b(V)."""
    for t in (ta, tb):
        if v not in mesh.triangles[t]:
            raise PostprocessError(f"vertex {v} is not a vertex of triangle {t}")
    return local_value(mesh, pressure, ta, v) - local_value(mesh, pressure, tb, v)


def midpoint_jump(mesh: Triangulation, pressure: np.ndarray, a: int, b: int,
                  ta: int, tb: int) -> float:
    """[[p]]_M at the midpoint of edge (a, b) shared by K_a and K_b."""
    vals = []
    for t in (ta, tb):
        bary = np.zeros(3)
        bary[mesh.local_index(t, a)] = 0.5
        bary[mesh.local_index(t, b)] = 0.5
        vals.append(float(P3.eval(bary)[0] @ pressure[t]))
    return vals[0] - vals[1]


def sting_field(mesh: Triangulation, coefficients: dict) -> np.ndarray:
    out = np.zeros((mesh.n_triangles, 10))
    for (t, lv), c in coefficients.items():
        out[t] += c * sting_lagrange_coefficients(lv)
    return out


def _key(mesh, t, v):
    return (int(t), mesh.local_index(t, v))


def _subtract(mesh, field_, coefs: dict):
    out = field_.copy()
    for (t, lv), c in coefs.items():
        out[t] -= c * sting_lagrange_coefficients(lv)
    return out


# ---------------------------------------------------------------------------
# Interior vertices
# ---------------------------------------------------------------------------

def pair_gauge(jump: float, l_a: float, l_b: float) -> tuple:
    """Solve g_a l_a + g_b l_b = 0, g_a - g_b = jump."""
    s = l_a + l_b
    return jump * l_b / s, -jump * l_a / s


def interior_correction(mesh: Triangulation, pressure: np.ndarray, v: int,
                        record: Optional[list] = None) -> dict:
    """Sting coefficients on the four triangles around interior vertex v.

    Triangle T_i lies between spokes i and i+1.  For the interface between
    T_a and T_{a+1} the non-shared spokes are a and a+2, giving the pair
    relation g_a l_a + g_{a+1} l_{a+2} = 0.  Of the two pairs of opposite
    interfaces the one whose adjacent-angle sums are closer to pi is used.
    """
    star = vertex_star(mesh, v)
    if not star.interior or star.size != 4:
        raise PostprocessError(f"vertex {v} is not an interior vertex with 4 triangles")
    dev = np.abs(star.adjacent_sums() - np.pi)     # dev[a]: interface T_a | T_{a+1}
    first = 0 if dev[0] + dev[2] <= dev[1] + dev[3] else 1
    out = {}
    for a in (first, first + 2):
        ta, tb = star.triangles[a], star.triangles[(a + 1) % 4]
        j = vertex_jump(mesh, pressure, v, ta, tb)
        if record is not None:
            record.append(JumpRecord(("vertex", v), (int(ta), int(tb)), j))
        ga, gb = pair_gauge(j, star.lengths[a], star.lengths[(a + 2) % 4])
        out[_key(mesh, ta, v)] = ga
        out[_key(mesh, tb, v)] = gb
    return out


# ---------------------------------------------------------------------------
# Boundary chains
# ---------------------------------------------------------------------------

def _boundary_triangle(mesh: Triangulation, a: int, b: int) -> int:
    try:
        e = mesh.edge_index(a, b)
    except KeyError:
        e = None
    if e is None or not mesh.boundary_edge[e]:
        raise PostprocessError(f"({a}, {b}) is not a boundary edge")
    return int(mesh.edge_triangles[e, 0])


def _third(mesh, t, a, b):
    return int(next(x for x in mesh.triangles[t] if x != a and x != b))


def chain_geometry(mesh: Triangulation, path) -> tuple:
    """Triangles K_k on edges (V_{k-1}, V_k) and edge lengths l_k, k = 1..len(path)-1."""
    tris, lengths, apex = [], [], []
    for a, b in zip(path[:-1], path[1:]):
        t = _boundary_triangle(mesh, a, b)
        tris.append(t)
        apex.append(_third(mesh, t, a, b))
        lengths.append(float(np.linalg.norm(mesh.vertices[b] - mesh.vertices[a])))
    return tris, np.array(lengths), apex


def chain_matrix(ratios: np.ndarray) -> np.ndarray:
    """Banded storage of the chain system; ratios[k] = l_{k+1} / l_k, k = 1..m."""
    m = len(ratios)
    ab = np.zeros((3, m))
    ab[0, 1:] = ratios[1:] / 10.0          # superdiagonal: r_{k+1} / 10
    ab[1, :] = 1.0 + ratios                # diagonal: 1 + r_k
    ab[2, :-1] = 0.1                       # subdiagonal: 1 / 10
    return ab


def chain_dense_matrix(ratios: np.ndarray) -> np.ndarray:
    m = len(ratios)
    a = np.diag(1.0 + ratios)
    for k in range(m - 1):
        a[k, k + 1] = ratios[k + 1] / 10.0
        a[k + 1, k] = 0.1
    return a


def solve_chain(jumps: np.ndarray, lengths: np.ndarray) -> tuple:
    """(alpha, beta) for a chain V_1..V_m given jumps j_k and lengths l_1..l_{m+1}.

    alpha_k is the sting at V_k in K_k, beta_k the sting at V_k in K_{k+1}.
    """
    jumps = np.asarray(jumps, dtype=float)
    r = lengths[1:] / lengths[:-1]
    beta = solve_banded((1, 1), chain_matrix(r), -jumps)
    return -r * beta, beta


def chain_correction(mesh: Triangulation, pressure: np.ndarray, path,
                     record: Optional[list] = None) -> dict:
    """Coefficients for a corner-free chain; ``path`` = (V_0, V_1, .., V_m, V_{m+1})."""
    path = [int(v) for v in path]
    m = len(path) - 2
    if m < 1:
        return {}
    tris, lengths, apex = chain_geometry(mesh, path)
    for k in range(1, m + 1):
        if vertex_star(mesh, path[k]).size != 2 or apex[k - 1] != apex[k]:
            raise PostprocessError(f"chain vertex {path[k]} does not have two triangles "
                                   "with a common apex")
    jumps = np.empty(m)
    for k in range(1, m + 1):
        jumps[k - 1] = vertex_jump(mesh, pressure, path[k], tris[k - 1], tris[k])
        if record is not None:
            record.append(JumpRecord(("vertex", path[k]), (tris[k - 1], tris[k]), jumps[k - 1]))
    alpha, beta = solve_chain(jumps, lengths)
    out = {}
    for k in range(1, m + 1):
        out[_key(mesh, tris[k - 1], path[k])] = alpha[k - 1]
        out[_key(mesh, tris[k], path[k])] = beta[k - 1]
    return out


# ---------------------------------------------------------------------------
# Corner chains
# ---------------------------------------------------------------------------

def _split_at_corner(chain: Chain, corner: int) -> tuple:
    """Vertices on each side of the corner, ordered outward, with their flanks."""
    verts = list(chain.vertices)
    i = verts.index(corner)
    after = verts[i + 1:] + [chain.after]
    before = verts[:i][::-1] + [chain.before]
    return after, before


def corner_fan(mesh: Triangulation, corner: int, start_triangle: int, start_value: float) -> dict:
    """Propagate a corner sting through the fan by the pairwise zero-sum relation."""
    star = vertex_star(mesh, corner)
    tris = list(star.triangles)
    i0 = tris.index(start_triangle)
    n = len(tris)
    # non-shared spoke lengths: T_i lies between spokes i and i+1
    val = float(start_value)
    out = {_key(mesh, tris[i0], corner): val}
    step = 1 if i0 == 0 else -1
    i = i0
    while 0 <= i + step < n:
        j = i + step
        if step == 1:
            l_i, l_j = star.lengths[i], star.lengths[j + 1]
        else:
            l_i, l_j = star.lengths[i + 1], star.lengths[j]
        val = float(-val * l_i / l_j)
        out[_key(mesh, tris[j], corner)] = val
        i = j
    return out


def corner_correction(mesh: Triangulation, pressure: np.ndarray, chain: Chain,
                      record: Optional[list] = None) -> tuple:
    """Coefficients for a chain containing one corner C.

    Returns (coefficients, gamma1_path) where ``gamma1_path`` is the vertex
    sequence (C, Y_1, .., Y_n, Y_{n+1}) on the other side of the corner,
    to be handled by :func:`chain_correction` once the corner stings have
    been removed.
    """
    if len(chain.corners) != 1 or chain.before < 0:
        raise PostprocessError(f"chain {chain.vertices} must contain exactly one corner")
    c = chain.corners[0]
    side_a, side_b = _split_at_corner(chain, c)
    gamma, gamma1 = (side_a, side_b) if len(side_a) >= len(side_b) else (side_b, side_a)
    path = [c] + gamma                          # V_0 = C, .., V_m, V_{m+1} = R
    m = len(path) - 2
    tris, lengths, apex = chain_geometry(mesh, path)
    r_vertex, w = path[-1], apex[-1]
    e = mesh.edge_index(r_vertex, w)
    nbr = [int(t) for t in mesh.edge_triangles[e] if t >= 0 and t != tris[-1]]
    if not nbr:
        raise PostprocessError(f"no triangle beyond edge ({r_vertex}, {w}) next to chain "
                               f"{chain.vertices}")
    t_far = nbr[0]
    jm = midpoint_jump(mesh, pressure, r_vertex, w, tris[-1], t_far)
    if record is not None:
        record.append(JumpRecord(("midpoint", r_vertex, w), (tris[-1], t_far), jm))

    alpha = np.zeros(m + 2)     # alpha[k]: sting at V_k in K_k (alpha[m+1] = 0)
    beta = np.zeros(m + 1)      # beta[k]: sting at V_k in K_{k+1}
    beta[m] = -10.0 * jm
    for k in range(m, 0, -1):
        alpha[k] = -beta[k] * lengths[k] / lengths[k - 1]
        j = vertex_jump(mesh, pressure, path[k], tris[k - 1], tris[k])
        if record is not None:
            record.append(JumpRecord(("vertex", path[k]), (tris[k - 1], tris[k]), j))
        beta[k - 1] = 10.0 * (alpha[k] - beta[k] + alpha[k + 1] / 10.0 - j)

    out = {}
    for k in range(1, m + 1):
        out[_key(mesh, tris[k - 1], path[k])] = alpha[k]
        out[_key(mesh, tris[k], path[k])] = beta[k]
    out.update(corner_fan(mesh, c, tris[0], beta[0]))
    return out, [c] + gamma1


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def active_vertices(mesh: Triangulation, report: SingularityReport, scope: str) -> np.ndarray:
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    active = report.quasi_singular.copy()
    if scope == "all_vertices":
        for v in range(mesh.n_vertices):
            if not mesh.boundary_vertex[v] and len(mesh.vertex_triangles[v]) == 4:
                active[v] = True
    return active


def apply_pressure(mesh: Triangulation, pressure: np.ndarray, report: SingularityReport,
                   scope: str = "quasi_singular") -> tuple:
    """Return (p_tilde, StingCorrection) for per-triangle P3 coefficients."""
    pressure = np.asarray(pressure, dtype=float).reshape(mesh.n_triangles, 10)
    active = active_vertices(mesh, report, scope)
    corr = StingCorrection()
    if not active.any():
        corr.warnings.append("no quasi-singular vertices")
        return pressure.copy(), corr

    def warn(msg):
        corr.warnings.append(msg)
        logger.warning(msg)

    # stage 1: interior vertices
    stage = {}
    for v in np.flatnonzero(active & ~mesh.boundary_vertex):
        try:
            stage.update(interior_correction(mesh, pressure, int(v), corr.jumps))
        except PostprocessError as exc:
            warn(f"interior stage skipped at vertex {v}: {exc}")
    for k, c in stage.items():
        corr.add(k, c, INTERIOR)
    current = _subtract(mesh, pressure, stage)

    chains = report.chains if scope == "quasi_singular" else _extract_chains(mesh, active)

    # stage 2: chains without corners
    stage = {}
    for ch in chains:
        if ch.has_corner:
            continue
        if ch.before < 0:
            warn(f"chain {ch.vertices} covers a whole boundary loop; skipped")
            continue
        try:
            stage.update(chain_correction(mesh, current, (ch.before,) + ch.vertices + (ch.after,),
                                          corr.jumps))
        except PostprocessError as exc:
            warn(f"boundary chain {ch.vertices} skipped: {exc}")
    for k, c in stage.items():
        corr.add(k, c, BOUNDARY_CHAIN)
    current = _subtract(mesh, current, stage)

    # stage 3: chains containing a corner
    for ch in chains:
        if not ch.has_corner:
            continue
        try:
            coefs, gamma1 = corner_correction(mesh, current, ch, corr.jumps)
            current = _subtract(mesh, current, coefs)
            side = {}
            if len(gamma1) > 2:
                side = chain_correction(mesh, current, gamma1, corr.jumps)
                current = _subtract(mesh, current, side)
        except PostprocessError as exc:
            warn(f"corner chain {ch.vertices} skipped: {exc}")
            continue
        for k, c in coefs.items():
            corr.add(k, c, CORNER_CHAIN)
        for k, c in side.items():
            corr.add(k, c, CORNER_CHAIN)

    if corr.is_empty():
        return pressure.copy(), corr
    s_h = sting_field(mesh, corr.coefficients)
    areas = mesh.areas()
    corr.mean = float(sum(c * areas[t] * STING_MEAN for (t, _), c in corr.coefficients.items())
                      / areas.sum())
    return pressure - (s_h - corr.mean), corr


def apply(solution, report: SingularityReport, scope: str = "quasi_singular") -> tuple:
    """Postprocess a DiscreteSolution; returns (p_tilde coefficients, StingCorrection)."""
    return apply_pressure(solution.mesh, solution.pressure, report, scope)


# ---------------------------------------------------------------------------
# Diagnostic decomposition
# ---------------------------------------------------------------------------

_REFERENCE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def decompose_pressure(field_: np.ndarray, mesh: Triangulation) -> dict:
    """Split each local P3 polynomial into the [1, g+-, ...] part and sting parts.

    The change of basis is invariant under affine maps preserving the local
    vertex order, so one reference matrix serves every triangle.
    """
    cob = p3_change_of_basis(_REFERENCE)
    coef = np.asarray(field_, dtype=float).reshape(mesh.n_triangles, 10) @ cob.T
    by_vertex = {}
    for t in range(mesh.n_triangles):
        for lv in range(3):
            by_vertex.setdefault(int(mesh.triangles[t, lv]), []).append((t, lv, coef[t, 7 + lv]))
    return {"interior": coef[:, :7], "sting": coef[:, 7:], "by_vertex": by_vertex}


def sting_part(field_: np.ndarray, mesh: Triangulation, vertices=None) -> np.ndarray:
    """P3 coefficients of the sting component of ``field_`` (optionally at given vertices)."""
    dec = decompose_pressure(field_, mesh)
    out = np.zeros((mesh.n_triangles, 10))
    keep = None if vertices is None else set(int(v) for v in vertices)
    for t in range(mesh.n_triangles):
        for lv in range(3):
            if keep is None or int(mesh.triangles[t, lv]) in keep:
                out[t] += dec["sting"][t, lv] * sting_lagrange_coefficients(lv)
    return out
