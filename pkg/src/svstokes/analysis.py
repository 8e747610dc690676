"""Manufactured solution, error norms and the convergence-study driver."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .elements import P3, P4, collapsed_rule
from .mesh import Triangulation, classify, generate_foursplit
from .stokes import (DiscreteSolution, _geometry, _p4_gradients, assemble,
                     build_dof_map, solve)

TWO_PI = 2.0 * math.pi
ERROR_RULE_DEGREE = 12


# ---------------------------------------------------------------------------
# Exact solution
# ---------------------------------------------------------------------------

def s0(t):
    return (t * t - t) * np.sin(TWO_PI * t)


def s1(t):
    sn, cs = np.sin(TWO_PI * t), np.cos(TWO_PI * t)
    return (2 * t - 1) * sn + TWO_PI * (t * t - t) * cs


def s2(t):
    sn, cs = np.sin(TWO_PI * t), np.cos(TWO_PI * t)
    k = TWO_PI
    return 2 * sn + 2 * k * (2 * t - 1) * cs - k * k * (t * t - t) * sn


def s3(t):
    sn, cs = np.sin(TWO_PI * t), np.cos(TWO_PI * t)
    k = TWO_PI
    return 6 * k * cs - 3 * k * k * (2 * t - 1) * sn - k ** 3 * (t * t - t) * cs


@dataclass(frozen=True)
class ManufacturedSolution:
    """u = (s(x)s'(y), -s'(x)s(y)), p = sin(4 pi x) exp(pi y) on the unit square."""

    pressure_mean: float = 0.0   # full sine periods in x

    def u(self, x, y):
        return s0(x) * s1(y), -s1(x) * s0(y)

    def grad_u(self, x, y):
        """((du1/dx, du1/dy), (du2/dx, du2/dy))."""
        return ((s1(x) * s1(y), s0(x) * s2(y)),
                (-s2(x) * s0(y), -s1(x) * s1(y)))

    def lap_u(self, x, y):
        return (s2(x) * s1(y) + s0(x) * s3(y),
                -s3(x) * s0(y) - s1(x) * s2(y))

    def div_u(self, x, y):
        g = self.grad_u(x, y)
        return g[0][0] + g[1][1]

    def p(self, x, y):
        return np.sin(2 * TWO_PI * x) * np.exp(math.pi * y) - self.pressure_mean

    def grad_p(self, x, y):
        e = np.exp(math.pi * y)
        return (2 * TWO_PI * np.cos(2 * TWO_PI * x) * e, math.pi * np.sin(2 * TWO_PI * x) * e)

    def f(self, x, y):
        lx, ly = self.lap_u(x, y)
        px, py = self.grad_p(x, y)
        return -lx - px, -ly - py


def exact_fields() -> ManufacturedSolution:
    return ManufacturedSolution()


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

def _rule_points(mesh: Triangulation, degree: int):
    rule = collapsed_rule(degree)
    p, area, inv_t = _geometry(mesh)
    x = np.einsum("qk,tkd->tqd", rule.bary, p)
    return rule, x, area, inv_t


def error_h1_velocity(mesh: Triangulation, velocity_cells: np.ndarray,
                      exact: ManufacturedSolution, degree: int = ERROR_RULE_DEGREE) -> float:
    """|u - u_h|_1 from local coefficients (nt, 15, 2)."""
    rule, x, area, inv_t = _rule_points(mesh, degree)
    g = _p4_gradients(inv_t, rule)                       # (nt, nq, 15, 2)
    gh = np.einsum("tqia,tic->tqca", g, velocity_cells)  # (nt, nq, comp, dir)
    ge = exact.grad_u(x[..., 0], x[..., 1])
    err = 0.0
    for c in range(2):
        for a in range(2):
            err = err + (ge[c][a] - gh[..., c, a]) ** 2
    return float(math.sqrt(np.sum(area * (err @ rule.weights))))


def error_l2_pressure(mesh: Triangulation, pressure: np.ndarray,
                      exact: ManufacturedSolution, degree: int = ERROR_RULE_DEGREE) -> float:
    """||p - p_h||_0 from per-triangle P3 coefficients (nt, 10)."""
    rule, x, area, _ = _rule_points(mesh, degree)
    ph = pressure @ P3.eval(rule.bary).T
    err = (exact.p(x[..., 0], x[..., 1]) - ph) ** 2
    return float(math.sqrt(np.sum(area * (err @ rule.weights))))


def l2_norm_pressure(mesh: Triangulation, pressure: np.ndarray) -> float:
    rule = collapsed_rule(6)
    ph = pressure @ P3.eval(rule.bary).T
    return float(math.sqrt(np.sum(mesh.areas() * (ph ** 2 @ rule.weights))))


def l2_projection_pressure(mesh: Triangulation, p, degree: int = ERROR_RULE_DEGREE) -> np.ndarray:
    """Elementwise L2 projection onto discontinuous P3, shifted to zero mean."""
    rule, x, area, _ = _rule_points(mesh, degree)
    psi = P3.eval(rule.bary)                               # (nq, 10)
    mass = (psi.T * rule.weights) @ psi                    # reference mass / |K|
    rhs = np.einsum("q,qk,tq->tk", rule.weights, psi, p(x[..., 0], x[..., 1]))
    coef = np.linalg.solve(mass, rhs.T).T
    ints = area[:, None] * (rule.weights @ psi)[None, :]
    return coef - np.sum(ints * coef) / area.sum()


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------

def observed_orders(errors: Sequence[float]) -> list:
    out = [None]
    for e0, e1 in zip(errors[:-1], errors[1:]):
        out.append(math.log2(e0 / e1) if e0 > 0 and e1 > 0 else None)
    return out


@dataclass
class StudyRow:
    N: int
    h: float
    err_u_h1: float = float("nan")
    err_p: float = float("nan")
    err_ptilde: float = float("nan")
    n_quasi: int = 0
    n_exact: int = 0
    theta_min: float = float("nan")
    rank_deficient: bool = False
    seconds: float = 0.0
    failure: Optional[str] = None


@dataclass
class ConvergenceTable:
    label: str
    rows: list = field(default_factory=list)

    COLUMNS = ("N", "h", "err_u_h1", "order_u", "err_p", "order_p", "err_ptilde", "order_ptilde")

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]

    def orders(self, name: str) -> list:
        return observed_orders(self.column(name))

    def records(self) -> list:
        ou, op, ot = self.orders("err_u_h1"), self.orders("err_p"), self.orders("err_ptilde")
        return [{"N": r.N, "h": r.h, "err_u_h1": r.err_u_h1, "order_u": ou[i],
                 "err_p": r.err_p, "order_p": op[i],
                 "err_ptilde": r.err_ptilde, "order_ptilde": ot[i]}
                for i, r in enumerate(self.rows)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        w.writeheader()
        for rec in self.records():
            w.writerow({k: ("" if v is None else v) for k, v in rec.items()})
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_text(self) -> str:
        def fe(v):
            return "      -   " if v is None or not np.isfinite(v) else f"{v:.4E}"

        def fo(v):
            return "      " if v is None else f"{v:6.3f}"

        lines = [self.label,
                 f"{'mesh':>12} {'|u-uh|_1':>11} {'ord':>6} {'|p-ph|_0':>11} {'ord':>6}"
                 f" {'|p-pt|_0':>11} {'ord':>6}"]
        for rec in self.records():
            lines.append(f"{str(rec['N']) + 'x' + str(rec['N']) + 'x4':>12} {fe(rec['err_u_h1']):>11}"
                         f" {fo(rec['order_u'])} {fe(rec['err_p']):>11} {fo(rec['order_p'])}"
                         f" {fe(rec['err_ptilde']):>11} {fo(rec['order_ptilde'])}")
        return "\n".join(lines)


def run_case(mesh: Triangulation, scope: str = "quasi_singular",
             exact: Optional[ManufacturedSolution] = None):
    """Classify, assemble, solve and postprocess one mesh; returns (row data, solution, p_tilde)."""
    from .postprocess import apply as postprocess_apply

    exact = exact or exact_fields()
    report = classify(mesh)
    dofs = build_dof_map(mesh)
    system = assemble(mesh, dofs, exact.f)
    solution = solve(system)
    ptilde, correction = postprocess_apply(solution, report, scope=scope)
    errors = {
        "err_u_h1": error_h1_velocity(mesh, solution.velocity_cells(), exact),
        "err_p": error_l2_pressure(mesh, solution.pressure, exact),
        "err_ptilde": error_l2_pressure(mesh, ptilde, exact),
    }
    return report, solution, ptilde, correction, errors


def run_study(family: str = "foursplit", ratio=(1.0005, 1.0), N_list=(4, 8, 16, 32),
              scope: str = "quasi_singular", label: Optional[str] = None,
              verbose: bool = False) -> ConvergenceTable:
    if family != "foursplit":
        raise ValueError(f"unknown mesh family {family!r}")
    if list(N_list) != sorted(N_list):
        raise ValueError("N_list must be ascending")
    a, b = ratio
    table = ConvergenceTable(label or f"foursplit ratio {a:g}:{b:g}, scope {scope}")
    for N in N_list:
        row = StudyRow(N=N, h=1.0 / N)
        t0 = time.perf_counter()
        try:
            mesh = generate_foursplit(N, a, b)
            report, solution, _, _, errors = run_case(mesh, scope)
            row.err_u_h1, row.err_p, row.err_ptilde = (errors["err_u_h1"], errors["err_p"],
                                                        errors["err_ptilde"])
            counts = report.counts()
            row.n_quasi = counts["quasi_singular"] + counts["exactly_singular"]
            row.n_exact = counts["exactly_singular"]
            row.theta_min = report.theta_min
            row.rank_deficient = solution.rank_deficient
        except Exception as exc:  # recorded, not fatal
            row.failure = f"{type(exc).__name__}: {exc}"
        row.seconds = time.perf_counter() - t0
        table.rows.append(row)
        if verbose:
            print(f"  N={N}: {row.seconds:.1f}s {row.failure or ''}", flush=True)
    return table
