"""Acceptance checks. Each test prints one PASS/FAIL line and asserts the same condition."""
import math
import time
from itertools import product
from math import factorial

import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss

from svstokes.analysis import exact_fields, observed_orders, run_study, l2_norm_pressure
from svstokes.elements import (LYNESS16, P3, StingFunction, lyness_integrate, sting_div_pairing,
                               sting_div_quadrature, sting_moment, sting_moment_quadrature,
                               triangle_area)
from svstokes.mesh import classify, generate_boundary_singular_strip, generate_foursplit
from svstokes.postprocess import apply_pressure, sting_field
from svstokes.stokes import (assemble, build_dof_map, interpolate_pressure, null_residual, solve,
                             spurious_mode)

from conftest import random_triangle

# Reference rows for the four-split studies, N = 4, 8, 16, 32.
TABLE1 = {
    "err_u_h1": [8.5504e-3, 5.4471e-4, 3.3925e-5, 2.1182e-6],
    "order_u": [3.9724, 4.0051, 4.0014],
    "err_p": [2.2102e1, 8.3012e-1, 2.6856e-2, 9.8863e-4],
    "order_p": [4.7347, 4.9500, 4.7637],
    "err_ptilde": [5.7023e-2, 2.6680e-3, 1.6624e-4, 1.0380e-5],
    "order_ptilde": [4.4177, 4.0044, 4.0014],
}
TABLE2 = {
    "err_u_h1": [1.3539e-2, 8.7627e-4, 5.4353e-5, 3.3688e-6],
    "err_p": [9.8341e-2, 5.6435e-3, 3.4576e-4, 2.1285e-5],
    "err_ptilde": [6.9479e-2, 3.4819e-3, 2.1298e-4, 1.3114e-5],
}
N_LIST = (4, 8, 16, 32)


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return emit


def _rel(a, b):
    return abs(a - b) / abs(b)


def _exact_monomial(tri, m, n):
    """Integral of x^m y^n over a triangle by multinomial expansion in barycentrics."""
    (x1, y1), (x2, y2), (x3, y3) = tri
    total = 0.0
    for a in product(range(m + 1), repeat=3):
        if sum(a) != m:
            continue
        ca = factorial(m) / (factorial(a[0]) * factorial(a[1]) * factorial(a[2]))
        ca *= x1 ** a[0] * x2 ** a[1] * x3 ** a[2]
        for b in product(range(n + 1), repeat=3):
            if sum(b) != n:
                continue
            cb = factorial(n) / (factorial(b[0]) * factorial(b[1]) * factorial(b[2]))
            cb *= y1 ** b[0] * y2 ** b[1] * y3 ** b[2]
            e = [a[i] + b[i] for i in range(3)]
            total += ca * cb * 2 * factorial(e[0]) * factorial(e[1]) * factorial(e[2]) \
                / factorial(m + n + 2)
    return total * triangle_area(tri)


def test_criterion_1_quadrature_exactness(verdict):
    rng = np.random.default_rng(1)
    tris = [random_triangle(rng) for _ in range(100)]
    exact = [{(m, n): _exact_monomial(t, m, n) for m in range(7) for n in range(7 - m)}
             for t in tris]
    t0 = time.perf_counter()
    worst = 0.0
    for t, ex in zip(tris, exact):
        scale_x, scale_y = np.abs(t[:, 0]).max(), np.abs(t[:, 1]).max()
        for (m, n), ref in ex.items():
            got = lyness_integrate(t, lambda x, y: x ** m * y ** n)
            # relative to the size of the integrand, so cancelling integrals stay meaningful
            scale = max(abs(ref), triangle_area(t) * scale_x ** m * scale_y ** n)
            worst = max(worst, abs(got - ref) / scale)
    x, w = leggauss(8)
    s, w = 0.5 * (x + 1), 0.5 * w
    q = 56 * s ** 3 - 105 * s ** 2 + 60 * s - 10
    ident = max(abs(np.dot(w, q * s) + 1 / 20), *(abs(np.dot(w, q * s ** k)) for k in (2, 3, 4)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and ident <= 1e-14 and elapsed < 1.0
    verdict(1, ok, f"max monomial rel err {worst:.1e} (<=1e-12), 1D identities {ident:.1e} "
                   f"(<=1e-14), {elapsed:.2f}s (<1s)")


def test_criterion_2_sting_identities(verdict):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst_m = worst_d = 0.0
    for _ in range(100):
        t = random_triangle(rng)
        v = int(rng.integers(3))
        s = StingFunction(t, v)
        q = rng.normal(size=10)
        ref = sting_moment_quadrature(s, q)
        scale = triangle_area(t) / 100 * np.abs(q).max()
        worst_m = max(worst_m, abs(sting_moment(s, q) - ref) / max(abs(ref), scale))
        vel = rng.normal(size=(15, 2))
        ref = sting_div_quadrature(s, vel)
        scale = np.abs(vel).max() * math.sqrt(triangle_area(t))
        worst_d = max(worst_d, abs(sting_div_pairing(s, vel) - ref) / max(abs(ref), scale))
    elapsed = time.perf_counter() - t0
    ok = worst_m <= 1e-12 and worst_d <= 1e-12 and elapsed < 5.0
    verdict(2, ok, f"moment rel err {worst_m:.1e}, pairing rel err {worst_d:.1e} (<=1e-12), "
                   f"{elapsed:.2f}s (<5s)")


def _interior_modes(mesh):
    rep = classify(mesh)
    verts = [v for v in np.flatnonzero(rep.quasi_singular) if rep.location[v] == "interior"]
    return rep, verts


def test_criterion_3_null_modes(verdict):
    t0 = time.perf_counter()
    m = generate_foursplit(4)
    rep, verts = _interior_modes(m)
    system = assemble(m)
    exact = max(null_residual(system, spurious_mode(m, rep, v)) for v in verts)
    sweep = []
    for r in (1.1, 1.01, 1.001, 1.0005):
        mq = generate_foursplit(4, r, 1)
        rq, vq = _interior_modes(mq)
        sq = assemble(mq)
        sweep.append(max(null_residual(sq, spurious_mode(mq, rq, v)) for v in vq))
    elapsed = time.perf_counter() - t0
    monotone = all(b < a for a, b in zip(sweep, sweep[1:]))
    ok = len(verts) == 16 and exact <= 1e-10 and sweep[-1] > 0 and monotone and elapsed < 30
    verdict(3, ok, f"1:1 max |B^T q|/|q| = {exact:.1e} (<=1e-10); ratio sweep "
                   + ", ".join(f"{x:.2e}" for x in sweep) + f" (monotone {monotone}), {elapsed:.1f}s")


@pytest.fixture(scope="module")
def table1():
    t0 = time.perf_counter()
    table = run_study("foursplit", (1.0005, 1.0), N_LIST)
    return table, time.perf_counter() - t0


@pytest.fixture(scope="module")
def table2():
    return run_study("foursplit", (3.0, 5.0), N_LIST, scope="all_vertices")


def _row_check(table, ref, column, tol=0.25):
    got = table.column(column)
    rels = [_rel(g, r) for g, r in zip(got, ref[column])]
    return max(rels), rels


def test_criterion_4_table1(verdict, table1):
    table, elapsed = table1
    assert not any(r.failure for r in table.rows), [r.failure for r in table.rows]
    ru, _ = _row_check(table, TABLE1, "err_u_h1")
    rt, _ = _row_check(table, TABLE1, "err_ptilde")
    ou = observed_orders(table.column("err_u_h1"))[1:]
    ot = observed_orders(table.column("err_ptilde"))[1:]
    op = observed_orders(table.column("err_p"))[1:]
    du = max(abs(a - b) for a, b in zip(ou, TABLE1["order_u"]))
    dt = max(abs(a - b) for a, b in zip(ot, TABLE1["order_ptilde"]))
    ratio = table.rows[1].err_p / table.rows[1].err_ptilde
    ok = ru <= 0.25 and rt <= 0.25 and du <= 0.15 and dt <= 0.15 and ratio >= 100 and elapsed < 600
    verdict(4, ok, f"|u-u_h|_1 max rel dev {ru:.2%}, |p-p~| max rel dev {rt:.2%} (<=25%); "
                   f"order dev u {du:.3f}, p~ {dt:.3f} (<=0.15); |p-p_h|/|p-p~| at N=8 = "
                   f"{ratio:.0f} (>=100); study {elapsed:.0f}s (<600s); "
                   f"[info] |p-p_h| orders " + ", ".join(f"{o:.3f}" for o in op))


def test_criterion_5_table2(verdict, table2):
    assert not any(r.failure for r in table2.rows), [r.failure for r in table2.rows]
    ru, _ = _row_check(table2, TABLE2, "err_u_h1")
    rp, _ = _row_check(table2, TABLE2, "err_p")
    rt, _ = _row_check(table2, TABLE2, "err_ptilde")
    orders = observed_orders(table2.column("err_u_h1"))[1:] + observed_orders(
        table2.column("err_p"))[1:]
    do = max(abs(o - 4.0) for o in orders)
    ok = ru <= 0.25 and rp <= 0.25 and do <= 0.15
    verdict(5, ok, f"|u-u_h|_1 max rel dev {ru:.2%}, |p-p_h| max rel dev {rp:.2%} (<=25%); "
                   f"max |order - 4| {do:.3f} (<=0.15); [info, not gated] |p-p~| max rel dev "
                   f"{rt:.2%} under all_vertices")


def test_criterion_6_postprocess_invariance(verdict):
    mesh = generate_foursplit(4)
    rep, verts = _interior_modes(mesh)
    system = assemble(mesh, build_dof_map(mesh), exact_fields().f)
    a = solve(system)
    b = solve(system, pressure_shift=1e-7)
    weights = np.random.default_rng(6).uniform(-1, 1, size=len(verts))
    inject = sum(w * spurious_mode(mesh, rep, v) for w, v in zip(weights, verts))
    inject *= 1e3 / l2_norm_pressure(mesh, inject) * l2_norm_pressure(mesh, b.pressure)
    pa, _ = apply_pressure(mesh, a.pressure, rep)
    pb, _ = apply_pressure(mesh, b.pressure + inject, rep)
    dp = l2_norm_pressure(mesh, pa - pb) / l2_norm_pressure(mesh, pa)
    du = np.linalg.norm(a.velocity - b.velocity) / np.linalg.norm(a.velocity)
    ok = a.rank_deficient and dp <= 1e-8 and du <= 1e-8
    verdict(6, ok, f"rank deficient {a.rank_deficient}; p~ rel diff {dp:.1e}, velocity rel diff "
                   f"{du:.1e} (<=1e-8) with 1e3-scaled injected spurious modes")


def test_criterion_7_plant_and_recover(verdict):
    t0 = time.perf_counter()
    mesh = generate_boundary_singular_strip(4)
    rep = classify(mesh)
    rng = np.random.default_rng(7)
    # any computed correction satisfies the gauge relations, so it is a valid plant
    _, planted = apply_pressure(mesh, rng.normal(size=(mesh.n_triangles, 10)), rep)
    p0 = interpolate_pressure(mesh, lambda x, y: np.cos(3 * x) * np.exp(y) + x * y ** 2)
    _, corr = apply_pressure(mesh, p0 + sting_field(mesh, planted.coefficients), rep)
    keys = set(planted.coefficients) | set(corr.coefficients)
    err = max(abs(corr.coefficients.get(k, 0.0) - planted.coefficients.get(k, 0.0)) for k in keys)
    stages = sorted(set(planted.provenance.values()))
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-9 and len(stages) == 3 and elapsed < 10
    verdict(7, ok, f"{len(planted.coefficients)} planted coefficients over stages {stages}, "
                   f"max recovery error {err:.1e} (<=1e-9), {elapsed:.2f}s (<10s)")


@pytest.mark.parametrize("ratio", [(1.0, 3.0), (1.0, 2.0)], ids=["1:3", "1:2"])
def test_criterion_8_noop_on_regular_mesh(verdict, ratio):
    mesh = generate_foursplit(4, *ratio)
    rep = classify(mesh)
    sol = solve(assemble(mesh, build_dof_map(mesh), exact_fields().f))
    ptilde, corr = apply_pressure(mesh, sol.pressure, rep, scope="quasi_singular")
    ok = (rep.counts()["quasi_singular"] == 0 and np.array_equal(ptilde, sol.pressure)
          and corr.is_empty())
    verdict(8, ok, f"ratio {ratio[0]:g}:{ratio[1]:g}: quasi-singular vertices "
                   f"{rep.counts()['quasi_singular']}, p~ identical {np.array_equal(ptilde, sol.pressure)}, "
                   f"coefficient map empty {corr.is_empty()}")
