import math

import numpy as np
import pytest
import sympy as sp

from svstokes.analysis import (ConvergenceTable, StudyRow, error_h1_velocity, error_l2_pressure,
                               exact_fields, l2_projection_pressure, observed_orders, s0, s1, s2,
                               s3)
from svstokes.elements import collapsed_rule
from svstokes.mesh import generate_foursplit
from svstokes.stokes import build_dof_map, interpolate_velocity, pressure_mean

X, Y, T = sp.symbols("x y t")
S = (T ** 2 - T) * sp.sin(2 * sp.pi * T)


def _sym_solution():
    sx, sy = S.subs(T, X), S.subs(T, Y)
    u = (sx * sp.diff(sy, Y), -sp.diff(sx, X) * sy)
    p = sp.sin(4 * sp.pi * X) * sp.exp(sp.pi * Y)
    f = tuple(-(sp.diff(c, X, 2) + sp.diff(c, Y, 2)) for c in u)
    return u, p, (f[0] - sp.diff(p, X), f[1] - sp.diff(p, Y))


def test_profile_derivatives_match_symbolic():
    t = np.linspace(0, 1, 9)
    for k, fn in enumerate((s0, s1, s2, s3)):
        ref = sp.lambdify(T, sp.diff(S, T, k), "numpy")(t)
        assert np.allclose(fn(t), ref, atol=1e-11)


def test_source_matches_symbolic():
    u, p, f = _sym_solution()
    ex = exact_fields()
    pts = np.random.default_rng(5).uniform(0, 1, size=(20, 2))
    fx, fy = ex.f(pts[:, 0], pts[:, 1])
    assert np.allclose(fx, sp.lambdify((X, Y), f[0], "numpy")(pts[:, 0], pts[:, 1]), atol=1e-9)
    assert np.allclose(fy, sp.lambdify((X, Y), f[1], "numpy")(pts[:, 0], pts[:, 1]), atol=1e-9)
    assert sp.simplify(sp.diff(u[0], X) + sp.diff(u[1], Y)) == 0


def test_exact_velocity_divergence_free_and_zero_on_boundary():
    ex = exact_fields()
    g = np.linspace(0, 1, 11)
    gx, gy = np.meshgrid(g, g)
    assert np.abs(ex.div_u(gx, gy)).max() < 1e-12
    for xs, ys in ((g, 0 * g), (g, 0 * g + 1), (0 * g, g), (0 * g + 1, g)):
        ux, uy = ex.u(xs, ys)
        assert np.abs(ux).max() < 1e-12 and np.abs(uy).max() < 1e-12


def test_exact_gradients_match_finite_differences():
    ex = exact_fields()
    x, y, h = 0.31, 0.67, 1e-6
    g = ex.grad_u(x, y)
    for c in range(2):
        dx = (ex.u(x + h, y)[c] - ex.u(x - h, y)[c]) / (2 * h)
        dy = (ex.u(x, y + h)[c] - ex.u(x, y - h)[c]) / (2 * h)
        assert g[c][0] == pytest.approx(dx, abs=1e-7)
        assert g[c][1] == pytest.approx(dy, abs=1e-7)
    px, py = ex.grad_p(x, y)
    assert px == pytest.approx((ex.p(x + h, y) - ex.p(x - h, y)) / (2 * h), rel=1e-7)
    assert py == pytest.approx((ex.p(x, y + h) - ex.p(x, y - h)) / (2 * h), rel=1e-7)


def test_exact_pressure_has_zero_mean():
    ex = exact_fields()
    m = generate_foursplit(4)
    rule = collapsed_rule(14)
    x = np.einsum("qk,tkd->tqd", rule.bary, m.vertices[m.triangles])
    assert abs(np.sum(m.areas() * (ex.p(x[..., 0], x[..., 1]) @ rule.weights))) < 1e-10


def test_velocity_interpolation_converges_at_fourth_order():
    ex = exact_fields()
    errs = []
    for N in (4, 8):
        m = generate_foursplit(N, 1.0005, 1)
        d = build_dof_map(m)
        u = interpolate_velocity(d, ex.u)
        cells = np.stack([u[d.cell_dofs], u[d.cell_dofs + d.n_scalar]], axis=-1)
        errs.append(error_h1_velocity(m, cells, ex))
    assert math.log2(errs[0] / errs[1]) == pytest.approx(4.0, abs=0.3)


def test_pressure_projection_converges_at_fourth_order():
    ex = exact_fields()
    errs = []
    for N in (8, 16):
        m = generate_foursplit(N)
        q = l2_projection_pressure(m, ex.p)
        assert abs(pressure_mean(m, q)) < 1e-12
        errs.append(error_l2_pressure(m, q, ex))
    assert math.log2(errs[0] / errs[1]) == pytest.approx(4.0, abs=0.3)


def test_observed_orders():
    assert observed_orders([1.0, 1 / 16, 1 / 256]) == [None, 4.0, 4.0]
    assert observed_orders([1.0, 0.0]) == [None, None]


def test_table_csv_columns(tmp_path):
    t = ConvergenceTable("demo", [StudyRow(4, 0.25, 1e-2, 1.0, 1e-1), StudyRow(8, 0.125, 1e-2 / 16,
                                                                                 0.5, 1e-1 / 8)])
    text = t.to_csv(tmp_path / "t.csv")
    header, first, second = text.strip().splitlines()
    assert header == "N,h,err_u_h1,order_u,err_p,order_p,err_ptilde,order_ptilde"
    assert first.split(",")[3] == ""
    assert float(second.split(",")[3]) == pytest.approx(4.0)
    assert float(second.split(",")[7]) == pytest.approx(3.0)
    assert "8x8x4" in t.to_text()
