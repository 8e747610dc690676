import numpy as np
import pytest

from svstokes.analysis import exact_fields
from svstokes.mesh import classify, generate_foursplit
from svstokes.stokes import assemble, build_dof_map, solve


def random_triangle(rng, min_area=1e-2):
    """Counterclockwise triangle with vertices in [-2, 2]^2 and area above a floor."""
    while True:
        t = rng.uniform(-2.0, 2.0, size=(3, 2))
        area = 0.5 * ((t[1, 0] - t[0, 0]) * (t[2, 1] - t[0, 1])
                      - (t[2, 0] - t[0, 0]) * (t[1, 1] - t[0, 1]))
        if abs(area) > min_area:
            return t if area > 0 else t[[0, 2, 1]]


class SolvedCase:
    def __init__(self, N, a, b, source=True):
        self.mesh = generate_foursplit(N, a, b)
        self.report = classify(self.mesh)
        self.dofs = build_dof_map(self.mesh)
        self.exact = exact_fields()
        self.system = assemble(self.mesh, self.dofs, self.exact.f if source else None)
        self.solution = solve(self.system)


_cache = {}


@pytest.fixture(scope="session")
def solved():
    def get(N, a, b):
        key = (N, a, b)
        if key not in _cache:
            _cache[key] = SolvedCase(N, a, b)
        return _cache[key]
    return get


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
