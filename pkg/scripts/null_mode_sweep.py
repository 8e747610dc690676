"""||B^T q|| / ||q|| of the alternating sting mode as the four-split ratio tends to 1.

Also prints the smallest singular value of B on mean-free pressures for N = 2.
"""
import numpy as np

from svstokes.mesh import classify, generate_foursplit
from svstokes.stokes import assemble, null_residual, smallest_pressure_singular_value, spurious_mode

RATIOS = (1.1, 1.01, 1.001, 1.0005, 1.0001, 1.0)


def main(N=4):
    print(f"{'ratio':>8} {'theta_min':>11} {'max |B^T q|/|q|':>16} {'sigma_min (N=2)':>16}")
    for r in RATIOS:
        mesh = generate_foursplit(N, r, 1.0)
        rep = classify(mesh)
        system = assemble(mesh)
        verts = [v for v in np.flatnonzero(rep.quasi_singular) if rep.location[v] == "interior"]
        res = max(null_residual(system, spurious_mode(mesh, rep, v)) for v in verts)
        sigma = smallest_pressure_singular_value(assemble(generate_foursplit(2, r, 1.0)))
        print(f"{r:>8g} {rep.theta_min:11.3e} {res:16.3e} {sigma:16.3e}")


if __name__ == "__main__":
    main()
