"""Legacy ASCII VTK output for meshes and discontinuous P3 fields."""
from __future__ import annotations

import numpy as np

from .elements import P3, lattice
from .mesh import SingularityReport, Triangulation

VTK_TRIANGLE = 5


def _sub_triangles(k: int) -> np.ndarray:
    """Split the degree-k principal lattice into k^2 triangles (local node ids)."""
    nodes = [tuple(n) for n in lattice(k)]
    index = {n: i for i, n in enumerate(nodes)}
    tris = []
    for i in range(k):          # exponent of lambda_1
        for j in range(k - i):  # exponent of lambda_2
            a = (k - i - j, i, j)
            b = (k - i - j - 1, i + 1, j)
            c = (k - i - j - 1, i, j + 1)
            tris.append((index[a], index[b], index[c]))
            if i + j < k - 1:
                d = (k - i - j - 2, i + 1, j + 1)
                tris.append((index[b], index[d], index[c]))
    return np.array(tris, dtype=int)


def _write(path, points, cells, point_data=None, cell_data=None, title="svstokes"):
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(points)} double\n")
        for x, y in points:
            fh.write(f"{x:.17g} {y:.17g} 0\n")
        fh.write(f"CELLS {len(cells)} {4 * len(cells)}\n")
        for c in cells:
            fh.write(f"3 {c[0]} {c[1]} {c[2]}\n")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        fh.write("\n".join([str(VTK_TRIANGLE)] * len(cells)) + "\n")
        if cell_data:
            fh.write(f"CELL_DATA {len(cells)}\n")
            for name, vals in cell_data.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.write("\n".join(f"{v:.17g}" for v in vals) + "\n")
        if point_data:
            fh.write(f"POINT_DATA {len(points)}\n")
            for name, vals in point_data.items():
                vals = np.asarray(vals, dtype=float)
                if vals.ndim == 2:
                    fh.write(f"VECTORS {name} double\n")
                    for vx, vy in vals:
                        fh.write(f"{vx:.17g} {vy:.17g} 0\n")
                else:
                    fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    fh.write("\n".join(f"{v:.17g}" for v in vals) + "\n")


def write_mesh(path, mesh: Triangulation, report: SingularityReport = None) -> None:
    """Mesh with the vertex class (0 regular, 1 quasi-singular, 2 exactly singular)."""
    point_data = {}
    if report is not None:
        point_data["vertex_class"] = report.vertex_class.astype(float)
    _write(path, mesh.vertices, mesh.triangles, point_data=point_data,
           cell_data={"area": mesh.areas()})


def write_pressure(path, mesh: Triangulation, fields: dict) -> None:
    """Discontinuous P3 fields {name: (nt, 10)} on the cubic sub-lattice.

    Points are duplicated per triangle so jumps across edges stay visible.
    """
    sub = _sub_triangles(3)
    bary = P3.node_barycentric
    pts = np.einsum("nk,tkd->tnd", bary, mesh.vertices[mesh.triangles]).reshape(-1, 2)
    cells = (sub[None, :, :] + 10 * np.arange(mesh.n_triangles)[:, None, None]).reshape(-1, 3)
    data = {name: np.asarray(v, dtype=float).reshape(-1) for name, v in fields.items()}
    _write(path, pts, cells, point_data=data)
