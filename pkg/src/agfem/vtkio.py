"""Legacy-ASCII VTK writers for meshes, sub-triangulations and fields."""
from __future__ import annotations

import numpy as np

from .cutgeom import CutDecomposition


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def write_mesh_vtk(path, mesh, cell_data=None) -> None:
    """Leaf cells as VTK quads; ``cell_data`` maps name -> {CellId: value}."""
    leaves = mesh.leaves_sorted
    points = []
    cells = []
    for cid in leaves:
        x0, y0, h = mesh.cell_box(cid)
        base = len(points)
        points += [(x0, y0), (x0 + h, y0), (x0 + h, y0 + h), (x0, y0 + h)]
        cells.append((base, base + 1, base + 2, base + 3))
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\nquadtree mesh\nASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(points)} double\n")
        for x, y in points:
            f.write(f"{_fmt(x)} {_fmt(y)} 0\n")
        f.write(f"CELLS {len(cells)} {5 * len(cells)}\n")
        for c in cells:
            f.write("4 " + " ".join(str(i) for i in c) + "\n")
        f.write(f"CELL_TYPES {len(cells)}\n")
        f.write("9\n" * len(cells))
        if cell_data:
            f.write(f"CELL_DATA {len(cells)}\n")
            for name, data in cell_data.items():
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for cid in leaves:
                    f.write(_fmt(float(data.get(cid, 0.0))) + "\n")


def write_subtriangulation_vtk(path, decomp: CutDecomposition, side: str,
                               point_field=None, field_name="u") -> None:
    """One subdomain's triangles (cut cells) plus split uncut quads.

    ``point_field(points) -> values`` is sampled at triangle vertices.
    """
    mesh = decomp.mesh
    tris = []
    for cid in mesh.leaves_sorted:
        if cid in decomp.cuts:
            cc = decomp.cuts[cid]
            block = cc.tri_plus if side == "+" else cc.tri_minus
            for t in block:
                tris.append(t)
        else:
            ep, em = decomp.etas[cid]
            eta = ep if side == "+" else em
            if eta > 0.5:
                x0, y0, h = mesh.cell_box(cid)
                tris.append(np.array([[x0, y0], [x0 + h, y0], [x0 + h, y0 + h]]))
                tris.append(np.array([[x0, y0], [x0 + h, y0 + h], [x0, y0 + h]]))
    pts = np.array(tris).reshape(-1, 2) if tris else np.zeros((0, 2))
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\ncut subdomain\nASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(pts)} double\n")
        for x, y in pts:
            f.write(f"{_fmt(x)} {_fmt(y)} 0\n")
        n = len(tris)
        f.write(f"CELLS {n} {4 * n}\n")
        for k in range(n):
            f.write(f"3 {3 * k} {3 * k + 1} {3 * k + 2}\n")
        f.write(f"CELL_TYPES {n}\n")
        f.write("5\n" * n)
        if point_field is not None and len(pts):
            vals = np.atleast_2d(np.asarray(point_field(pts)))
            if vals.shape[0] != len(pts):
                vals = vals.T
            f.write(f"POINT_DATA {len(pts)}\n")
            ncomp = vals.shape[1]
            if ncomp == 1:
                f.write(f"SCALARS {field_name} double 1\nLOOKUP_TABLE default\n")
                for v in vals[:, 0]:
                    f.write(_fmt(float(v)) + "\n")
            else:
                f.write(f"VECTORS {field_name} double\n")
                for v in vals:
                    f.write(f"{_fmt(float(v[0]))} {_fmt(float(v[1]))} 0\n")
