"""Triangle meshes: container, normalization, OBJ I/O."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class EmptyGeometryError(ValueError):
    pass


class MeshFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def __repr__(self):
        return f"TriangleMesh(vertices={len(self.vertices)}, triangles={len(self.triangles)})"

    @property
    def corners(self):
        """The three corner arrays (T, 3) of every triangle."""
        return (self.vertices[self.triangles[:, 0]],
                self.vertices[self.triangles[:, 1]],
                self.vertices[self.triangles[:, 2]])

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, rotation):
        return TriangleMesh(self.vertices @ np.asarray(rotation).T, self.triangles)

    def triangle_areas(self):
        a, b, c = self.corners
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def normalize_mesh(mesh):
    """Center the bounding box at the origin and scale its longest edge to 1.

    Zero-area triangles are dropped.
    """
    if len(mesh.vertices) == 0 or len(mesh.triangles) == 0:
        raise EmptyGeometryError("cannot normalize an empty mesh")
    used = np.unique(mesh.triangles)
    lo = mesh.vertices[used].min(axis=0)
    hi = mesh.vertices[used].max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise EmptyGeometryError("mesh has zero extent")
    verts = (mesh.vertices - (lo + hi) / 2.0) / extent
    # exact +/-0.5 on the longest axis, regardless of rounding in the affine map
    axis = int(np.argmax(hi - lo))
    verts[mesh.vertices[:, axis] == lo[axis], axis] = -0.5
    verts[mesh.vertices[:, axis] == hi[axis], axis] = 0.5
    out = TriangleMesh(verts, mesh.triangles)
    keep = out.triangle_areas() > 0.0
    if not keep.any():
        raise EmptyGeometryError("mesh has only degenerate triangles")
    return TriangleMesh(verts, mesh.triangles[keep])


def read_obj(path):
    """Read the v/f subset of ASCII OBJ; polygons are fan-triangulated."""
    verts, tris = [], []
    path = Path(path)
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(verts[-1]) != 3:
                        raise ValueError("vertex needs 3 coordinates")
                elif parts[0] == "f":
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    if len(idx) < 3:
                        raise ValueError("face needs at least 3 vertices")
                    for k in range(1, len(idx) - 1):
                        tris.append([idx[0], idx[k], idx[k + 1]])
            except ValueError as exc:
                raise MeshFormatError(f"{path}:{lineno}: {exc}") from None
    try:
        return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                            np.array(tris, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise MeshFormatError(f"{path}: {exc}") from None


def write_obj(mesh, path):
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def voxel_cubes(occupancy):
    """Closed cube-surface mesh of an occupancy array, one unit cube per occupied
    voxel with faces shared by two occupied voxels removed.

    Vertices are lattice corners mapped into the [-0.5, 0.5]^3 cube (a cubic grid
    therefore overlays its source mesh); faces wind counter-clockwise seen from
    outside.
    """
    occ = np.asarray(occupancy).astype(bool)
    n = max(occ.shape) if occ.size else 1
    padded = np.pad(occ, 1)
    quads = []
    for axis in range(3):
        b, c = (axis + 1) % 3, (axis + 2) % 3
        ring = np.zeros((4, 3), dtype=np.int64)
        ring[[1, 2], b] = 1
        ring[[2, 3], c] = 1
        for sign in (1, -1):
            neighbour = np.roll(padded, -sign, axis=axis)[1:-1, 1:-1, 1:-1]
            cells = np.argwhere(occ & ~neighbour)
            corners = ring if sign > 0 else ring[::-1]
            offset = np.zeros(3, dtype=np.int64)
            offset[axis] = 1 if sign > 0 else 0
            quads.append(cells[:, None, :] + offset + corners[None])
    quads = np.concatenate(quads)
    if not len(quads):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    lattice, inverse = np.unique(quads.reshape(-1, 3), axis=0, return_inverse=True)
    q = inverse.reshape(-1, 4)
    tris = np.concatenate([q[:, [0, 1, 2]], q[:, [0, 2, 3]]])
    return TriangleMesh(lattice / n - 0.5, tris)
