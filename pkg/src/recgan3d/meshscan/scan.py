"""Virtual scanning: view poses, pinhole camera, depth rendering, back-projection
and surface voxelization.

Frames: +y is up, the camera sits on the -z axis looking toward +z, and the
object is rotated about the origin.  Every grid spans [-0.5, 0.5]^3 of that
posed frame with cell index ``floor((c + 0.5) * N)`` (``c = 0.5`` goes to
``N - 1``), so partial and complete grids of one view are aligned by
construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .. import kernels
from ..voxelgrid import BINARY, OccupancyGrid
from .mesh import TriangleMesh

TWO_PI = 2.0 * math.pi
SENTINEL = math.inf
DEFAULT_PITCH = 0.4


def _wrap(angle):
    a = math.fmod(float(angle), TWO_PI)
    if a < 0.0:
        a += TWO_PI
    return 0.0 if a >= TWO_PI else a


def _snap(x):
    # exact quarter turns keep axis-aligned geometry on the lattice
    for target in (-1.0, 0.0, 1.0):
        if abs(x - target) < 1e-12:
            return target
    return x


@dataclass(frozen=True)
class ViewPose:
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("roll", "pitch", "yaw"):
            object.__setattr__(self, name, _wrap(getattr(self, name)))

    def rotation(self):
        """R = R_y(yaw) @ R_x(pitch) @ R_z(roll): roll about the view axis,
        pitch about the horizontal axis, yaw about the vertical axis."""
        cr, sr = _snap(math.cos(self.roll)), _snap(math.sin(self.roll))
        cp, sp = _snap(math.cos(self.pitch)), _snap(math.sin(self.pitch))
        cy, sy = _snap(math.cos(self.yaw)), _snap(math.sin(self.yaw))
        rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
        ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
        return ry @ rx @ rz

    def as_tuple(self):
        return (self.roll, self.pitch, self.yaw)


def make_view_poses(n_per_axis):
    """n^3 poses on a uniform angle lattice over [0, 2*pi), roll-major."""
    if int(n_per_axis) != n_per_axis or n_per_axis < 1:
        raise ValueError(f"n_per_axis must be a positive integer, got {n_per_axis}")
    n = int(n_per_axis)
    angles = [TWO_PI * k / n for k in range(n)]
    return [ViewPose(r, p, y) for r in angles for p in angles for y in angles]


@dataclass(frozen=True)
class PinholeCamera:
    width: int = 128
    height: int = 128
    focal: float = 140.0
    cx: float | None = None
    cy: float | None = None
    distance: float = 1.8

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not self.focal > 0:
            raise ValueError("focal length must be positive")
        if not self.distance > math.sqrt(3.0) / 2.0:
            raise ValueError("camera must sit outside the unit cube's circumsphere")
        if self.cx is None:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.height / 2.0)

    @property
    def center(self):
        return np.array([0.0, 0.0, -self.distance])

    def ray_directions(self):
        """Unit ray directions, shape (height * width, 3), row-major over pixels.

        Pixel (u, v) is sampled at its center; image rows grow toward -y.
        """
        u, v = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        d = np.stack([(u - self.cx) / self.focal, -(v - self.cy) / self.focal, np.ones_like(u)], axis=-1)
        d = d.reshape(-1, 3)
        return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass(frozen=True)
class DepthImage:
    """Per-pixel distance along the ray; misses hold ``SENTINEL`` (inf)."""

    depth: np.ndarray

    @property
    def hits(self):
        return np.isfinite(self.depth)


def render_depth(mesh, pose, camera):
    posed = mesh.transformed(pose.rotation())
    a, b, c = posed.corners
    depth = kernels.cast_rays(camera.center, camera.ray_directions(), a, b, c)
    depth = depth.reshape(camera.height, camera.width)
    depth.flags.writeable = False
    return DepthImage(depth)


def back_project(depth, camera):
    """3-D points (posed frame) of all hit pixels."""
    d = depth.depth.reshape(-1)
    hit = np.isfinite(d)
    return camera.center + d[hit, None] * camera.ray_directions()[hit]


def depth_to_partial_grid(depth, pose, camera, resolution):
    """Voxelize the back-projected surface points of one scan.

    ``pose`` names the view the depth image was rendered from; the points are
    already in that posed frame, so it only serves as a label here.
    """
    if resolution < 4:
        raise ValueError("resolution must be at least 4")
    pts = back_project(depth, camera)
    return OccupancyGrid(kernels.mark_points(pts, resolution), BINARY)


def voxelize_surface(mesh, pose, resolution, pitch=DEFAULT_PITCH, solid=False):
    """Surface occupancy of the posed mesh by barycentric point sampling.

    ``pitch`` is the sample spacing as a fraction of the voxel edge.
    """
    if len(mesh.triangles) == 0:
        return OccupancyGrid.empty(resolution)
    posed = mesh.transformed(pose.rotation())
    a, b, c = posed.corners
    grid = OccupancyGrid(kernels.sample_triangles(a, b, c, resolution, pitch / resolution), BINARY)
    return fill_solid(grid) if solid else grid


def fill_solid(surface):
    """Everything not reachable from the grid boundary through 6-connected empty voxels."""
    if surface.kind != BINARY:
        raise ValueError("fill_solid needs a binary grid")
    return OccupancyGrid(ndimage.binary_fill_holes(surface.values).astype(np.uint8), BINARY)


def scan(mesh, pose, camera, resolution, solid=False):
    """One virtual scan: (depth image, partial grid, complete grid)."""
    depth = render_depth(mesh, pose, camera)
    partial = depth_to_partial_grid(depth, pose, camera, resolution)
    full = voxelize_surface(mesh, pose, resolution, solid=solid)
    return depth, partial, full
