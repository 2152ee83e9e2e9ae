from .mesh import (
    EmptyGeometryError,
    MeshFormatError,
    TriangleMesh,
    normalize_mesh,
    read_obj,
    voxel_cubes,
    write_obj,
)
from .procedural import KINDS, make_procedural_mesh, random_params
from .scan import (
    SENTINEL,
    DepthImage,
    PinholeCamera,
    ViewPose,
    back_project,
    depth_to_partial_grid,
    fill_solid,
    make_view_poses,
    render_depth,
    scan,
    voxelize_surface,
)

__all__ = [
    "DepthImage", "EmptyGeometryError", "KINDS", "MeshFormatError", "PinholeCamera", "SENTINEL",
    "TriangleMesh", "ViewPose", "back_project", "depth_to_partial_grid", "fill_solid",
    "make_procedural_mesh", "make_view_poses", "normalize_mesh", "random_params", "read_obj",
    "render_depth", "scan", "voxel_cubes", "voxelize_surface", "write_obj",
]
