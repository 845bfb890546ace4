"""
Geometry - Pinhole cameras, projection and view selection.
"""

from .camera import (
    CameraIntrinsics,
    CameraPose,
    CameraView,
    InvalidIntrinsicsError,
    InvalidPoseError,
    Projection,
    Ray,
    frustum_voxels,
    look_at,
    pixel_centers,
    pixel_rays,
    project,
    project_points,
    ray_for_pixel,
    select_neighbor_views,
    unproject,
    visible_mask,
)

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "CameraView",
    "InvalidIntrinsicsError",
    "InvalidPoseError",
    "Projection",
    "Ray",
    "frustum_voxels",
    "look_at",
    "pixel_centers",
    "pixel_rays",
    "project",
    "project_points",
    "ray_for_pixel",
    "select_neighbor_views",
    "unproject",
    "visible_mask",
]
