"""
Rendering - Differentiable volume rendering over sparse voxel grids.
"""

from .renderer import (
    RadianceOutput,
    RayHits,
    RaySample,
    RaySamples,
    RenderOutput,
    RenderSettings,
    composite,
    decode_density,
    decode_radiance,
    make_density_probe,
    render_image,
    render_pixel_batch,
    sample_hits,
    sample_ray,
    traverse_rays,
)

__all__ = [
    "RadianceOutput",
    "RayHits",
    "RaySample",
    "RaySamples",
    "RenderOutput",
    "RenderSettings",
    "composite",
    "decode_density",
    "decode_radiance",
    "make_density_probe",
    "render_image",
    "render_pixel_batch",
    "sample_hits",
    "sample_ray",
    "traverse_rays",
]
