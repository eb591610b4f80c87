"""Differentiable Gaussian splat rendering."""

from .camera import Camera, Image, load_cameras, read_ppm, save_cameras, write_ppm
from .project import DILATION, NEAR, Splat2D, project_all, project_backward, project_gaussian
from .rasterize import FIELDS, RasterAux, rasterize, rasterize_backward, render

__all__ = [
    "Camera", "Image", "load_cameras", "read_ppm", "save_cameras", "write_ppm", "DILATION",
    "NEAR", "Splat2D", "project_all", "project_backward", "project_gaussian", "FIELDS",
    "RasterAux", "rasterize", "rasterize_backward", "render",
]
