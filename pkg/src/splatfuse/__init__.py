"""Camera/lidar voxel fusion with adaptive neighborhoods, supervised by Gaussian splat rendering."""

from . import diffcore, fusion, gaussians, kernels, losses, occupancy, render, sparse_voxel
from .fusion import FusedVoxelTensor, fuse_modalities
from .gaussians import GaussianField, init_gaussians
from .occupancy import OccupancyGrid, iou_miou
from .render import Camera, rasterize
from .sparse_voxel import PointCloud, SparseVoxelTensor, VoxelGridSpec

__version__ = "0.1.0"

__all__ = [
    "diffcore", "fusion", "gaussians", "kernels", "losses", "occupancy", "render", "sparse_voxel",
    "FusedVoxelTensor", "fuse_modalities", "GaussianField", "init_gaussians", "OccupancyGrid",
    "iou_miou", "Camera", "rasterize", "PointCloud", "SparseVoxelTensor", "VoxelGridSpec",
    "__version__",
]
