"""Synthetic scenes: analytic occupancy, simulated lidar and truth-field renderings."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..diffcore.rng import RngStream
from ..gaussians import GaussianField, load_field, save_field
from ..occupancy import OccupancyGrid, load_grid, save_grid
from ..render.camera import Camera, Image, load_cameras, read_ppm, save_cameras, write_ppm
from ..render.rasterize import rasterize
from ..sparse_voxel import PointCloud, load_pointcloud, save_pointcloud
from .config import ObjectSpec, SceneSpec, format_config, load_scene_spec


@dataclass
class Scene:
    spec: SceneSpec
    pointcloud: PointCloud
    gt: OccupancyGrid
    cameras: list[Camera]
    images: list[Image]
    depths: list[np.ndarray]
    truth: GaussianField


def inside_object(ob: ObjectSpec, pts: np.ndarray) -> np.ndarray:
    d = pts - np.asarray(ob.center)
    if ob.shape == "box":
        return np.all(np.abs(d) <= np.asarray(ob.extent), axis=1)
    return np.sum(d * d, axis=1) <= ob.extent[0] ** 2


def ground_top(spec: SceneSpec) -> float:
    return spec.grid.lo[2] + spec.voxel_size


def occupancy_labels(spec: SceneSpec) -> np.ndarray:
    """Label of every voxel by center membership; later objects overwrite earlier ones."""
    grid = spec.grid
    centers = grid.center_of(grid.unravel(np.arange(grid.n_voxels)))
    labels = np.zeros(grid.n_voxels, dtype=np.int64)
    if spec.ground_plane:
        labels[centers[:, 2] < ground_top(spec)] = spec.ground_class
    for ob in spec.objects:
        labels[inside_object(ob, centers)] = ob.class_id
    return labels


def _ray_box(o, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    tn = np.nanmax(np.minimum(t1, t2), axis=1)
    tf = np.nanmin(np.maximum(t1, t2), axis=1)
    return np.where((tf >= tn) & (tn > 0), tn, np.inf)


def _ray_sphere(o, d, c, r):
    oc = o - c
    b = np.sum(oc * d, axis=1)
    disc = b * b - (np.sum(oc * oc, axis=1) - r * r)
    t = -b - np.sqrt(np.maximum(disc, 0.0))
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def cast_lidar(spec: SceneSpec, rng: RngStream) -> PointCloud:
    """Rays from a mast above the grid center; first hit, Gaussian range noise."""
    grid = spec.grid
    gen = rng.generator()
    n = spec.lidar_rays
    az = gen.uniform(0.0, 2.0 * math.pi, n)
    el = gen.uniform(math.radians(-60.0), math.radians(5.0), n)
    d = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)
    center = 0.5 * (grid.lo + grid.hi)
    o = np.array([center[0], center[1], grid.lo[2] + spec.lidar_height])
    O = np.broadcast_to(o, d.shape)
    best = np.full(n, np.inf)
    color = np.zeros((n, 3))
    surfaces = []
    if spec.ground_plane:
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = (ground_top(spec) - o[2]) / d[:, 2]
        surfaces.append((np.where(tg > 0, tg, np.inf), spec.ground_color))
    for ob in spec.objects:
        if ob.shape == "box":
            t = _ray_box(O, d, np.asarray(ob.center) - ob.extent, np.asarray(ob.center) + ob.extent)
        else:
            t = _ray_sphere(O, d, np.asarray(ob.center), ob.extent[0])
        surfaces.append((t, ob.color))
    for t, col in surfaces:
        closer = t < best
        best[closer] = t[closer]
        color[closer] = col
    hit = np.isfinite(best)
    rng_noise = gen.normal(0.0, spec.range_noise, n)
    int_noise = gen.normal(0.0, spec.intensity_noise, n)
    r = best[hit] + rng_noise[hit]
    pts = o + d[hit] * r[:, None]
    lum = color[hit] @ np.array([0.299, 0.587, 0.114])
    intensity = np.clip(lum + int_noise[hit], 0.0, 1.0)
    return PointCloud(np.column_stack([pts, intensity]))


def truth_field(spec: SceneSpec, labels: np.ndarray) -> GaussianField:
    """One opaque isotropic Gaussian per exposed occupied voxel, in the object's color."""
    grid = spec.grid
    occ = (labels > 0).reshape(grid.dims)
    padded = np.pad(occ, 1, constant_values=False)
    interior = occ.copy()
    for axis in range(3):
        for step in (-1, 1):
            interior &= np.roll(padded, step, axis=axis)[1:-1, 1:-1, 1:-1]
    surface = np.flatnonzero((occ & ~interior).reshape(-1))
    # the last object containing the center wins, as in the labels
    centers = grid.center_of(grid.unravel(surface))
    rgb = np.zeros((len(surface), 3))
    if spec.ground_plane:
        rgb[centers[:, 2] < ground_top(spec)] = spec.ground_color
    for ob in spec.objects:
        rgb[inside_object(ob, centers)] = ob.color
    rgb = np.clip(rgb, 0.02, 0.98)
    n = len(surface)
    op = math.log(spec.truth_opacity / (1.0 - spec.truth_opacity))
    return GaussianField(centers, np.full((n, 3), math.log(0.6 * spec.voxel_size)),
                         np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)), np.full(n, op),
                         np.log(rgb / (1.0 - rgb)), ["voxel_anchor"] * n, np.full(n, -1))


def ring_cameras(spec: SceneSpec) -> list[Camera]:
    grid = spec.grid
    c = 0.5 * (grid.lo + grid.hi)
    cams = []
    for i in range(spec.camera_count):
        a = 2.0 * math.pi * i / spec.camera_count + math.pi / 4.0
        eye = (c[0] + spec.camera_radius * math.cos(a), c[1] + spec.camera_radius * math.sin(a),
               grid.lo[2] + spec.camera_height)
        cams.append(Camera.look_at(eye, (c[0], c[1], grid.lo[2]), spec.image_width, spec.image_height,
                                   spec.camera_fov))
    return cams


def quantize8(pixels: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5) / 255.0


def generate_scene(spec: SceneSpec, rng: RngStream) -> Scene:
    """Build every input and target of a run; deterministic given ``rng``.

    Images are quantized to 8 bits so a scene written to disk and read back
    is identical to the in-memory one.
    """
    labels = occupancy_labels(spec)
    pc = cast_lidar(spec, rng.substream(0))
    truth = truth_field(spec, labels)
    cams = ring_cameras(spec)
    images, depths = [], []
    for cam in cams:
        img, aux = rasterize(truth, cam, spec.background)
        images.append(Image(quantize8(img.pixels)))
        depths.append(aux.depth)
    return Scene(spec, pc, OccupancyGrid(spec.grid, labels), cams, images, depths, truth)


# -- directory format ---------------------------------------------------------------

def _save_depth(path, depth: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in depth:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _load_depth(path) -> np.ndarray:
    return np.array([[float(v) for v in line.split()] for line in Path(path).read_text().splitlines()
                     if line.strip()])


def save_scene(out_dir, scene: Scene) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scene.txt").write_text(format_config(scene.spec))
    save_pointcloud(out / "pointcloud.txt", scene.pointcloud)
    save_grid(out / "gt_grid.txt", scene.gt)
    save_cameras(out / "cameras.txt", scene.cameras)
    save_field(out / "truth_field.txt", scene.truth)
    for i, (img, depth) in enumerate(zip(scene.images, scene.depths)):
        write_ppm(out / f"view_{i}.ppm", img)
        _save_depth(out / f"depth_{i}.txt", depth)


def load_scene(scene_dir) -> Scene:
    d = Path(scene_dir)
    spec = load_scene_spec(d / "scene.txt")
    cams = load_cameras(d / "cameras.txt")
    images = [read_ppm(d / f"view_{i}.ppm") for i in range(len(cams))]
    depths = [_load_depth(d / f"depth_{i}.txt") for i in range(len(cams))]
    return Scene(spec, load_pointcloud(d / "pointcloud.txt"), load_grid(d / "gt_grid.txt", spec.grid),
                 cams, images, depths, load_field(d / "truth_field.txt"))
