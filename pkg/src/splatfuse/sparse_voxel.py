"""Point-cloud filtering, voxelization, image-feature lifting and KNN over occupied voxels."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .render.camera import Camera, Image

MODALITIES = ("image", "lidar", "fused")


@dataclass(frozen=True)
class VoxelGridSpec:
    origin: tuple[float, float, float]
    voxel_size: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))
        object.__setattr__(self, "dims", tuple(int(x) for x in self.dims))
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")

    @property
    def n_voxels(self) -> int:
        X, Y, Z = self.dims
        return X * Y * Z

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + np.asarray(self.dims) * self.voxel_size

    def linear_index(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        _, Y, Z = self.dims
        return (idx[..., 0] * Y + idx[..., 1]) * Z + idx[..., 2]

    def unravel(self, lin) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(lin, dtype=np.int64), self.dims), axis=-1)

    def center_of(self, idx) -> np.ndarray:
        return self.lo + (np.asarray(idx, dtype=np.float64) + 0.5) * self.voxel_size

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)[..., :3]
        return np.all((p >= self.lo) & (p <= self.hi), axis=-1)

    def index_of(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Voxel index of each point and an in-bounds mask (closed box).

        Points on the upper faces belong to the last voxel layer.
        """
        p = np.asarray(points, dtype=np.float64)[..., :3]
        inside = self.contains(p)
        idx = np.floor((p - self.lo) / self.voxel_size).astype(np.int64)
        idx = np.minimum(np.maximum(idx, 0), np.asarray(self.dims) - 1)
        return idx, inside


@dataclass
class PointCloud:
    """Points as an (N, 4) array of ``x, y, z, intensity``."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)
        if not np.all(np.isfinite(self.points[:, :3])):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]


def save_pointcloud(path, pc: PointCloud) -> None:
    with open(path, "w") as fh:
        fh.write("# x y z intensity\n")
        for row in pc.points:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_pointcloud(path) -> PointCloud:
    rows = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 4:
            raise ValueError(f"{path}:{n}: expected 'x y z intensity'")
        rows.append([float(t) for t in tok])
    return PointCloud(np.array(rows).reshape(-1, 4))


@dataclass
class SparseVoxelTensor:
    """Occupied voxels of one modality, sorted by linear index.

    ``indices`` is (N, 3) int64 and ``features`` is (N, C) float64.
    """

    spec: VoxelGridSpec
    modality: str
    indices: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1, 3)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or len(self.features) != len(self.indices):
            raise ValueError("features must be (N, C) with one row per index")

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    @property
    def linear(self) -> np.ndarray:
        return self.spec.linear_index(self.indices)

    @property
    def centers(self) -> np.ndarray:
        return self.spec.center_of(self.indices)

    @classmethod
    def empty(cls, spec: VoxelGridSpec, modality: str, channels: int) -> "SparseVoxelTensor":
        return cls(spec, modality, np.zeros((0, 3), np.int64), np.zeros((0, channels)))

    def permuted(self, order) -> "SparseVoxelTensor":
        """Same content, different storage order (used to test order independence)."""
        order = np.asarray(order)
        return SparseVoxelTensor(self.spec, self.modality, self.indices[order], self.features[order])


def _pad(feats: np.ndarray, channels: int) -> np.ndarray:
    if feats.shape[1] > channels:
        raise ValueError(f"need at least {feats.shape[1]} channels, got {channels}")
    out = np.zeros((len(feats), channels))
    out[:, :feats.shape[1]] = feats
    return out


def range_filter(pc: PointCloud, bounds, min_neighbors: int = 0, radius: float = 0.0) -> PointCloud:
    """Keep points inside the closed box ``bounds = (lo, hi)`` that have at least
    ``min_neighbors`` other in-box points within ``radius``. Order is preserved."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    if min_neighbors > 0 and not radius > 0:
        raise ValueError("radius must be positive when min_neighbors > 0")
    xyz = pc.xyz
    keep = np.all((xyz >= lo) & (xyz <= hi), axis=1)
    if min_neighbors > 0 and keep.any():
        inside = np.flatnonzero(keep)
        tree = cKDTree(xyz[inside])
        counts = tree.query_ball_point(xyz[inside], r=radius, return_length=True) - 1
        keep[inside[counts < min_neighbors]] = False
    return PointCloud(pc.points[keep])


def voxelize(pc: PointCloud, spec: VoxelGridSpec, channels: int = 16) -> SparseVoxelTensor:
    """Bucket points into voxels; feature = mean normalized offset (3), mean intensity,
    log(1 + count), zero-padded to ``channels``."""
    idx, inside = spec.index_of(pc.xyz)
    if not inside.any():
        return SparseVoxelTensor.empty(spec, "lidar", channels)
    idx, pts = idx[inside], pc.points[inside]
    lin = spec.linear_index(idx)
    uniq, inv, counts = np.unique(lin, return_inverse=True, return_counts=True)
    offsets = (pts[:, :3] - spec.center_of(idx)) / spec.voxel_size
    sums = np.zeros((len(uniq), 4))
    np.add.at(sums, inv, np.column_stack([offsets, pts[:, 3]]))
    feats = np.column_stack([sums / counts[:, None], np.log1p(counts)])
    return SparseVoxelTensor(spec, "lidar", spec.unravel(uniq), _pad(feats, channels))


def unproject_image_features(images: Sequence[Image], depths: Sequence[np.ndarray],
                             cams: Sequence[Camera], spec: VoxelGridSpec,
                             channels: int = 16) -> SparseVoxelTensor:
    """Lift every pixel with finite positive depth to world space and pool per voxel.

    Depth is the camera-space z of the surface. Per occupied voxel the feature
    is mean RGB (3), log(1 + hits), mean world-space z-component of the unit
    view ray, zero-padded to ``channels``. Hits from all views are pooled.
    """
    if not len(images) == len(depths) == len(cams):
        raise ValueError("images, depths and cameras must have the same length")
    pts, rows = [], []
    for img, depth, cam in zip(images, depths, cams):
        depth = np.asarray(depth, dtype=np.float64)
        if img.pixels.shape[:2] != depth.shape or depth.shape != (cam.height, cam.width):
            raise ValueError("image, depth map and camera resolution disagree")
        valid = np.isfinite(depth) & (depth > 0)
        if not valid.any():
            continue
        rays = cam.pixel_rays()[valid]
        world = (rays * depth[valid][:, None] - cam.t) @ cam.R
        dirs = rays @ cam.R
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts.append(world)
        rows.append(np.column_stack([img.pixels[valid], dirs[:, 2]]))
    if not pts:
        return SparseVoxelTensor.empty(spec, "image", channels)
    world = np.concatenate(pts)
    rows = np.concatenate(rows)
    idx, inside = spec.index_of(world)
    if not inside.any():
        return SparseVoxelTensor.empty(spec, "image", channels)
    idx, rows = idx[inside], rows[inside]
    lin = spec.linear_index(idx)
    uniq, inv, counts = np.unique(lin, return_inverse=True, return_counts=True)
    sums = np.zeros((len(uniq), 4))
    np.add.at(sums, inv, rows)
    mean = sums / counts[:, None]
    feats = np.column_stack([mean[:, :3], np.log1p(counts), mean[:, 3]])
    return SparseVoxelTensor(spec, "image", spec.unravel(uniq), _pad(feats, channels))


@dataclass
class QuerySet:
    centers: np.ndarray
    features: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def nonzero_queries(t: SparseVoxelTensor) -> QuerySet:
    return QuerySet(t.centers, t.features.copy(), t.indices.copy())


def _sqdist(centers: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = centers - q
    return d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]


# queries this close to a voxel center (in voxels) are snapped onto it, so voxels at
# equal integer offsets tie exactly and the linear index decides
SNAP = 1e-9


def _to_voxel_units(q: np.ndarray, spec: "VoxelGridSpec") -> np.ndarray:
    ql = (np.asarray(q, dtype=np.float64) - spec.lo) / spec.voxel_size
    near = np.floor(ql) + 0.5
    return np.where(np.abs(ql - near) <= SNAP, near, ql)


def knn_brute_force(center, target: SparseVoxelTensor, k: int) -> np.ndarray:
    """Reference KNN: exhaustive sort by (squared distance, linear index)."""
    d2 = _sqdist(target.indices + 0.5, _to_voxel_units(center, target.spec))
    return np.lexsort((target.linear, d2))[:k]


class VoxelKNN:
    """Uniform-grid bucket index over the occupied voxels of one tensor.

    Buckets are cubes of ``bucket`` voxels per side. A query scans Chebyshev
    rings of buckets outward and stops once the k-th best distance is strictly
    below the distance to the unexplored region, which keeps the tie rule
    (distance, then linear index) exact.
    """

    def __init__(self, target: SparseVoxelTensor, bucket: int = 2):
        self.target = target
        self.centers = target.centers
        self.local = target.indices + 0.5  # centers in voxel units, exact
        self.linear = target.linear
        self.bucket = int(bucket)
        cells = target.indices // self.bucket
        self.buckets: dict[tuple[int, int, int], np.ndarray] = {}
        if len(cells):
            order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))
            keys, starts = np.unique(cells[order], axis=0, return_index=True)
            for key, grp in zip(keys, np.split(order, starts[1:])):
                self.buckets[tuple(int(v) for v in key)] = grp
            self.cell_lo = cells.min(axis=0)
            self.cell_hi = cells.max(axis=0)

    def query(self, center, k: int) -> np.ndarray:
        """Entry positions of the ``k`` nearest occupied voxels, nearest first."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self.buckets:
            return np.zeros(0, dtype=np.int64)
        q = _to_voxel_units(center, self.target.spec)
        qc = q / self.bucket
        c = np.floor(qc).astype(np.int64)
        r_max = int(np.max(np.maximum(np.abs(self.cell_hi - c), np.abs(c - self.cell_lo))))
        found: list[np.ndarray] = []
        n_found = 0
        for r in range(r_max + 1):
            for key in _ring(c, r):
                grp = self.buckets.get(key)
                if grp is not None:
                    found.append(grp)
                    n_found += len(grp)
            if n_found >= k and r < r_max:
                cand = np.concatenate(found)
                d2 = _sqdist(self.local[cand], q)
                kth = np.partition(d2, k - 1)[k - 1]
                gap = min(np.min(qc - (c - r)), np.min((c + r + 1) - qc)) * self.bucket
                if gap > 0 and kth < gap * gap:
                    break
        cand = np.concatenate(found) if found else np.zeros(0, dtype=np.int64)
        d2 = _sqdist(self.local[cand], q)
        order = np.lexsort((self.linear[cand], d2))[:k]
        return cand[order]

    def query_batch(self, centers: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Neighbor positions (-1 padded) and distances (inf padded), each (N, k)."""
        n = len(centers)
        idx = np.full((n, k), -1, dtype=np.int64)
        dist = np.full((n, k), np.inf)
        for i, q in enumerate(centers):
            nb = self.query(q, k)
            idx[i, :len(nb)] = nb
            dist[i, :len(nb)] = np.sqrt(_sqdist(self.centers[nb], q))
        return idx, dist


def _ring(c: np.ndarray, r: int):
    cx, cy, cz = (int(v) for v in c)
    if r == 0:
        yield (cx, cy, cz)
        return
    for dx in range(-r, r + 1):
        for dy in range(-r, r + 1):
            edge = abs(dx) == r or abs(dy) == r
            if edge:
                for dz in range(-r, r + 1):
                    yield (cx + dx, cy + dy, cz + dz)
            else:
                yield (cx + dx, cy + dy, cz - r)
                yield (cx + dx, cy + dy, cz + r)


def knn_nonzero(center, target: SparseVoxelTensor, k: int,
                index: VoxelKNN | None = None) -> list[tuple[np.ndarray, float]]:
    """The ``k`` occupied target voxels nearest to ``center`` as ``(feature, distance)``.

    Ordered by distance, ties by linear index; fewer than ``k`` when the target
    has fewer entries, empty when the target is empty.
    """
    index = index or VoxelKNN(target)
    nb = index.query(center, k)
    q = np.asarray(center, dtype=np.float64)
    d = np.sqrt(_sqdist(index.centers[nb], q))
    return [(target.features[i].copy(), float(di)) for i, di in zip(nb, d)]
