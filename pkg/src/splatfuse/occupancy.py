"""Per-voxel semantic occupancy head and IoU / mIoU metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ops
from .diffcore.nn import Layer, make_mlp, mlp_forward, mlp_parameters
from .diffcore.rng import RngStream
from .diffcore.tape import Parameter, Var, as_var
from .fusion import ConfigurationError, FusedVoxelTensor
from .sparse_voxel import VoxelGridSpec


@dataclass
class OccupancyGrid:
    spec: VoxelGridSpec
    labels: np.ndarray  # (n_voxels,) in linear index order, 0 = empty

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.labels) != self.spec.n_voxels:
            raise ValueError(f"{len(self.labels)} labels for a grid of {self.spec.n_voxels} voxels")
        if np.any(self.labels < 0):
            raise ValueError("labels must be non-negative")

    @classmethod
    def empty(cls, spec: VoxelGridSpec) -> "OccupancyGrid":
        return cls(spec, np.zeros(spec.n_voxels, dtype=np.int64))

    @property
    def occupied(self) -> np.ndarray:
        return self.labels > 0


@dataclass
class HeadParams:
    mlp: list[Layer]
    empty_bias: Parameter  # logits for voxels without a fused entry

    @classmethod
    def create(cls, c_in: int, n_classes: int, rng: RngStream, hidden: int = 32,
               empty_logit: float = 2.0) -> "HeadParams":
        bias = np.zeros(n_classes + 1)
        bias[0] = empty_logit
        return cls(make_mlp([c_in, hidden, n_classes + 1], rng, "head"), Parameter(bias, "head.empty_bias"))

    @property
    def c_in(self) -> int:
        return self.mlp[0].W.shape[0]

    @property
    def n_classes(self) -> int:
        return self.mlp[-1].W.shape[1] - 1

    def parameters(self) -> list[Parameter]:
        return mlp_parameters(self.mlp) + [self.empty_bias]


def occupancy_head(fused: FusedVoxelTensor, head: HeadParams, features=None) -> Var:
    """Dense ``(n_voxels, n_classes + 1)`` logits in linear voxel order."""
    feats = as_var(features if features is not None else fused.features)
    n = fused.spec.n_voxels
    if len(fused) and feats.shape[1] != head.c_in:
        raise ConfigurationError(f"fused width {feats.shape[1]} but the head expects {head.c_in}")
    occupied = np.zeros(n, dtype=bool)
    occupied[fused.linear] = True
    free = np.flatnonzero(~occupied)
    bias_rows = ops.mul(np.ones((len(free), 1)), ops.reshape(head.empty_bias, (1, -1)))
    if len(fused) == 0:
        return ops.scatter_rows(bias_rows, free, n)
    dense = ops.scatter_rows(mlp_forward(feats, head.mlp), fused.linear, n)
    return ops.add(dense, ops.scatter_rows(bias_rows, free, n))


def predict(logits, spec: VoxelGridSpec) -> OccupancyGrid:
    v = logits.value if isinstance(logits, Var) else np.asarray(logits)
    return OccupancyGrid(spec, np.argmax(v, axis=1))


@dataclass
class Metrics:
    iou: float
    per_class: list[float]  # nan for classes absent from both grids
    miou: float


def iou_miou(pred: OccupancyGrid, gt: OccupancyGrid, n_classes: int) -> Metrics:
    """Geometric IoU over occupied voxels; mIoU averaged over classes present in ``gt``."""
    if pred.spec != gt.spec:
        raise ValueError("prediction and ground truth use different grid specs")
    p, g = pred.labels, gt.labels
    if p.max(initial=0) > n_classes or g.max(initial=0) > n_classes:
        raise ValueError("label exceeds n_classes")
    po, go = p > 0, g > 0
    union = int(np.sum(po | go))
    iou = float(np.sum(po & go)) / union if union else 1.0
    conf = np.bincount(g * (n_classes + 1) + p, minlength=(n_classes + 1) ** 2).reshape(n_classes + 1, -1)
    per_class, present = [], []
    for c in range(1, n_classes + 1):
        tp = conf[c, c]
        denom = conf[c, :].sum() + conf[:, c].sum() - tp
        per_class.append(float(tp) / denom if denom else float("nan"))
        if conf[c, :].sum() > 0:
            present.append(per_class[-1])
    miou = float(np.mean(present)) if present else 0.0
    return Metrics(iou, per_class, miou)


def save_grid(path, grid: OccupancyGrid) -> None:
    x, y, z = grid.spec.dims
    with open(path, "w") as fh:
        fh.write(f"dims {x} {y} {z}\n")
        fh.write("\n".join(str(int(v)) for v in grid.labels))
        fh.write("\n")


def load_grid(path, spec: VoxelGridSpec) -> OccupancyGrid:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "dims":
            raise ValueError(f"{path}: bad header {header}")
        dims = tuple(int(v) for v in header[1:])
        if dims != tuple(spec.dims):
            raise ValueError(f"{path}: dims {dims} differ from grid {tuple(spec.dims)}")
        labels = np.array([int(line) for line in fh if line.strip()], dtype=np.int64)
    return OccupancyGrid(spec, labels)
