"""Gaussian primitives seeded from point and fused-voxel anchors, plus densification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.spatial import cKDTree

from .diffcore import ops
from .diffcore.nn import glorot_uniform
from .diffcore.rng import RngStream
from .diffcore.tape import DimensionError, Parameter, Var, as_var, primitive
from .fusion import FusedVoxelTensor
from .render.project import quat_to_rotmat, sigmoid
from .sparse_voxel import PointCloud, VoxelGridSpec

FIELDS = ("mu", "log_scale", "rot", "opacity_logit", "color")
WIDTHS = {"mu": 3, "log_scale": 3, "rot": 4, "opacity_logit": 1, "color": 3}
PROVENANCE = ("point_anchor", "voxel_anchor", "densified")
PRUNE_OPACITY = 0.005
SPLIT_SHRINK = 1.6


class InitializationError(RuntimeError):
    pass


@dataclass
class GaussianPrimitive:
    mu: np.ndarray
    log_scale: np.ndarray
    rot: np.ndarray  # (w, x, y, z)
    opacity_logit: float
    color: np.ndarray  # logits

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


@dataclass
class GaussianField:
    """Structure-of-arrays Gaussian field.

    ``anchor_id`` links a primitive to its row in the initialization snapshot
    ``theta0`` (-1 for densified primitives). ``theta0`` is stored read-only.
    """

    mu: np.ndarray
    log_scale: np.ndarray
    rot: np.ndarray
    opacity_logit: np.ndarray
    color: np.ndarray
    provenance: list[str]
    anchor_id: np.ndarray
    theta0: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.mu)
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(n, 3)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(n, 3)
        self.rot = np.asarray(self.rot, dtype=np.float64).reshape(n, 4)
        self.opacity_logit = np.asarray(self.opacity_logit, dtype=np.float64).reshape(n)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(n, 3)
        self.anchor_id = np.asarray(self.anchor_id, dtype=np.int64).reshape(n)
        self.provenance = list(self.provenance)
        if len(self.provenance) != n:
            raise DimensionError("provenance length differs from primitive count")
        bad = set(self.provenance) - set(PROVENANCE)
        if bad:
            raise ValueError(f"unknown provenance {sorted(bad)}")
        for v in self.theta0.values():
            v.setflags(write=False)

    def __len__(self) -> int:
        return len(self.mu)

    def __getitem__(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(self.mu[i].copy(), self.log_scale[i].copy(), self.rot[i].copy(),
                                 float(self.opacity_logit[i]), self.color[i].copy())

    @property
    def primitives(self) -> list[GaussianPrimitive]:
        return [self[i] for i in range(len(self))]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f: getattr(self, f) for f in FIELDS}

    def copy(self) -> "GaussianField":
        return GaussianField(*(getattr(self, f).copy() for f in FIELDS), list(self.provenance),
                             self.anchor_id.copy(), self.theta0)

    def validate(self) -> None:
        if len(self) == 0:
            raise InitializationError("Gaussian field is empty")
        for f in FIELDS:
            if not np.all(np.isfinite(getattr(self, f))):
                raise FloatingPointError(f"non-finite values in {f}")

    def renormalize(self) -> None:
        """Project every quaternion back to unit length, in place."""
        self.rot /= np.linalg.norm(self.rot, axis=1, keepdims=True)

    def parameters(self, prefix: str = "gauss") -> dict[str, Parameter]:
        return {f: Parameter(getattr(self, f), f"{prefix}.{f}") for f in FIELDS}

    def load_parameters(self, params: dict[str, Parameter]) -> None:
        for f in FIELDS:
            setattr(self, f, params[f].value.copy())


# -- anchors ---------------------------------------------------------------------

@dataclass
class AnchorSet:
    positions: np.ndarray  # (N, 3)
    kinds: list[str]

    def __len__(self) -> int:
        return len(self.positions)

    def __iter__(self) -> Iterator[tuple[np.ndarray, str]]:
        return iter(zip(self.positions, self.kinds))


def point_representatives(points: np.ndarray, spec: VoxelGridSpec) -> np.ndarray:
    """Per occupied voxel, the point nearest that voxel's point centroid.

    Voxels are keyed by unclamped floor index, so points outside the grid keep
    their own cells. Output is ordered by voxel index; ties go to the lower
    point index.
    """
    if len(points) == 0:
        return np.zeros((0, 3))
    cell = np.floor((points - spec.lo) / spec.voxel_size).astype(np.int64)
    keys, inverse = np.unique(cell, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse, minlength=len(keys)).astype(np.float64)
    cent = np.zeros((len(keys), 3))
    np.add.at(cent, inverse, points)
    cent /= counts[:, None]
    d2 = np.sum((points - cent[inverse]) ** 2, axis=1)
    order = np.lexsort((np.arange(len(points)), d2, inverse))
    first = np.ones(len(order), dtype=bool)
    first[1:] = inverse[order][1:] != inverse[order][:-1]
    return points[order[first]]


def collect_anchors(pc: PointCloud, fused: FusedVoxelTensor, norm_threshold: float = 1e-3) -> AnchorSet:
    """Point anchors (one per occupied voxel) plus centers of strong fused voxels.

    A voxel anchor is dropped when a point anchor lies inside its cube
    (Chebyshev distance to the center at most ``voxel_size / 2``).
    """
    if norm_threshold < 0:
        raise ValueError("norm_threshold must be non-negative")
    spec = fused.spec
    pts = point_representatives(pc.xyz, spec)
    if len(fused):
        strong = np.linalg.norm(fused.values, axis=1) > norm_threshold
        centers = fused.centers[strong]
    else:
        centers = np.zeros((0, 3))
    if len(pts) and len(centers):
        d, _ = cKDTree(pts).query(centers, k=1, p=np.inf)
        centers = centers[d > spec.voxel_size / 2.0]
    if len(pts) + len(centers) == 0:
        raise InitializationError("no point or fused-voxel anchors; cannot build a Gaussian field")
    return AnchorSet(np.concatenate([pts, centers]).reshape(-1, 3),
                     ["point_anchor"] * len(pts) + ["voxel_anchor"] * len(centers))


# -- initialization network -----------------------------------------------------------

N_RAW = 10  # dmu 3, log_scale 3, rotation vector 3, opacity 1
OFFSETS = np.array([(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)])


@dataclass
class InitNetParams:
    """One 3x3x3 conv (evaluated only at anchor voxels) and two per-anchor heads."""

    conv_W: Parameter  # (27 * C_in, hidden)
    conv_b: Parameter
    head_W: Parameter  # (hidden, 10)
    head_b: Parameter
    color_W: Parameter  # (hidden, 3)
    color_b: Parameter

    @classmethod
    def create(cls, c_in: int, rng: RngStream, hidden: int = 16, head_scale: float = 1.0) -> "InitNetParams":
        r = [rng.substream(i) for i in range(3)]
        return cls(Parameter(glorot_uniform(27 * c_in, hidden, r[0]), "init.conv_W"),
                   Parameter(np.zeros(hidden), "init.conv_b"),
                   Parameter(head_scale * glorot_uniform(hidden, N_RAW, r[1]), "init.head_W"),
                   Parameter(np.zeros(N_RAW), "init.head_b"),
                   Parameter(head_scale * glorot_uniform(hidden, 3, r[2]), "init.color_W"),
                   Parameter(np.zeros(3), "init.color_b"))

    @classmethod
    def zeros(cls, c_in: int, hidden: int = 16) -> "InitNetParams":
        return cls(Parameter(np.zeros((27 * c_in, hidden)), "init.conv_W"),
                   Parameter(np.zeros(hidden), "init.conv_b"),
                   Parameter(np.zeros((hidden, N_RAW)), "init.head_W"),
                   Parameter(np.zeros(N_RAW), "init.head_b"),
                   Parameter(np.zeros((hidden, 3)), "init.color_W"),
                   Parameter(np.zeros(3), "init.color_b"))

    @property
    def c_in(self) -> int:
        return self.conv_W.shape[0] // 27

    @property
    def n_outputs(self) -> int:
        return self.head_W.shape[1] + self.color_W.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.conv_W, self.conv_b, self.head_W, self.head_b, self.color_W, self.color_b]


def exp_map_quat(v) -> Var:
    """Unit quaternion ``(cos(t/2), sin(t/2) v / t)`` with ``t = |v|``, rows of ``v``."""
    v = as_var(v)
    x = v.value
    t = np.linalg.norm(x, axis=1)
    small = t < 1e-4
    ts = np.where(small, 1.0, t)
    s = np.where(small, 0.5 - t * t / 48.0, np.sin(ts / 2.0) / ts)
    # ds/dt divided by t, finite at zero
    ds_t = np.where(small, -1.0 / 24.0 + t * t / 960.0,
                    (0.5 * ts * np.cos(ts / 2.0) - np.sin(ts / 2.0)) / ts ** 3)
    out = np.concatenate([np.cos(t / 2.0)[:, None], s[:, None] * x], axis=1)

    def vjp(g):
        gw, gxyz = g[:, 0], g[:, 1:]
        dot = np.sum(gxyz * x, axis=1)
        return (-0.5 * s[:, None] * x * gw[:, None] + s[:, None] * gxyz + (ds_t * dot)[:, None] * x,)

    return primitive(out, (v,), vjp)


@dataclass
class InitOutput:
    """Differentiable initial parameters and the anchors they belong to."""

    theta: dict[str, Var]
    positions: np.ndarray
    kinds: list[str]
    skipped: int

    def field(self) -> GaussianField:
        vals = {f: self.theta[f].value.copy() for f in FIELDS}
        snap = {f: self.theta[f].value.copy() for f in FIELDS}
        n = len(self.positions)
        return GaussianField(vals["mu"], vals["log_scale"], vals["rot"], vals["opacity_logit"],
                             vals["color"], self.kinds, np.arange(n), snap)


def _patch_rows(fused: FusedVoxelTensor, cells: np.ndarray) -> np.ndarray:
    """Row of each 27-neighborhood member in ``fused`` (``len(fused)`` marks absent)."""
    spec = fused.spec
    dims = np.asarray(spec.dims)
    lookup = np.full(spec.n_voxels, len(fused), dtype=np.int64)
    lookup[fused.linear] = np.arange(len(fused))
    nb = cells[:, None, :] + OFFSETS[None, :, :]
    inside = np.all((nb >= 0) & (nb < dims), axis=2)
    lin = spec.linear_index(np.clip(nb, 0, dims - 1).reshape(-1, 3)).reshape(nb.shape[:2])
    return np.where(inside, lookup[lin], len(fused))


def init_parameters(fused: FusedVoxelTensor, anchors: AnchorSet, net: InitNetParams,
                    features=None) -> InitOutput:
    """Map fused features around each anchor's voxel to raw Gaussian parameters."""
    if len(anchors) == 0:
        raise InitializationError("no anchors")
    feats = as_var(features if features is not None else fused.features)
    if feats.shape[1] != net.c_in:
        raise DimensionError(f"fused width {feats.shape[1]} but the init net expects {net.c_in}")
    spec = fused.spec
    cells, inside = spec.index_of(anchors.positions)
    keep = np.flatnonzero(inside)
    if len(keep) == 0:
        raise InitializationError("every anchor lies outside the grid")
    pos = anchors.positions[keep]
    rows = _patch_rows(fused, cells[keep])
    padded = ops.concat([feats, np.zeros((1, feats.shape[1]))], axis=0)
    patches = ops.reshape(ops.take_rows(padded, rows.reshape(-1)), (len(keep), 27 * net.c_in))
    h = ops.relu(ops.linear(patches, net.conv_W, net.conv_b))
    raw = ops.linear(h, net.head_W, net.head_b)
    half = spec.voxel_size / 2.0
    theta = {
        "mu": ops.add(pos, ops.scale(ops.tanh(ops.take_cols(raw, 0, 3)), half)),
        "log_scale": ops.add(ops.take_cols(raw, 3, 6), math.log(half)),
        "rot": exp_map_quat(ops.take_cols(raw, 6, 9)),
        "opacity_logit": ops.reshape(ops.take_cols(raw, 9, 10), (len(keep),)),
        "color": ops.linear(h, net.color_W, net.color_b),
    }
    return InitOutput(theta, pos, [anchors.kinds[i] for i in keep], int(len(anchors) - len(keep)))


def init_gaussians(fused: FusedVoxelTensor, anchors: AnchorSet, net: InitNetParams) -> GaussianField:
    """Build a field and freeze its initial parameters as the consistency target."""
    return init_parameters(fused, anchors, net).field()


# -- densification ---------------------------------------------------------------

def densify(gf: GaussianField, pos_grads: np.ndarray, grad_threshold: float, scale_threshold: float,
            voxel_size: float) -> tuple[GaussianField, np.ndarray]:
    """Clone, split and prune; returns the new field and each new row's source row.

    Primitives whose positional gradient norm exceeds ``grad_threshold`` grow:
    small ones gain a copy stepped a quarter voxel against the gradient, large
    ones (max scale above ``scale_threshold``) are replaced by two shrunken
    children along their major axis. Original primitives with opacity below
    0.005 are removed first. Source is -1 for rows that start fresh.
    """
    pos_grads = np.asarray(pos_grads, dtype=np.float64).reshape(len(gf), 3)
    norms = np.linalg.norm(pos_grads, axis=1)
    alive = sigmoid(gf.opacity_logit) >= PRUNE_OPACITY
    grow = alive & (norms > grad_threshold)
    scale = np.exp(gf.log_scale)
    big = grow & (scale.max(axis=1) > scale_threshold)
    clone = grow & ~big

    keep = np.flatnonzero(alive & ~big)
    parts = {f: [getattr(gf, f)[keep]] for f in FIELDS}
    prov = [gf.provenance[i] for i in keep]
    anchor = [gf.anchor_id[keep]]
    source = [keep]

    ci = np.flatnonzero(clone)
    if len(ci):
        step = -pos_grads[ci] / norms[ci, None] * (voxel_size / 4.0)
        for f in FIELDS:
            parts[f].append(getattr(gf, f)[ci] + (step if f == "mu" else 0.0))

    si = np.flatnonzero(big)
    if len(si):
        q = gf.rot[si] / np.linalg.norm(gf.rot[si], axis=1, keepdims=True)
        R = quat_to_rotmat(q)
        major = np.argmax(scale[si], axis=1)
        axis = R[np.arange(len(si)), :, major]
        offs = 0.5 * scale[si, major][:, None] * axis
        for sign in (1.0, -1.0):
            for f in FIELDS:
                v = getattr(gf, f)[si]
                if f == "mu":
                    v = v + sign * offs
                elif f == "log_scale":
                    v = v - math.log(SPLIT_SHRINK)
                parts[f].append(v)
    n_new = len(ci) + 2 * len(si)
    prov += ["densified"] * n_new
    anchor.append(np.full(n_new, -1, dtype=np.int64))
    source.append(np.full(n_new, -1, dtype=np.int64))

    out = GaussianField(*(np.concatenate(parts[f]) for f in FIELDS), prov, np.concatenate(anchor),
                        gf.theta0)
    return out, np.concatenate(source)


# -- checkpoint ----------------------------------------------------------------------

def save_field(path, gf: GaussianField) -> None:
    with open(path, "w") as fh:
        for i in range(len(gf)):
            nums = np.concatenate([gf.mu[i], gf.log_scale[i], gf.rot[i], [gf.opacity_logit[i]], gf.color[i]])
            fh.write(" ".join(repr(float(x)) for x in nums) + f" {gf.provenance[i]}\n")


def load_field(path) -> GaussianField:
    rows, prov = [], []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 15:
                raise ValueError(f"{path}:{n}: expected 15 fields, got {len(parts)}")
            rows.append([float(x) for x in parts[:14]])
            prov.append(parts[14])
    a = np.array(rows, dtype=np.float64).reshape(-1, 14)
    return GaussianField(a[:, 0:3], a[:, 3:6], a[:, 6:10], a[:, 10], a[:, 11:14], prov,
                         np.full(len(a), -1))
