"""Scale-adaptive bidirectional cross-modal voxel fusion.

Each non-empty query voxel of one modality picks its neighborhood size k from
a candidate set with a Gumbel-Softmax relaxation and a straight-through
rounding step, gathers its k nearest occupied voxels in the other modality,
and turns the zero-padded key stack into channel gates. Both directions run
with separate gate weights and one shared k-selector; the fused feature is
``[F_I | F_L | F_I * w_I | F_L * w_L]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diffcore import ops
from .diffcore.nn import Layer, glorot_uniform, make_mlp, mlp_forward, mlp_parameters
from .diffcore.rng import RngStream
from .diffcore.tape import Parameter, Var, as_var
from .sparse_voxel import SparseVoxelTensor, VoxelGridSpec, VoxelKNN, QuerySet, nonzero_queries


class ConfigurationError(ValueError):
    pass


@dataclass
class KSelectorParams:
    mlp: list[Layer]
    candidates: tuple[int, ...] = (1, 2, 3, 4)
    tau: float = 1.0

    def __post_init__(self):
        self.candidates = tuple(int(c) for c in self.candidates)
        if min(self.candidates) < 1 or any(b <= a for a, b in zip(self.candidates, self.candidates[1:])):
            raise ConfigurationError("candidates must be strictly increasing and >= 1")
        if self.mlp[-1].W.shape[1] != len(self.candidates):
            raise ConfigurationError("final MLP width must equal the number of candidates")
        if not self.tau > 0:
            raise ConfigurationError("temperature must be positive")

    @classmethod
    def create(cls, channels: int, rng: RngStream, candidates=(1, 2, 3, 4), tau: float = 1.0,
               hidden: int | None = None) -> "KSelectorParams":
        hidden = hidden or 2 * channels
        mlp = make_mlp([channels, hidden, len(candidates)], rng, "kselect")
        return cls(mlp, tuple(candidates), tau)

    @property
    def k_max(self) -> int:
        return self.candidates[-1]

    def parameters(self) -> list[Parameter]:
        return mlp_parameters(self.mlp)


@dataclass
class FusionParams:
    """Gate weights for one retrieval direction: ``(k_max*C) -> C`` plus sigmoid."""

    W: Parameter
    b: Parameter
    k_max: int

    @classmethod
    def create(cls, channels: int, k_max: int, rng: RngStream, name: str) -> "FusionParams":
        return cls(Parameter(glorot_uniform(k_max * channels, channels, rng), f"{name}.W"),
                   Parameter(np.zeros(channels), f"{name}.b"), k_max)

    @property
    def channels(self) -> int:
        return self.W.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]


@dataclass
class KDecision:
    k: int
    z_c: np.ndarray
    expectation: float
    logits: np.ndarray


@dataclass
class FusedVoxelTensor:
    """Union of both modalities' occupied voxels with 4C-channel features."""

    spec: VoxelGridSpec
    indices: np.ndarray
    features: Var

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def values(self) -> np.ndarray:
        return self.features.value

    @property
    def linear(self) -> np.ndarray:
        return self.spec.linear_index(self.indices)

    @property
    def centers(self) -> np.ndarray:
        return self.spec.center_of(self.indices)


# -- Gumbel-Softmax and k selection -------------------------------------------

def gumbel_from_uniform(u: np.ndarray) -> np.ndarray:
    return -np.log(-np.log(u))


def gumbel_noise(rng: RngStream, shape) -> np.ndarray:
    return gumbel_from_uniform(rng.uniform_open(shape))


def gumbel_softmax(logits, tau: float, rng: RngStream | None = None,
                   noise: np.ndarray | None = None) -> Var:
    """``softmax((logits + g) / tau)``; ``g`` is constant for differentiation.

    Pass ``noise`` to freeze ``g`` (for example zeros, or a pre-drawn sample).
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    logits = as_var(logits)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = gumbel_noise(rng, logits.shape)
    return ops.softmax(ops.scale(ops.add(logits, noise), 1.0 / tau))


def _select(feats: Var, kp: KSelectorParams, noise: np.ndarray, mode: str):
    """Batched k selection. ``mode`` is 'ste' (round, identity backward) or 'relaxed'."""
    logits = mlp_forward(feats, kp.mlp)
    z_c = gumbel_softmax(logits, kp.tau, noise=noise)
    cands = np.asarray(kp.candidates, dtype=np.float64)[:, None]
    expectation = ops.reshape(ops.matmul(z_c, cands), (-1,))
    if mode == "ste":
        k = ops.ste_round(expectation)
    elif mode == "relaxed":
        k = expectation
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    return k, z_c, expectation, logits


def _decisions(k: Var, z_c: Var, expectation: Var, logits: Var) -> list[KDecision]:
    return [KDecision(int(np.floor(kv + 0.5)), zc.copy(), float(e), lg.copy())
            for kv, zc, e, lg in zip(k.value, z_c.value, expectation.value, logits.value)]


def select_k(query_feat, p: KSelectorParams, rng: RngStream | None = None,
             noise: np.ndarray | None = None) -> KDecision:
    """Choose k for one query feature vector (see module docstring)."""
    feats = ops.reshape(as_var(query_feat), (1, -1))
    if noise is None:
        noise = gumbel_noise(rng, (len(p.candidates),))
    k, z_c, e, logits = _select(feats, p, np.asarray(noise).reshape(1, -1), "ste")
    return _decisions(k, z_c, e, logits)[0]


# -- attention gates ------------------------------------------------------------

def attention_weights(keys: Sequence[tuple[np.ndarray, float]], k_max: int, fp: FusionParams,
                      direction: str | None = None) -> Var:
    """Gate vector in (0, 1)^C from distance-ordered keys, zero-padded to ``k_max`` slots.

    ``direction`` is informational; pass the params for the direction in use.
    An empty key list yields the neutral gate 0.5.
    """
    if len(keys) > k_max:
        raise ValueError(f"{len(keys)} keys exceed k_max={k_max}")
    C = fp.channels
    if not keys:
        return Var(np.full(C, 0.5))
    feats = [as_var(f) for f, _ in keys]
    pad = np.zeros((k_max - len(keys)) * C)
    row = ops.reshape(ops.concat(feats + [pad], axis=0), (1, -1))
    return ops.reshape(ops.sigmoid(ops.linear(row, fp.W, fp.b)), (-1,))


def _slot_expander(k_max: int, C: int) -> np.ndarray:
    return np.kron(np.eye(k_max), np.ones((1, C)))


@dataclass
class DirectionPlan:
    """Neighbor table for one retrieval direction, fixed by geometry alone."""

    neighbors: np.ndarray  # (N, k_max) target positions, -1 where absent
    distances: np.ndarray
    query_linear: np.ndarray

    @classmethod
    def build(cls, query_centers: np.ndarray, query_linear: np.ndarray,
              target: SparseVoxelTensor, k_max: int) -> "DirectionPlan":
        if len(target) == 0:
            n = len(query_centers)
            return cls(np.full((n, k_max), -1, np.int64), np.full((n, k_max), np.inf), query_linear)
        nb, dist = VoxelKNN(target).query_batch(query_centers, k_max)
        return cls(nb, dist, np.asarray(query_linear, dtype=np.int64))


def _gumbel_block(rng: RngStream, spec: VoxelGridSpec, n_cand: int, lin: np.ndarray) -> np.ndarray:
    # one draw per grid voxel, addressed by linear index: independent of
    # storage order and of which modality owns the query
    return gumbel_noise(rng, (spec.n_voxels, n_cand))[lin]


def _enhance(feats: Var, target_feats: Var, plan: DirectionPlan, kp: KSelectorParams,
             fp: FusionParams, noise: np.ndarray, mode: str, fixed_k: int | None):
    n, C = feats.shape
    k_max = fp.k_max
    if fixed_k is None:
        k, z_c, e, logits = _select(feats, kp, noise, mode)
        decisions = _decisions(k, z_c, e, logits)
    else:
        k = Var(np.full(n, float(fixed_k)))
        decisions = [KDecision(int(fixed_k), np.zeros(0), float(fixed_k), np.zeros(0))] * n
    if n == 0:
        return Var(np.zeros((0, C))), decisions
    if len(target_feats) == 0:
        return ops.scale(feats, 0.5), decisions
    present = (plan.neighbors >= 0).astype(np.float64)
    gathered = ops.take_rows(target_feats, np.maximum(plan.neighbors, 0).reshape(-1))
    keys = ops.reshape(gathered, (n, k_max * C))
    expand = _slot_expander(k_max, C)
    mask = ops.matmul(ops.mul(ops.slot_mask(k, k_max), present), expand)
    omega = ops.sigmoid(ops.linear(ops.mul(keys, mask), fp.W, fp.b))
    return ops.mul(feats, omega), decisions


def enhance_direction(queries: QuerySet, target: SparseVoxelTensor, kp: KSelectorParams,
                      fp: FusionParams, rng: RngStream | None = None, *,
                      query_features=None, target_features=None,
                      plan: DirectionPlan | None = None, noise: np.ndarray | None = None,
                      mode: str = "ste", fixed_k: int | None = None):
    """Gate each query by attention over its k nearest target voxels.

    Args:
        queries: non-empty voxels of the query modality.
        target: the other modality.
        kp: shared k-selector.
        fp: gate weights for this direction.
        rng: source of per-voxel Gumbel noise (ignored when ``noise`` is given).
        query_features, target_features: optional ``Var`` overrides of the
            feature arrays, used to differentiate wrt the inputs.
        plan: precomputed neighbor table; built on demand otherwise.
        noise: (N, |K|) frozen Gumbel noise.
        mode: 'ste' rounds k in the forward pass; 'relaxed' uses the
            continuous expectation everywhere. Backward passes are identical.
        fixed_k: bypass selection and use a constant k.

    Returns:
        ``(weighted, decisions)`` with ``weighted`` of shape (N, C).
    """
    feats = as_var(query_features if query_features is not None else queries.features)
    tfeats = as_var(target_features if target_features is not None else target.features)
    if feats.shape[1] != tfeats.shape[1]:
        raise ConfigurationError("query and target channel counts differ")
    lin = target.spec.linear_index(queries.indices)
    if plan is None:
        plan = DirectionPlan.build(queries.centers, lin, target, fp.k_max)
    if noise is None and fixed_k is None:
        noise = _gumbel_block(rng, target.spec, len(kp.candidates), lin)
    return _enhance(feats, tfeats, plan, kp, fp, noise, mode, fixed_k)


@dataclass
class FusionPlan:
    """Geometry shared by every training step: union indices and both neighbor tables."""

    spec: VoxelGridSpec
    union_linear: np.ndarray
    image_rows: np.ndarray  # positions of image entries inside the union
    lidar_rows: np.ndarray
    image_to_lidar: DirectionPlan
    lidar_to_image: DirectionPlan

    @classmethod
    def build(cls, F_I: SparseVoxelTensor, F_L: SparseVoxelTensor, k_max: int) -> "FusionPlan":
        if F_I.spec != F_L.spec:
            raise ConfigurationError("image and lidar tensors use different grid specs")
        lin_i, lin_l = F_I.linear, F_L.linear
        union = np.union1d(lin_i, lin_l)
        return cls(F_I.spec, union, np.searchsorted(union, lin_i), np.searchsorted(union, lin_l),
                   DirectionPlan.build(F_I.centers, lin_i, F_L, k_max),
                   DirectionPlan.build(F_L.centers, lin_l, F_I, k_max))


@dataclass
class FusionOutput:
    fused: FusedVoxelTensor
    image_decisions: list[KDecision] = field(default_factory=list)
    lidar_decisions: list[KDecision] = field(default_factory=list)

    @property
    def decisions(self) -> list[KDecision]:
        return self.image_decisions + self.lidar_decisions


def fuse_modalities(F_I: SparseVoxelTensor, F_L: SparseVoxelTensor, kp: KSelectorParams,
                    fp_IL: FusionParams, fp_LI: FusionParams, rng: RngStream | None = None, *,
                    image_features=None, lidar_features=None, plan: FusionPlan | None = None,
                    mode: str = "ste", fixed_k: int | None = None,
                    noise: tuple[np.ndarray, np.ndarray] | None = None) -> FusionOutput:
    """Bidirectional enhancement followed by four-way concatenation on the union grid.

    ``fp_IL`` gates image queries from lidar keys; ``fp_LI`` the reverse.
    Where a modality is absent, both of its blocks are zero.
    """
    if F_I.spec != F_L.spec:
        raise ConfigurationError("image and lidar tensors use different grid specs")
    if F_I.channels != F_L.channels:
        raise ConfigurationError("image and lidar channel counts differ")
    if fp_IL.k_max != kp.k_max or fp_LI.k_max != kp.k_max:
        raise ConfigurationError("gate k_max must equal the largest candidate")
    plan = plan or FusionPlan.build(F_I, F_L, kp.k_max)
    fi = as_var(image_features if image_features is not None else F_I.features)
    fl = as_var(lidar_features if lidar_features is not None else F_L.features)
    n_cand = len(kp.candidates)
    if noise is None and fixed_k is None:
        block = gumbel_noise(rng, (F_I.spec.n_voxels, n_cand))
        noise = (block[F_I.linear], block[F_L.linear])
    elif noise is None:
        noise = (None, None)
    w_i, dec_i = _enhance(fi, fl, plan.image_to_lidar, kp, fp_IL, noise[0], mode, fixed_k)
    w_l, dec_l = _enhance(fl, fi, plan.lidar_to_image, kp, fp_LI, noise[1], mode, fixed_k)
    U = len(plan.union_linear)
    blocks = [ops.scatter_rows(fi, plan.image_rows, U), ops.scatter_rows(fl, plan.lidar_rows, U),
              ops.scatter_rows(w_i, plan.image_rows, U), ops.scatter_rows(w_l, plan.lidar_rows, U)]
    fused = FusedVoxelTensor(F_I.spec, F_I.spec.unravel(plan.union_linear), ops.concat(blocks, axis=1))
    return FusionOutput(fused, dec_i, dec_l)


# -- k-decision dump --------------------------------------------------------------

def write_k_decisions(path, decisions: Sequence[KDecision], candidates: Sequence[int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_index", "k", "expectation"] + [f"p{c}" for c in candidates])
        for i, d in enumerate(decisions):
            probs = d.z_c if len(d.z_c) else np.zeros(len(candidates))
            w.writerow([i, d.k, repr(float(d.expectation))] + [repr(float(p)) for p in probs])
