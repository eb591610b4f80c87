"""Finite-difference gradient checks for every differentiable operation.

Each check builds a small random instance from ``seed`` and compares taped
gradients with central differences (``eps = 1e-5``). Random noise is drawn
once per instance and frozen, so every check is a deterministic function.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .diffcore import ops
from .diffcore.gradcheck import GradReport, finite_diff_check
from .diffcore.nn import make_mlp, mlp_forward, mlp_parameters
from .diffcore.rng import RngStream
from .diffcore.tape import Parameter
from .fusion import FusedVoxelTensor, FusionParams, KSelectorParams, fuse_modalities, gumbel_noise, gumbel_softmax
from .gaussians import FIELDS, InitNetParams, collect_anchors, init_parameters
from .losses import (cross_entropy, d_ssim, lovasz_softmax, occupancy_loss, param_consistency,
                     photometric_loss)
from .occupancy import HeadParams, occupancy_head
from .render.camera import Camera
from .render.rasterize import render
from .sparse_voxel import PointCloud, SparseVoxelTensor, VoxelGridSpec

EPS = 1e-5
TOL = 1e-4


def _weights(gen, shape):
    return gen.normal(size=shape)


def _dot(v, w):
    return ops.sum_all(ops.mul(v, w))


def check_mlp(seed: int) -> GradReport:
    gen = np.random.default_rng(seed)
    layers = make_mlp([6, 9, 4], RngStream(seed), "mlp")
    x = Parameter(gen.normal(size=(5, 6)), "x")
    w = _weights(gen, (5, 4))
    return finite_diff_check(lambda: _dot(mlp_forward(x, layers), w), [x] + mlp_parameters(layers), EPS, TOL)


def check_softmax(seed: int) -> GradReport:
    gen = np.random.default_rng(seed)
    z = Parameter(gen.normal(size=(4, 5)) * 2.0, "z")
    w = _weights(gen, (4, 5))
    return finite_diff_check(lambda: _dot(ops.softmax(z), w), [z], EPS, TOL)


def check_gumbel_softmax(seed: int) -> GradReport:
    gen = np.random.default_rng(seed)
    z = Parameter(gen.normal(size=(6, 4)), "logits")
    noise = gumbel_noise(RngStream(seed), (6, 4))
    w = _weights(gen, (6, 4))
    tau = float(gen.uniform(0.5, 2.0))
    return finite_diff_check(lambda: _dot(gumbel_softmax(z, tau, noise=noise), w), [z], EPS, TOL)


def _random_sparse(gen, spec: VoxelGridSpec, n: int, C: int, modality: str) -> SparseVoxelTensor:
    lin = np.sort(gen.choice(spec.n_voxels, n, replace=False))
    return SparseVoxelTensor(spec, modality, spec.unravel(lin), gen.normal(size=(n, C)))


def check_fusion(seed: int) -> GradReport:
    """Bidirectional attention fusion with the relaxed (continuous k) graph."""
    gen = np.random.default_rng(seed)
    spec = VoxelGridSpec((0.0, 0.0, 0.0), 0.5, (5, 5, 3))
    C = 3
    F_I = _random_sparse(gen, spec, 9, C, "image")
    F_L = _random_sparse(gen, spec, 11, C, "lidar")
    rng = RngStream(seed)
    kp = KSelectorParams.create(C, rng.substream(0))
    fp_il = FusionParams.create(C, kp.k_max, rng.substream(1), "fuse_il")
    fp_li = FusionParams.create(C, kp.k_max, rng.substream(2), "fuse_li")
    fi = Parameter(F_I.features, "F_I")
    fl = Parameter(F_L.features, "F_L")
    noise = (gumbel_noise(rng.substream(3), (len(F_I), 4)), gumbel_noise(rng.substream(4), (len(F_L), 4)))
    U = len(np.union1d(F_I.linear, F_L.linear))
    w = _weights(gen, (U, 4 * C))

    def f():
        out = fuse_modalities(F_I, F_L, kp, fp_il, fp_li, image_features=fi, lidar_features=fl,
                              mode="relaxed", noise=noise)
        return _dot(out.fused.features, w)

    params = [fi, fl] + kp.parameters() + fp_il.parameters() + fp_li.parameters()
    return finite_diff_check(f, params, EPS, TOL)


def _init_instance(gen, seed: int, c_in: int = 4):
    spec = VoxelGridSpec((0.0, 0.0, 0.0), 0.5, (4, 4, 3))
    lin = np.sort(gen.choice(spec.n_voxels, 14, replace=False))
    feats = Parameter(gen.normal(size=(14, c_in)), "fused")
    fused = FusedVoxelTensor(spec, spec.unravel(lin), feats)
    pts = np.column_stack([gen.uniform(0.0, 1.9, size=(8, 3)), gen.uniform(size=8)])
    anchors = collect_anchors(PointCloud(pts), fused, 1e-3)
    net = InitNetParams.create(c_in, RngStream(seed), hidden=5)
    net.conv_b.value = gen.normal(size=net.conv_b.shape)
    return fused, feats, anchors, net


def check_init_network(seed: int) -> GradReport:
    gen = np.random.default_rng(seed)
    fused, feats, anchors, net = _init_instance(gen, seed)
    theta = init_parameters(fused, anchors, net, features=feats).theta
    ws = {name: _weights(gen, theta[name].shape) for name in FIELDS}

    def f():
        theta = init_parameters(fused, anchors, net, features=feats).theta
        out = None
        for name in FIELDS:
            t = _dot(theta[name], ws[name])
            out = t if out is None else ops.add(out, t)
        return out

    return finite_diff_check(f, [feats] + net.parameters(), EPS, TOL)


def check_renderer(seed: int) -> GradReport:
    gen = np.random.default_rng(seed)
    n = 6
    cam = Camera.look_at((3.0, 0.5, 1.5), (0.0, 0.0, 0.0), 18, 16, 55.0)
    params = [Parameter(gen.normal(scale=0.4, size=(n, 3)), "mu"),
              Parameter(gen.uniform(-2.4, -1.4, size=(n, 3)), "log_scale"),
              Parameter(gen.normal(size=(n, 4)), "rot"),
              Parameter(gen.normal(size=n), "opacity_logit"),
              Parameter(gen.normal(size=(n, 3)), "color")]
    w = _weights(gen, (16, 18, 3))
    bg = gen.uniform(size=3)

    def f():
        img, _ = render(*params, cam, bg)
        return _dot(img, w)

    return finite_diff_check(f, params, EPS, TOL)


def check_cross_entropy(seed: int) -> GradReport:
    gen = np.random.default_rng(seed)
    z = Parameter(gen.normal(size=(9, 5)), "logits")
    labels = gen.integers(0, 5, 9)
    labels[gen.random(9) < 0.2] = 255
    if np.all(labels == 255):
        labels[0] = 0
    return finite_diff_check(lambda: cross_entropy(z, labels, 255), [z], EPS, TOL)


def check_lovasz(seed: int) -> GradReport:
    gen = np.random.default_rng(seed)
    z = Parameter(gen.normal(size=(10, 4)), "logits")
    labels = gen.integers(0, 4, 10)
    return finite_diff_check(lambda: lovasz_softmax(ops.softmax(z), labels), [z], EPS, TOL)


def check_dssim(seed: int) -> GradReport:
    gen = np.random.default_rng(seed)
    a = Parameter(gen.uniform(size=(13, 14, 3)), "a")
    b = np.clip(a.value + gen.normal(scale=0.2, size=a.shape), 0.0, 1.0)
    return finite_diff_check(lambda: d_ssim(a, b), [a], EPS, TOL)


def check_photometric(seed: int) -> GradReport:
    gen = np.random.default_rng(seed)
    a = Parameter(gen.uniform(size=(12, 12, 3)), "rendered")
    b = gen.uniform(size=(12, 12, 3))
    return finite_diff_check(lambda: photometric_loss(a, b, 0.2)[0], [a], EPS, TOL)


def check_param_consistency(seed: int) -> GradReport:
    """Consistency loss differentiated through the init network into fused features."""
    gen = np.random.default_rng(seed)
    fused, feats, anchors, net = _init_instance(gen, seed)
    theta = init_parameters(fused, anchors, net, features=feats).theta
    # residuals kept away from the L1 kink at zero
    final = {}
    for name in FIELDS:
        shape = theta[name].shape
        final[name] = theta[name].value + gen.choice([-1.0, 1.0], size=shape) * gen.uniform(0.05, 0.5, size=shape)

    def f():
        th = init_parameters(fused, anchors, net, features=feats).theta
        return param_consistency(final, th)

    return finite_diff_check(f, [feats] + net.parameters(), EPS, TOL)


def check_occupancy(seed: int) -> GradReport:
    gen = np.random.default_rng(seed)
    spec = VoxelGridSpec((0.0, 0.0, 0.0), 0.5, (3, 3, 2))
    lin = np.sort(gen.choice(spec.n_voxels, 8, replace=False))
    feats = Parameter(gen.normal(size=(8, 8)), "fused")
    fused = FusedVoxelTensor(spec, spec.unravel(lin), feats)
    head = HeadParams.create(8, 3, RngStream(seed), hidden=6)
    labels = gen.integers(0, 4, spec.n_voxels)

    def f():
        return occupancy_loss(occupancy_head(fused, head, features=feats), labels)[0]

    return finite_diff_check(f, [feats] + head.parameters(), EPS, TOL)


CHECKS: dict[str, tuple[str, Callable[[int], GradReport]]] = {
    "mlp": ("diffcore", check_mlp),
    "softmax": ("diffcore", check_softmax),
    "gumbel_softmax": ("adaptive_fusion", check_gumbel_softmax),
    "attention_fusion": ("adaptive_fusion", check_fusion),
    "init_network": ("gaussian_field", check_init_network),
    "rasterizer": ("renderer", check_renderer),
    "cross_entropy": ("losses", check_cross_entropy),
    "lovasz": ("losses", check_lovasz),
    "d_ssim": ("losses", check_dssim),
    "photometric": ("losses", check_photometric),
    "param_consistency": ("losses", check_param_consistency),
    "occupancy_head": ("occupancy", check_occupancy),
}

MODULES = sorted({m for m, _ in CHECKS.values()})


def run_checks(module: str | None = None, seeds: Iterable[int] = range(10)):
    """Yield ``(check_name, seed, report)``; ``module`` filters by module or check name."""
    if module is not None and module not in MODULES and module not in CHECKS:
        raise ValueError(f"unknown module {module!r}; choose from {', '.join(MODULES)}")
    seeds = list(seeds)
    for name, (mod, fn) in CHECKS.items():
        if module is None or module in (mod, name):
            for s in seeds:
                yield name, s, fn(s)
