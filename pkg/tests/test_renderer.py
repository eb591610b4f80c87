import math

import numpy as np
import pytest

from splatfuse import kernels
from splatfuse.diffcore import Parameter, finite_diff_check
from splatfuse.gaussians import GaussianField, GaussianPrimitive
from splatfuse.losses import photometric_loss
from splatfuse.render.camera import Camera, Image, load_cameras, read_ppm, save_cameras, to_bytes8, write_ppm
from splatfuse.render.project import DILATION, project_all, project_gaussian, sigmoid
from splatfuse.render.rasterize import FIELDS, _bboxes, rasterize, rasterize_backward, render

BG = np.array([0.1, 0.3, 0.7])


def _axis_camera(w=9, h=9, f=10.0):
    return Camera(f, f, (w - 1) / 2, (h - 1) / 2, np.eye(3), np.zeros(3), w, h)


def _field(mu, sigma, op_logit, color_logit):
    n = len(mu)
    return GaussianField(mu, np.log(np.broadcast_to(np.asarray(sigma, float).reshape(-1, 1), (n, 3))),
                         np.tile([1.0, 0, 0, 0], (n, 1)), op_logit, color_logit, ["point_anchor"] * n, np.arange(n))


def _random_field(gen, n=5):
    return GaussianField(gen.normal(scale=0.4, size=(n, 3)), gen.uniform(-2.4, -1.4, (n, 3)), gen.normal(size=(n, 4)),
                         gen.normal(size=n), gen.normal(size=(n, 3)), ["point_anchor"] * n, np.arange(n))


def _scene_camera(w=16, h=16):
    return Camera.look_at((3.0, 0.5, 1.5), (0.0, 0.0, 0.0), w, h, 55.0)


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(0.0, 1.0, 0, 0, np.eye(3), np.zeros(3), 4, 4)
    with pytest.raises(ValueError):
        Camera(1.0, 1.0, 0, 0, np.eye(3) * 1.01, np.zeros(3), 4, 4)


def test_projection_examples():
    cam = _axis_camera()
    s = project_gaussian(GaussianPrimitive(np.array([0, 0, 4.0]), np.log([0.2] * 3), np.array([1.0, 0, 0, 0]), 0.0, np.zeros(3)), cam)
    assert np.array_equal(s.mean2d, [4.0, 4.0])
    expect = (10.0 * 0.2 / 4.0) ** 2 + DILATION
    assert np.allclose(s.cov2d, np.diag([expect, expect]), rtol=1e-14, atol=1e-15)
    assert s.alpha == 0.5 and s.depth == 4.0
    behind = GaussianPrimitive(np.array([0, 0, -1.0]), np.zeros(3), np.array([1.0, 0, 0, 0]), 0.0, np.zeros(3))
    assert project_gaussian(behind, cam) is None
    eig = np.linalg.eigvalsh(s.cov2d)
    assert np.all(eig >= DILATION)


def test_empty_field_is_background():
    gf = GaussianField(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)), [], [])
    img, aux = rasterize(gf, _scene_camera(), BG)
    assert np.array_equal(img.pixels, np.broadcast_to(BG, (16, 16, 3)))
    assert np.all(aux.transmittance == 1.0)


def test_single_centered_splat():
    gf = _field(np.array([[0.0, 0.0, 3.0]]), 0.1, [0.4], [[0.3, -1.2, 2.0]])
    img, _ = rasterize(gf, _axis_camera(), BG)
    a, c = sigmoid(0.4), sigmoid(np.array([0.3, -1.2, 2.0]))
    assert np.max(np.abs(img.pixels[4, 4] - (c * a + (1 - a) * BG))) <= 1e-12


def test_two_splat_compositing_hand_formula():
    f, z1, z2, s1, s2 = 10.0, 2.0, 3.0, 0.1, 0.15
    gf = _field(np.array([[0.0, 0.0, z1], [z2 / f, 0.0, z2]]), [s1, s2], [-0.3, 0.8], [[1.0, -1.0, 0.0], [-2.0, 0.5, 1.5]])
    img, _ = rasterize(gf, _axis_camera(f=f), BG)
    a1, a2 = sigmoid(-0.3), sigmoid(0.8)
    c1, c2 = sigmoid(np.array([1.0, -1.0, 0.0])), sigmoid(np.array([-2.0, 0.5, 1.5]))
    # splat 2 projects one pixel right of the center; its falloff there comes from J J^T by hand
    x = z2 / f
    cxx = s2 ** 2 * (f * f / (z2 * z2) + f * f * x * x / z2 ** 4) + DILATION
    ap1, ap2 = a1, a2 * math.exp(-0.5 / cxx)
    hand = c1 * ap1 + c2 * ap2 * (1 - ap1) + BG * (1 - ap1) * (1 - ap2)
    assert np.max(np.abs(img.pixels[4, 4] - hand)) <= 1e-12
    # and at the second splat's own center the roles swap
    ap1 = a1 * math.exp(-0.5 / (s1 ** 2 * f * f / (z1 * z1) + DILATION))
    hand = c1 * ap1 + c2 * a2 * (1 - ap1) + BG * (1 - ap1) * (1 - a2)
    assert np.max(np.abs(img.pixels[4, 5] - hand)) <= 1e-12


def test_transmittance_bounds_and_permutation_invariance():
    gen = np.random.default_rng(0)
    gf = _random_field(gen, 12)
    cam = _scene_camera(24, 20)
    img, aux = rasterize(gf, cam, BG)
    assert np.all((aux.transmittance >= 0) & (aux.transmittance <= 1))
    perm = gen.permutation(12)
    shuffled = GaussianField(*(getattr(gf, f)[perm] for f in FIELDS), ["point_anchor"] * 12, np.arange(12))
    img2, _ = rasterize(shuffled, cam, BG)
    assert np.array_equal(img.pixels, img2.pixels)


def test_transmittance_non_increasing_along_sequence():
    gen = np.random.default_rng(1)
    gf = _random_field(gen, 8)
    cam = _scene_camera()
    # render growing prefixes of the depth-sorted sequence
    _, aux = rasterize(gf, cam)
    prev = np.ones((16, 16))
    for k in range(1, len(aux.order) + 1):
        sub = aux.order[:k]
        part = GaussianField(*(getattr(gf, f)[sub] for f in FIELDS), ["point_anchor"] * k, np.arange(k))
        T = rasterize(part, cam)[1].transmittance
        assert np.all(T <= prev)
        prev = T


def test_transparent_and_opaque_limits():
    gen = np.random.default_rng(2)
    gf = _random_field(gen, 6)
    gf.opacity_logit[:] = -40.0
    img, _ = rasterize(gf, _scene_camera(), BG)
    assert np.allclose(img.pixels, BG, atol=1e-15)

    cam = _axis_camera(9, 9, 5.0)
    near = _field(np.array([[0.0, 0.0, 1.0]]), 200.0, [30.0], [[0.0, 0.0, 0.0]])
    both = _field(np.array([[0.0, 0.0, 1.0], [0.1, 0.0, 3.0]]), [200.0, 0.2], [30.0, 3.0], [[0.0, 0.0, 0.0], [5.0, -5.0, 5.0]])
    a = rasterize(near, cam, BG)[0].pixels
    b = rasterize(both, cam, BG)[0].pixels
    assert np.max(np.abs(a - b)) < 1e-4


def test_backward_zero_seed():
    gen = np.random.default_rng(3)
    gf = _random_field(gen)
    grads = rasterize_backward(gf, _scene_camera(), BG, np.zeros((16, 16, 3)))
    assert all(np.all(g == 0) for g in grads.values())


def test_single_splat_color_fd():
    gf = _field(np.array([[0.0, 0.0, 3.0]]), 0.1, [0.4], [[0.3, -1.2, 2.0]])
    cam = _axis_camera()
    seed = np.zeros((9, 9, 3))
    seed[4, 4, 0] = 1.0
    g = rasterize_backward(gf, cam, BG, seed)["color"]
    eps = 1e-5
    num = []
    for j in range(3):
        hi, lo = gf.copy(), gf.copy()
        hi.color[0, j] += eps
        lo.color[0, j] -= eps
        num.append((rasterize(hi, cam, BG)[0].pixels[4, 4, 0] - rasterize(lo, cam, BG)[0].pixels[4, 4, 0]) / (2 * eps))
    assert np.max(np.abs(g[0] - num)) <= 1e-4 * max(np.max(np.abs(num)), 1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_photometric_fd_all_groups(seed):
    gen = np.random.default_rng(seed)
    gf = _random_field(gen)
    params = [Parameter(getattr(gf, f), f) for f in FIELDS]
    cam = _scene_camera()
    target = gen.uniform(size=(16, 16, 3))

    def f():
        img, _ = render(*params, cam, BG)
        return photometric_loss(img, target, 0.2)[0]

    rep = finite_diff_check(f, params, 1e-5, 1e-4)
    assert rep.passed, str(rep)


@pytest.mark.skipif("native" not in kernels.backends(), reason="compiled core not built")
@pytest.mark.parametrize("seed", range(5))
def test_native_matches_fallback(seed):
    gen = np.random.default_rng(seed)
    gf = _random_field(gen, 30)
    cam = _scene_camera(40, 32)
    p = project_all(*(getattr(gf, f) for f in FIELDS), cam)
    order = np.flatnonzero(p.visible)
    order = order[np.lexsort((order, p.depth[order]))]
    args = (p.mean2d[order], p.conic[order], p.color[order], p.alpha[order])
    bb = _bboxes(p.mean2d[order], p.cov2d[order], cam.width, cam.height)
    seed_img = gen.normal(size=(32, 40, 3))
    outs = {}
    for name, impl in kernels.backends().items():
        fwd = kernels.forward(*args, p.depth[order], bb, cam.width, cam.height, BG, impl=impl)
        bwd = kernels.backward(*args, bb, cam.width, cam.height, BG, seed_img, impl=impl)
        outs[name] = (fwd, bwd)
    for a, b in zip(outs["native"][0] + outs["native"][1], outs["python"][0] + outs["python"][1]):
        assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_ppm_round_trip(tmp_path):
    px = np.random.default_rng(4).uniform(-0.2, 1.2, (5, 7, 3))
    write_ppm(tmp_path / "a.ppm", Image(px))
    back = read_ppm(tmp_path / "a.ppm")
    assert back.pixels.shape == (5, 7, 3)
    assert np.array_equal(np.round(back.pixels * 255).astype(np.uint8), to_bytes8(px))
    assert to_bytes8(np.array([0.5 / 255, 1.5 / 255, 2.0]))[0] == 1
    with pytest.raises(ValueError):
        (tmp_path / "b.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        read_ppm(tmp_path / "b.ppm")


def test_camera_file_round_trip(tmp_path):
    cams = [_scene_camera(), Camera.look_at((0, 5, 2), (0, 0, 0), 8, 6, 70.0)]
    save_cameras(tmp_path / "c.txt", cams)
    back = load_cameras(tmp_path / "c.txt")
    assert all(np.array_equal(a.R, b.R) and np.array_equal(a.t, b.t) and a.fx == b.fx for a, b in zip(cams, back))
