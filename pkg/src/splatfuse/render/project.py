"""Projection of 3D Gaussians to screen-space splats, with its backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera

DILATION = 0.3  # px^2 added to the 2D covariance diagonal
NEAR = 0.05


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from unit quaternions ``(w, x, y, z)``, shape (N, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


def rotmat_vjp(q: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Gradient wrt the unit quaternion given ``G = dL/dR``."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = lambda i, j: G[:, i, j]  # noqa: E731
    dw = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1))
    dx = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2)
              + z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2))
    dy = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
              - w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2))
    dz = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1)
              + y * g(1, 2) + x * g(2, 0) + y * g(2, 1))
    return np.stack([dw, dx, dy, dz], axis=1)


def covariance_3d(log_scale: np.ndarray, rot: np.ndarray):
    """``R(q) diag(exp(2 s)) R(q)^T`` for raw quaternions (normalized internally)."""
    qn = rot / np.linalg.norm(rot, axis=1, keepdims=True)
    Rq = quat_to_rotmat(qn)
    s2 = np.exp(2.0 * log_scale)
    return np.einsum("nij,nj,nkj->nik", Rq, s2, Rq), Rq, qn, s2


@dataclass
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    alpha: float


@dataclass
class Projection:
    """Batched projection of a field into one camera, keeping what the VJP needs."""

    visible: np.ndarray  # bool (N,)
    mean2d: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2), dilation included
    conic: np.ndarray  # (N, 3) inverse covariance (a, b, c)
    depth: np.ndarray
    alpha: np.ndarray
    color: np.ndarray
    # intermediates
    m: np.ndarray
    J: np.ndarray
    M: np.ndarray
    Rq: np.ndarray
    qn: np.ndarray
    qnorm: np.ndarray
    s2: np.ndarray
    cam: Camera


def project_all(mu, log_scale, rot, opacity_logit, color, cam: Camera, near: float = NEAR) -> Projection:
    mu = np.asarray(mu, dtype=np.float64).reshape(-1, 3)
    n = len(mu)
    m = mu @ cam.R.T + cam.t
    visible = m[:, 2] > near
    z = np.where(visible, m[:, 2], 1.0)
    mean2d = np.stack([cam.fx * m[:, 0] / z + cam.cx, cam.fy * m[:, 1] / z + cam.cy], axis=1)
    Sigma, Rq, qn, s2 = covariance_3d(np.asarray(log_scale, dtype=np.float64).reshape(-1, 3),
                                      np.asarray(rot, dtype=np.float64).reshape(-1, 4))
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * m[:, 0] / (z * z)
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * m[:, 1] / (z * z)
    M = cam.R @ Sigma @ cam.R.T
    cov2d = J @ M @ J.transpose(0, 2, 1)
    cov2d[:, 0, 0] += DILATION
    cov2d[:, 1, 1] += DILATION
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    conic = np.stack([cov2d[:, 1, 1] / det, -cov2d[:, 0, 1] / det, cov2d[:, 0, 0] / det], axis=1)
    return Projection(visible, mean2d, cov2d, conic, m[:, 2], sigmoid(opacity_logit).reshape(-1),
                      sigmoid(color).reshape(-1, 3), m, J, M, Rq, qn,
                      np.linalg.norm(np.asarray(rot, dtype=np.float64).reshape(-1, 4), axis=1), s2, cam)


def project_backward(p: Projection, d_mean2d, d_conic, d_alpha, d_color):
    """Chain screen-space gradients back to raw Gaussian parameters.

    ``d_conic`` is the gradient wrt ``(a, b, c)`` where the off-diagonal ``b``
    enters the quadratic form twice. Returns grads for
    ``(mu, log_scale, rot, opacity_logit, color)``; culled rows are zero.
    """
    cam = p.cam
    vis = p.visible.astype(np.float64)
    z = np.where(p.visible, p.m[:, 2], 1.0)
    mx, my = p.m[:, 0], p.m[:, 1]

    # conic -> covariance: dCov = -Q G Q with G the symmetric-matrix gradient
    a, b, c = p.conic[:, 0], p.conic[:, 1], p.conic[:, 2]
    Q = np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], axis=1)
    Gq = np.stack([np.stack([d_conic[:, 0], 0.5 * d_conic[:, 1]], -1),
                   np.stack([0.5 * d_conic[:, 1], d_conic[:, 2]], -1)], axis=1)
    dCov = -Q @ Gq @ Q
    dCov = dCov * vis[:, None, None]

    # cov2d = J M J^T
    dJ = 2.0 * dCov @ p.J @ p.M
    dM = p.J.transpose(0, 2, 1) @ dCov @ p.J
    dSigma = cam.R.T @ dM @ cam.R

    dm = np.zeros_like(p.m)
    dm[:, 0] = d_mean2d[:, 0] * cam.fx / z
    dm[:, 1] = d_mean2d[:, 1] * cam.fy / z
    dm[:, 2] = -d_mean2d[:, 0] * cam.fx * mx / z**2 - d_mean2d[:, 1] * cam.fy * my / z**2
    dm[:, 0] += dJ[:, 0, 2] * (-cam.fx / z**2)
    dm[:, 1] += dJ[:, 1, 2] * (-cam.fy / z**2)
    dm[:, 2] += (dJ[:, 0, 0] * (-cam.fx / z**2) + dJ[:, 0, 2] * (2.0 * cam.fx * mx / z**3)
                 + dJ[:, 1, 1] * (-cam.fy / z**2) + dJ[:, 1, 2] * (2.0 * cam.fy * my / z**3))
    dm *= vis[:, None]
    dmu = dm @ cam.R

    # Sigma = Rq diag(s2) Rq^T with symmetric dSigma
    dSym = 0.5 * (dSigma + dSigma.transpose(0, 2, 1))
    dRq = 2.0 * dSym @ p.Rq * p.s2[:, None, :]
    ds2 = np.einsum("nji,njk,nki->ni", p.Rq, dSym, p.Rq)
    dls = ds2 * 2.0 * p.s2
    dqn = rotmat_vjp(p.qn, dRq)
    drot = (dqn - p.qn * np.sum(p.qn * dqn, axis=1, keepdims=True)) / p.qnorm[:, None]

    dop = np.asarray(d_alpha) * p.alpha * (1.0 - p.alpha) * vis
    dcol = np.asarray(d_color) * p.color * (1.0 - p.color) * vis[:, None]
    return dmu, dls, drot, dop, dcol


def project_gaussian(g, cam: Camera, near: float = NEAR) -> Splat2D | None:
    """Project a single primitive; ``None`` when it is at or behind the near plane."""
    p = project_all(np.atleast_2d(g.mu), np.atleast_2d(g.log_scale), np.atleast_2d(g.rot),
                    np.atleast_1d(g.opacity_logit), np.atleast_2d(g.color), cam, near)
    if not p.visible[0]:
        return None
    return Splat2D(p.mean2d[0], p.cov2d[0], float(p.depth[0]), p.color[0], float(p.alpha[0]))
