"""Depth-ordered alpha compositing of projected Gaussians, differentiable on the tape."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..diffcore.tape import Var, as_var, primitive
from .camera import Camera, Image
from .project import NEAR, Projection, project_all, project_backward

FIELDS = ("mu", "log_scale", "rot", "opacity_logit", "color")


@dataclass
class RasterAux:
    """Per-render record: splat order and bounding boxes fix every skip decision."""

    order: np.ndarray  # primitive index of each sorted splat
    bboxes: np.ndarray  # (S, 4) inclusive x0, x1, y0, y1
    projection: Projection
    transmittance: np.ndarray  # (H, W) final T
    n_contrib: np.ndarray
    depth: np.ndarray  # (H, W) opacity-normalized depth, inf where coverage < 0.5
    background: np.ndarray


def _bboxes(mean2d: np.ndarray, cov2d: np.ndarray, width: int, height: int) -> np.ndarray:
    tr = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    lam = tr + np.sqrt(np.maximum(tr * tr - det, 0.0))
    r = 3.0 * np.sqrt(lam)
    x0 = np.maximum(np.ceil(mean2d[:, 0] - r), 0)
    x1 = np.minimum(np.floor(mean2d[:, 0] + r), width - 1)
    y0 = np.maximum(np.ceil(mean2d[:, 1] - r), 0)
    y1 = np.minimum(np.floor(mean2d[:, 1] + r), height - 1)
    return np.stack([x0, x1, y0, y1], axis=1).astype(np.int64)


def _forward(values, cam: Camera, background, near: float):
    proj = project_all(*values, cam, near)
    idx = np.flatnonzero(proj.visible)
    # depth ascending, primitive index breaks ties
    order = idx[np.lexsort((idx, proj.depth[idx]))]
    bboxes = _bboxes(proj.mean2d[order], proj.cov2d[order], cam.width, cam.height)
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    image, T, nc, dacc = kernels.forward(proj.mean2d[order], proj.conic[order], proj.color[order],
                                         proj.alpha[order], proj.depth[order], bboxes,
                                         cam.width, cam.height, bg)
    cover = 1.0 - T
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = np.where(cover >= 0.5, dacc / cover, np.inf)
    return image, RasterAux(order, bboxes, proj, T, nc, depth, bg)


def _backward(aux: RasterAux, cam: Camera, dimage: np.ndarray):
    p, order = aux.projection, aux.order
    dm2, dcon, dcol, dal = kernels.backward(p.mean2d[order], p.conic[order], p.color[order],
                                            p.alpha[order], aux.bboxes, cam.width, cam.height,
                                            aux.background, dimage)
    n = len(p.alpha)
    full = [np.zeros((n, 2)), np.zeros((n, 3)), np.zeros(n), np.zeros((n, 3))]
    for buf, part in zip(full, (dm2, dcon, dal, dcol)):
        buf[order] = part
    return project_backward(p, full[0], full[1], full[2], full[3])


def render(mu, log_scale, rot, opacity_logit, color, cam: Camera, background=(0.0, 0.0, 0.0),
           near: float = NEAR) -> tuple[Var, RasterAux]:
    """Render one view as a taped primitive over the five Gaussian parameter arrays."""
    inputs = [as_var(v) for v in (mu, log_scale, rot, opacity_logit, color)]
    image, aux = _forward([v.value for v in inputs], cam, background, near)

    def vjp(g):
        return _backward(aux, cam, g)

    return primitive(image, inputs, vjp), aux


def _field_arrays(field):
    return [np.asarray(getattr(field, f), dtype=np.float64) for f in FIELDS]


def rasterize(field, cam: Camera, background=(0.0, 0.0, 0.0), near: float = NEAR) -> tuple[Image, RasterAux]:
    """Render ``field`` (anything with the five parameter arrays) without recording gradients."""
    image, aux = _forward(_field_arrays(field), cam, background, near)
    return Image(image), aux


def rasterize_backward(field, cam: Camera, background, dL_dimage, aux: RasterAux | None = None,
                       near: float = NEAR) -> dict[str, np.ndarray]:
    """Gradients of a pixel loss wrt every raw Gaussian parameter array."""
    if aux is None:
        _, aux = _forward(_field_arrays(field), cam, background, near)
    grads = _backward(aux, cam, np.asarray(dL_dimage, dtype=np.float64))
    return dict(zip(FIELDS, grads))
