"""Pure-numpy compositing kernels, vectorized per splat over its bounding box.

Inputs are already depth-sorted and culled. Pixel centers sit at integer
coordinates. A splat contributes to a pixel when the pixel lies in its
bounding box, the pixel is still active, and its falloff-weighted alpha is at
least 1/255; a pixel stops accepting splats once its transmittance drops
below 1e-4 (the splat that crossed the threshold is kept).
"""

from __future__ import annotations

import numpy as np

ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4


def _falloff(mean, conic, x0, x1, y0, y1):
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.float64)
    dx = xs - mean[0]
    dy = ys - mean[1]
    power = -0.5 * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy
    return dx, dy, np.exp(power)


def forward(means, conics, colors, alphas, depths, bboxes, width, height, background):
    image = np.zeros((height, width, 3))
    depth_acc = np.zeros((height, width))
    T = np.ones((height, width))
    active = np.ones((height, width), dtype=bool)
    n_contrib = np.zeros((height, width), dtype=np.int64)
    for i in range(len(alphas)):
        x0, x1, y0, y1 = (int(v) for v in bboxes[i])
        if x1 < x0 or y1 < y0:
            continue
        _, _, g = _falloff(means[i], conics[i], x0, x1, y0, y1)
        ap = alphas[i] * g
        win = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        m = active[win] & (ap >= ALPHA_MIN)
        if not m.any():
            continue
        Tw = T[win]
        w = np.where(m, ap * Tw, 0.0)
        image[win] += w[..., None] * colors[i]
        depth_acc[win] += w * depths[i]
        Tn = np.where(m, Tw * (1.0 - ap), Tw)
        T[win] = Tn
        n_contrib[win] += m
        active[win] &= ~(m & (Tn < T_MIN))
    image += T[..., None] * np.asarray(background, dtype=np.float64)
    return image, T, n_contrib, depth_acc


def backward(means, conics, colors, alphas, bboxes, width, height, background, dimage):
    n = len(alphas)
    T = np.ones((height, width))
    active = np.ones((height, width), dtype=bool)
    saved = []
    for i in range(n):
        x0, x1, y0, y1 = (int(v) for v in bboxes[i])
        if x1 < x0 or y1 < y0:
            saved.append(None)
            continue
        dx, dy, g = _falloff(means[i], conics[i], x0, x1, y0, y1)
        ap = alphas[i] * g
        win = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        m = active[win] & (ap >= ALPHA_MIN)
        if not m.any():
            saved.append(None)
            continue
        Tw = T[win].copy()
        Tn = np.where(m, Tw * (1.0 - ap), Tw)
        T[win] = Tn
        active[win] &= ~(m & (Tn < T_MIN))
        saved.append((win, m, dx, dy, g, ap, Tw))

    dmeans = np.zeros((n, 2))
    dconics = np.zeros((n, 3))
    dcolors = np.zeros((n, 3))
    dalphas = np.zeros(n)
    behind = np.broadcast_to(np.asarray(background, dtype=np.float64), (height, width, 3)).copy()
    for i in range(n - 1, -1, -1):
        rec = saved[i]
        if rec is None:
            continue
        win, m, dx, dy, gauss, ap, Tw = rec
        mf = m.astype(np.float64)
        dC = dimage[win]
        B = behind[win]
        wT = ap * Tw * mf
        dcolors[i] = np.einsum("ij,ijc->c", wT, dC)
        g_ap = Tw * mf * np.einsum("ijc,ijc->ij", dC, colors[i] - B)
        behind[win] = np.where(m[..., None], colors[i] * ap[..., None] + (1.0 - ap[..., None]) * B, B)
        dalphas[i] = np.sum(g_ap * gauss)
        gp = g_ap * ap
        a, b, c = conics[i]
        dconics[i, 0] = np.sum(gp * (-0.5 * dx * dx))
        dconics[i, 1] = np.sum(gp * (-dx * dy))
        dconics[i, 2] = np.sum(gp * (-0.5 * dy * dy))
        dmeans[i, 0] = np.sum(gp * (a * dx + b * dy))
        dmeans[i, 1] = np.sum(gp * (b * dx + c * dy))
    return dmeans, dconics, dcolors, dalphas
