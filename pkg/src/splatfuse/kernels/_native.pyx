# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-pixel compositing kernels.

Same contract as ``_fallback``: depth-sorted, culled splats; integer pixel
centers; contributions below 1/255 skipped; a pixel stops after its
transmittance drops below 1e-4. Splats are binned into 8x8 tiles only to
avoid scanning every splat per pixel; the exact bounding-box test still
decides membership, so results do not depend on the tiling.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

cdef double ALPHA_MIN = 1.0 / 255.0
cdef double T_MIN = 1e-4
cdef int TILE = 8


cdef tuple _bin_tiles(long[:, ::1] bboxes, int width, int height):
    cdef int n = bboxes.shape[0]
    cdef int tx = (width + TILE - 1) // TILE
    cdef int ty = (height + TILE - 1) // TILE
    cdef long[::1] counts = np.zeros(tx * ty + 1, dtype=np.int64)
    cdef int i, a, b, t0x, t1x, t0y, t1y
    for i in range(n):
        if bboxes[i, 1] < bboxes[i, 0] or bboxes[i, 3] < bboxes[i, 2]:
            continue
        t0x = bboxes[i, 0] // TILE
        t1x = bboxes[i, 1] // TILE
        t0y = bboxes[i, 2] // TILE
        t1y = bboxes[i, 3] // TILE
        for b in range(t0y, t1y + 1):
            for a in range(t0x, t1x + 1):
                counts[b * tx + a + 1] += 1
    for a in range(tx * ty):
        counts[a + 1] += counts[a]
    cdef long[::1] fill = np.array(counts[:tx * ty], dtype=np.int64)
    cdef long[::1] lists = np.empty(counts[tx * ty], dtype=np.int64)
    for i in range(n):
        if bboxes[i, 1] < bboxes[i, 0] or bboxes[i, 3] < bboxes[i, 2]:
            continue
        t0x = bboxes[i, 0] // TILE
        t1x = bboxes[i, 1] // TILE
        t0y = bboxes[i, 2] // TILE
        t1y = bboxes[i, 3] // TILE
        for b in range(t0y, t1y + 1):
            for a in range(t0x, t1x + 1):
                lists[fill[b * tx + a]] = i
                fill[b * tx + a] += 1
    return np.asarray(counts), np.asarray(lists), tx


def forward(double[:, ::1] means, double[:, ::1] conics, double[:, ::1] colors,
            double[::1] alphas, double[::1] depths, long[:, ::1] bboxes,
            int width, int height, double[::1] background):
    cdef cnp.ndarray[double, ndim=3] image_a = np.zeros((height, width, 3))
    cdef cnp.ndarray[double, ndim=2] T_a = np.ones((height, width))
    cdef cnp.ndarray[long, ndim=2] nc_a = np.zeros((height, width), dtype=np.int64)
    cdef cnp.ndarray[double, ndim=2] depth_a = np.zeros((height, width))
    cdef double[:, :, ::1] image = image_a
    cdef double[:, ::1] Tm = T_a
    cdef long[:, ::1] ncm = nc_a
    cdef double[:, ::1] dm = depth_a
    counts_a, lists_a, tx_o = _bin_tiles(bboxes, width, height)
    cdef long[::1] counts = counts_a
    cdef long[::1] lists = lists_a
    cdef int tx = tx_o
    cdef int x, y, tile, j, i, ncount
    cdef double T, dx, dy, power, ap, w, r, g, b, dacc
    for y in range(height):
        for x in range(width):
            tile = (y // TILE) * tx + (x // TILE)
            T = 1.0
            r = 0.0
            g = 0.0
            b = 0.0
            dacc = 0.0
            ncount = 0
            for j in range(counts[tile], counts[tile + 1]):
                i = lists[j]
                if x < bboxes[i, 0] or x > bboxes[i, 1] or y < bboxes[i, 2] or y > bboxes[i, 3]:
                    continue
                dx = x - means[i, 0]
                dy = y - means[i, 1]
                power = -0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy) - conics[i, 1] * dx * dy
                ap = alphas[i] * exp(power)
                if ap < ALPHA_MIN:
                    continue
                w = ap * T
                r = r + w * colors[i, 0]
                g = g + w * colors[i, 1]
                b = b + w * colors[i, 2]
                dacc = dacc + w * depths[i]
                T = T * (1.0 - ap)
                ncount += 1
                if T < T_MIN:
                    break
            image[y, x, 0] = r + T * background[0]
            image[y, x, 1] = g + T * background[1]
            image[y, x, 2] = b + T * background[2]
            Tm[y, x] = T
            ncm[y, x] = ncount
            dm[y, x] = dacc
    return image_a, T_a, nc_a, depth_a


def backward(double[:, ::1] means, double[:, ::1] conics, double[:, ::1] colors,
             double[::1] alphas, long[:, ::1] bboxes, int width, int height,
             double[::1] background, double[:, :, ::1] dimage):
    cdef int n = alphas.shape[0]
    cdef cnp.ndarray[double, ndim=2] dmeans_a = np.zeros((n, 2))
    cdef cnp.ndarray[double, ndim=2] dconics_a = np.zeros((n, 3))
    cdef cnp.ndarray[double, ndim=2] dcolors_a = np.zeros((n, 3))
    cdef cnp.ndarray[double, ndim=1] dalphas_a = np.zeros(n)
    cdef double[:, ::1] dmeans = dmeans_a
    cdef double[:, ::1] dconics = dconics_a
    cdef double[:, ::1] dcolors = dcolors_a
    cdef double[::1] dalphas = dalphas_a
    counts_a, lists_a, tx_o = _bin_tiles(bboxes, width, height)
    cdef long[::1] counts = counts_a
    cdef long[::1] lists = lists_a
    cdef int tx = tx_o
    cdef long[::1] cidx = np.empty(max(n, 1), dtype=np.int64)
    cdef double[::1] cap = np.empty(max(n, 1))
    cdef double[::1] cgauss = np.empty(max(n, 1))
    cdef double[::1] cT = np.empty(max(n, 1))
    cdef int x, y, tile, j, i, m, q
    cdef double T, dx, dy, power, ap, gs, Br, Bg, Bb, dCr, dCg, dCb, g_ap, gp, Ti
    for y in range(height):
        for x in range(width):
            tile = (y // TILE) * tx + (x // TILE)
            T = 1.0
            m = 0
            for j in range(counts[tile], counts[tile + 1]):
                i = lists[j]
                if x < bboxes[i, 0] or x > bboxes[i, 1] or y < bboxes[i, 2] or y > bboxes[i, 3]:
                    continue
                dx = x - means[i, 0]
                dy = y - means[i, 1]
                power = -0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy) - conics[i, 1] * dx * dy
                gs = exp(power)
                ap = alphas[i] * gs
                if ap < ALPHA_MIN:
                    continue
                cidx[m] = i
                cap[m] = ap
                cgauss[m] = gs
                cT[m] = T
                m += 1
                T = T * (1.0 - ap)
                if T < T_MIN:
                    break
            if m == 0:
                continue
            dCr = dimage[y, x, 0]
            dCg = dimage[y, x, 1]
            dCb = dimage[y, x, 2]
            Br = background[0]
            Bg = background[1]
            Bb = background[2]
            for q in range(m - 1, -1, -1):
                i = cidx[q]
                ap = cap[q]
                Ti = cT[q]
                dcolors[i, 0] += dCr * ap * Ti
                dcolors[i, 1] += dCg * ap * Ti
                dcolors[i, 2] += dCb * ap * Ti
                g_ap = Ti * (dCr * (colors[i, 0] - Br) + dCg * (colors[i, 1] - Bg)
                             + dCb * (colors[i, 2] - Bb))
                Br = colors[i, 0] * ap + (1.0 - ap) * Br
                Bg = colors[i, 1] * ap + (1.0 - ap) * Bg
                Bb = colors[i, 2] * ap + (1.0 - ap) * Bb
                dalphas[i] += g_ap * cgauss[q]
                gp = g_ap * ap
                dx = x - means[i, 0]
                dy = y - means[i, 1]
                dconics[i, 0] += gp * (-0.5 * dx * dx)
                dconics[i, 1] += gp * (-dx * dy)
                dconics[i, 2] += gp * (-0.5 * dy * dy)
                dmeans[i, 0] += gp * (conics[i, 0] * dx + conics[i, 1] * dy)
                dmeans[i, 1] += gp * (conics[i, 1] * dx + conics[i, 2] * dy)
    return dmeans_a, dconics_a, dcolors_a, dalphas_a
