"""Numba kernels for tile rasterization, its backward pass, and oracles.

All kernels run in float64 with fastmath disabled so results are bitwise
reproducible. Parallel loops are over tiles; a tile's pixels and list entries
are touched by exactly one thread, and every cross-tile reduction is done
serially afterwards in fixed order.
"""

import numpy as np
from numba import njit, prange

ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
STOP_TRANSMITTANCE = 1e-4


@njit(cache=True, parallel=True)
def forward_tiles(tile_starts, mean2d, conic, rgb, opac,
                  power_min, rad2, width, height, tile_size, tiles_x, bg,
                  image, trans, n_contrib, walk_end):
    """All per-gaussian arrays are pre-gathered in tile-entry order, so the
    inner loop reads memory sequentially. power_min[k] = ln(skip / opac) and
    rad2[k] are pre-tests equivalent to the alpha < 1/255 skip; they only
    avoid exp()."""
    n_tiles = tile_starts.shape[0] - 1
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        x0 = tx * tile_size
        y0 = ty * tile_size
        x1 = min(x0 + tile_size, width)
        y1 = min(y0 + tile_size, height)
        start = tile_starts[t]
        end = tile_starts[t + 1]
        for py in range(y0, y1):
            cy = py + 0.5
            for px in range(x0, x1):
                cx = px + 0.5
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                contributors = 0
                stop = end
                for k in range(start, end):
                    dx = cx - mean2d[k, 0]
                    dy = cy - mean2d[k, 1]
                    if dx * dx + dy * dy > rad2[k]:
                        continue
                    power = -0.5 * (conic[k, 0] * dx * dx + conic[k, 2] * dy * dy) \
                        - conic[k, 1] * dx * dy
                    if power > 0.0 or power < power_min[k]:
                        continue
                    alpha = opac[k] * np.exp(power)
                    if alpha > ALPHA_CLAMP:
                        alpha = ALPHA_CLAMP
                    if alpha < ALPHA_SKIP:
                        continue
                    test_T = T * (1.0 - alpha)
                    if test_T < STOP_TRANSMITTANCE:
                        stop = k
                        break
                    c0 += rgb[k, 0] * alpha * T
                    c1 += rgb[k, 1] * alpha * T
                    c2 += rgb[k, 2] * alpha * T
                    T = test_T
                    contributors += 1
                image[py, px, 0] = c0 + T * bg[0]
                image[py, px, 1] = c1 + T * bg[1]
                image[py, px, 2] = c2 + T * bg[2]
                trans[py, px] = T
                n_contrib[py, px] = contributors
                walk_end[py, px] = stop


@njit(cache=True, parallel=True)
def backward_tiles(tile_starts, mean2d, conic, rgb, opac,
                   power_min, rad2, width, height, tile_size, tiles_x, bg,
                   trans, walk_end, grad_image, entry_grads):
    n_tiles = tile_starts.shape[0] - 1
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        x0 = tx * tile_size
        y0 = ty * tile_size
        x1 = min(x0 + tile_size, width)
        y1 = min(y0 + tile_size, height)
        start = tile_starts[t]
        for py in range(y0, y1):
            cy = py + 0.5
            for px in range(x0, x1):
                cx = px + 0.5
                g0 = grad_image[py, px, 0]
                g1 = grad_image[py, px, 1]
                g2 = grad_image[py, px, 2]
                if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
                    continue
                T_cur = trans[py, px]
                # Suffix sum of composited radiance behind the walker,
                # seeded with the background term.
                s0 = bg[0] * T_cur
                s1 = bg[1] * T_cur
                s2 = bg[2] * T_cur
                stop = walk_end[py, px]
                for k in range(stop - 1, start - 1, -1):
                    dx = cx - mean2d[k, 0]
                    dy = cy - mean2d[k, 1]
                    if dx * dx + dy * dy > rad2[k]:
                        continue
                    ca = conic[k, 0]
                    cb = conic[k, 1]
                    cc = conic[k, 2]
                    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                    if power > 0.0 or power < power_min[k]:
                        continue
                    sigma = np.exp(power)
                    alpha_raw = opac[k] * sigma
                    clamped = alpha_raw > ALPHA_CLAMP
                    alpha = ALPHA_CLAMP if clamped else alpha_raw
                    if alpha < ALPHA_SKIP:
                        continue
                    T_before = T_cur / (1.0 - alpha)
                    r0 = rgb[k, 0]
                    r1 = rgb[k, 1]
                    r2 = rgb[k, 2]
                    inv_om = 1.0 / (1.0 - alpha)
                    g_alpha = g0 * (r0 * T_before - s0 * inv_om) \
                        + g1 * (r1 * T_before - s1 * inv_om) \
                        + g2 * (r2 * T_before - s2 * inv_om)
                    aT = alpha * T_before
                    entry_grads[k, 6] += g0 * aT
                    entry_grads[k, 7] += g1 * aT
                    entry_grads[k, 8] += g2 * aT
                    if not clamped:
                        g_power = g_alpha * alpha
                        entry_grads[k, 0] += g_power * (ca * dx + cb * dy)
                        entry_grads[k, 1] += g_power * (cb * dx + cc * dy)
                        entry_grads[k, 2] += g_power * (-0.5 * dx * dx)
                        entry_grads[k, 3] += g_power * (-dx * dy)
                        entry_grads[k, 4] += g_power * (-0.5 * dy * dy)
                        entry_grads[k, 5] += g_alpha * sigma
                    s0 += r0 * aT
                    s1 += r1 * aT
                    s2 += r2 * aT
                    T_cur = T_before


@njit(cache=True)
def reference_pixels(order, mean2d, conic, rgb, opac, width, height, bg, image):
    """Brute-force compositing: every Gaussian at every pixel, no tiles,
    no early termination."""
    n = order.shape[0]
    for py in range(height):
        cy = py + 0.5
        for px in range(width):
            cx = px + 0.5
            T = 1.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            for k in range(n):
                g = order[k]
                dx = cx - mean2d[g, 0]
                dy = cy - mean2d[g, 1]
                power = -0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) \
                    - conic[g, 1] * dx * dy
                if power > 0.0:
                    continue
                alpha = opac[g] * np.exp(power)
                if alpha > ALPHA_CLAMP:
                    alpha = ALPHA_CLAMP
                if alpha < ALPHA_SKIP:
                    continue
                c0 += rgb[g, 0] * alpha * T
                c1 += rgb[g, 1] * alpha * T
                c2 += rgb[g, 2] * alpha * T
                T *= 1.0 - alpha
            image[py, px, 0] = c0 + T * bg[0]
            image[py, px, 1] = c1 + T * bg[1]
            image[py, px, 2] = c2 + T * bg[2]


@njit(cache=True, parallel=True)
def sep_filter2d(img, kernel, tmp, out):
    """Separable correlation over the spatial axes of (C, H, W) with zero
    padding; writes the full 'same' result into out."""
    C, H, W = img.shape
    K = kernel.shape[0]
    half = K // 2
    for c in prange(C):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                lo = max(0, half - i)
                hi = min(K, H + half - i)
                for k in range(lo, hi):
                    acc += kernel[k] * img[c, i + k - half, j]
                tmp[c, i, j] = acc
        for i in range(H):
            for j in range(W):
                acc = 0.0
                lo = max(0, half - j)
                hi = min(K, W + half - j)
                for k in range(lo, hi):
                    acc += kernel[k] * tmp[c, i, j + k - half]
                out[c, i, j] = acc
