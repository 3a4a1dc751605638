"""Numba kernel for the classical ground-truth mesh rasterizer.

Kept separate from the Gaussian splatting kernels so the scene generator
shares no code path with the renderer under test.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def raster_mesh(tri2d, tri_z, tri_uv_over_z, tri_inv_z, tri_shade_over_z,
                width, height, tex, bg, image):
    """Classical z-buffered triangle rasterizer with perspective-correct
    UV/shade interpolation and bilinear texture sampling.

    tri2d: (F, 3, 2) projected vertices, tri_z: (F, 3) camera depths,
    tri_uv_over_z: (F, 3, 2), tri_inv_z: (F, 3), tri_shade_over_z: (F, 3).
    """
    zbuf = np.full((height, width), 1e30)
    th, tw = tex.shape[0], tex.shape[1]
    for py in range(height):
        for px in range(width):
            image[py, px, 0] = bg[0]
            image[py, px, 1] = bg[1]
            image[py, px, 2] = bg[2]
    for f in range(tri2d.shape[0]):
        if tri_z[f, 0] <= 0.01 or tri_z[f, 1] <= 0.01 or tri_z[f, 2] <= 0.01:
            continue
        ax, ay = tri2d[f, 0, 0], tri2d[f, 0, 1]
        bx, by = tri2d[f, 1, 0], tri2d[f, 1, 1]
        cx_, cy_ = tri2d[f, 2, 0], tri2d[f, 2, 1]
        area = (bx - ax) * (cy_ - ay) - (by - ay) * (cx_ - ax)
        if area == 0.0:
            continue
        inv_area = 1.0 / area
        x0 = max(0, int(np.floor(min(ax, min(bx, cx_)) - 0.5)))
        x1 = min(width - 1, int(np.ceil(max(ax, max(bx, cx_)) + 0.5)))
        y0 = max(0, int(np.floor(min(ay, min(by, cy_)) - 0.5)))
        y1 = min(height - 1, int(np.ceil(max(ay, max(by, cy_)) + 0.5)))
        for py in range(y0, y1 + 1):
            sy = py + 0.5
            for px in range(x0, x1 + 1):
                sx = px + 0.5
                w0 = ((bx - sx) * (cy_ - sy) - (by - sy) * (cx_ - sx)) * inv_area
                w1 = ((cx_ - sx) * (ay - sy) - (cy_ - sy) * (ax - sx)) * inv_area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                inv_z = w0 * tri_inv_z[f, 0] + w1 * tri_inv_z[f, 1] + w2 * tri_inv_z[f, 2]
                z = 1.0 / inv_z
                if z >= zbuf[py, px]:
                    continue
                zbuf[py, px] = z
                u = (w0 * tri_uv_over_z[f, 0, 0] + w1 * tri_uv_over_z[f, 1, 0]
                     + w2 * tri_uv_over_z[f, 2, 0]) * z
                v = (w0 * tri_uv_over_z[f, 0, 1] + w1 * tri_uv_over_z[f, 1, 1]
                     + w2 * tri_uv_over_z[f, 2, 1]) * z
                shade = (w0 * tri_shade_over_z[f, 0] + w1 * tri_shade_over_z[f, 1]
                         + w2 * tri_shade_over_z[f, 2]) * z
                # bilinear texture fetch with clamped u/v
                fu = min(max(u, 0.0), 1.0) * (tw - 1)
                fv = min(max(v, 0.0), 1.0) * (th - 1)
                iu = int(fu)
                iv = int(fv)
                iu2 = min(iu + 1, tw - 1)
                iv2 = min(iv + 1, th - 1)
                du = fu - iu
                dv = fv - iv
                for ch in range(3):
                    t00 = tex[iv, iu, ch]
                    t01 = tex[iv, iu2, ch]
                    t10 = tex[iv2, iu, ch]
                    t11 = tex[iv2, iu2, ch]
                    val = (t00 * (1 - du) + t01 * du) * (1 - dv) \
                        + (t10 * (1 - du) + t11 * du) * dv
                    val *= shade
                    if val > 1.0:
                        val = 1.0
                    image[py, px, ch] = val
