"""Training losses with analytic gradients.

DSSIM uses the standard 11x11 Gaussian window (sigma 1.5) evaluated over
valid windows only, so its image gradient is the exact adjoint of the
windowing. The dark-channel and normal-consistency terms exist for the
warm-up phase.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import correlate1d

from . import _kernels
from .anchors import face_adjacency
from .errors import InvalidInputError
from .mathutil import as_f64

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
_PAD = SSIM_WINDOW // 2


def _ssim_kernel():
    half = _PAD
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return k / k.sum()


_KERNEL = _ssim_kernel()


def _check_pair(a, b):
    a = as_f64(a)
    b = as_f64(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def loss_l1(rendered, target, with_grad=False):
    """Mean absolute per-channel difference."""
    a, b = _check_pair(rendered, target)
    diff = a - b
    value = float(np.abs(diff).mean())
    if not with_grad:
        return value
    grad = np.sign(diff) / diff.size
    return value, grad


def _filter_same(img):
    out = np.empty_like(img)
    tmp = np.empty_like(img)
    _kernels.sep_filter2d(np.ascontiguousarray(img), _KERNEL, tmp, out)
    return out


def _filter_valid(img):
    """Separable Gaussian over the spatial axes of (C, H, W), valid region."""
    return _filter_same(img)[:, _PAD:-_PAD, _PAD:-_PAD]


def _scatter_valid(field, shape):
    """Exact adjoint of :func:`_filter_valid` (symmetric kernel)."""
    z = np.zeros(shape)
    z[:, _PAD:-_PAD, _PAD:-_PAD] = field
    return _filter_same(z)


def loss_dssim(rendered, target, with_grad=False):
    """(1 - SSIM) / 2 with Gaussian windowing and unit dynamic range."""
    x0, y0 = _check_pair(rendered, target)
    if x0.ndim == 2:
        x0 = x0[:, :, None]
        y0 = y0[:, :, None]
    H, W, C = x0.shape
    if H < SSIM_WINDOW or W < SSIM_WINDOW:
        raise InvalidInputError("image smaller than the SSIM window")
    x = np.ascontiguousarray(np.moveaxis(x0, 2, 0))
    y = np.ascontiguousarray(np.moveaxis(y0, 2, 0))
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    count = C * (H - 2 * _PAD) * (W - 2 * _PAD)

    ux = _filter_valid(x)
    uy = _filter_valid(y)
    uxx = _filter_valid(x * x)
    uxy = _filter_valid(x * y)
    uyy = _filter_valid(y * y)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy
    a1 = 2.0 * ux * uy + c1
    a2 = 2.0 * vxy + c2
    b1 = ux * ux + uy * uy + c1
    b2 = vx + vy + c2
    s = (a1 * a2) / (b1 * b2)
    ssim = float(s.sum()) / count
    value = float((1.0 - ssim) / 2.0)
    if not with_grad:
        return value

    ds_da1 = a2 / (b1 * b2)
    ds_da2 = a1 / (b1 * b2)
    ds_db1 = -s / b1
    ds_db2 = -s / b2
    ds_dux = 2.0 * uy * ds_da1 + 2.0 * ux * ds_db1 \
        - 2.0 * ux * ds_db2 - 2.0 * uy * ds_da2
    ds_duxx = ds_db2
    ds_duxy = 2.0 * ds_da2
    gx = _scatter_valid(ds_dux, (C, H, W)) \
        + 2.0 * x * _scatter_valid(ds_duxx, (C, H, W)) \
        + y * _scatter_valid(ds_duxy, (C, H, W))
    return value, np.moveaxis(-0.5 * gx / count, 0, 2)


def ssim(rendered, target):
    return 1.0 - 2.0 * loss_dssim(rendered, target)


def loss_dark_channel(texture, with_grad=False):
    """Mean over texels of the channel-min of 3x3 min-pooled texture values.

    Keeps the learnable texture free of baseline brightness so the
    illumination coefficients absorb it instead.
    """
    tex = as_f64(texture)
    if tex.ndim != 3 or tex.shape[2] != 3:
        raise InvalidInputError("texture must be (T, T, 3)")
    T0, T1 = tex.shape[0], tex.shape[1]
    padded = np.pad(tex, ((1, 1), (1, 1), (0, 0)), mode="edge")
    win = sliding_window_view(padded, (3, 3), axis=(0, 1))  # (T0,T1,3,3,3)
    flat = win.reshape(T0, T1, 3 * 9)
    value = float(flat.min(axis=2).mean())
    if not with_grad:
        return value
    arg = flat.argmin(axis=2)
    ch = arg // 9
    wy = (arg % 9) // 3
    wx = arg % 3
    yy, xx = np.meshgrid(np.arange(T0), np.arange(T1), indexing="ij")
    src_y = np.clip(yy + wy - 1, 0, T0 - 1)
    src_x = np.clip(xx + wx - 1, 0, T1 - 1)
    grad = np.zeros_like(tex)
    np.add.at(grad, (src_y.ravel(), src_x.ravel(), ch.ravel()),
              1.0 / (T0 * T1))
    return value, grad


def _face_normals_raw(vertices, faces):
    tri = as_f64(vertices)[faces]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    c = np.cross(e1, e2)
    norm = np.linalg.norm(c, axis=1, keepdims=True)
    norm = np.maximum(norm, 1e-30)
    return c, norm, e1, e2


def loss_normal_consistency(vertices, faces, pairs=None, with_grad=False):
    """Mean over adjacent face pairs of 1 - cos(angle between normals)."""
    faces = np.asarray(faces)
    if pairs is None:
        pairs = face_adjacency(faces)
    if pairs.shape[0] == 0:
        return (0.0, np.zeros_like(as_f64(vertices))) if with_grad else 0.0
    c, norm, e1, e2 = _face_normals_raw(vertices, faces)
    nhat = c / norm
    na = nhat[pairs[:, 0]]
    nb = nhat[pairs[:, 1]]
    value = float((1.0 - np.sum(na * nb, axis=1)).mean())
    if not with_grad:
        return value

    P = pairs.shape[0]
    g_nhat = np.zeros_like(nhat)
    np.add.at(g_nhat, pairs[:, 0], -nb / P)
    np.add.at(g_nhat, pairs[:, 1], -na / P)
    # d nhat / d c = (I - nhat nhat^T) / |c|
    gc = (g_nhat - nhat * np.sum(nhat * g_nhat, axis=1, keepdims=True)) / norm
    g_e1 = np.cross(e2, gc)
    g_e2 = np.cross(gc, e1)
    grad = np.zeros_like(as_f64(vertices))
    np.add.at(grad, faces[:, 1], g_e1)
    np.add.at(grad, faces[:, 2], g_e2)
    np.add.at(grad, faces[:, 0], -(g_e1 + g_e2))
    return value, grad
