"""Differentiable CPU splatting: projection, tile rasterization, backward.

Forward path per frame:
  world means/covariances -> perspective projection with the EWA Jacobian
  -> 16x16 pixel tiles, front-to-back alpha compositing (Eq. numerics match
  the reference renderer exactly up to early termination).

The backward pass recomputes per-pixel compositing in reverse order from the
saved per-pixel contributor ranges, so memory stays O(points + pixels). All
gradients are analytic; the acceptance suite checks them against central
finite differences.

Conventions: pixel (row i, col j) has center (j + 0.5, i + 0.5); camera space
is x right, y down, z forward; a Gaussian is culled when its camera depth is
<= 0.01.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .camera import Camera
from .errors import InvalidInputError, OracleTooLargeError, StaleIntermediatesError
from .mathutil import SH_C0, as_f64

TILE_SIZE = 16
NEAR_PLANE = 0.01
COV2D_FLOOR = 0.3
COV3D_REG = 1e-8
# Radius at which alpha falls to exactly 1/255 for a fully opaque Gaussian;
# everything outside is skipped by the alpha threshold anyway, so tiling
# introduces no discrepancy against the brute-force oracle.
RADIUS_FACTOR = float(np.sqrt(2.0 * np.log(255.0)))
ORACLE_MAX_POINTS = 10_000


@dataclass
class ProjectedGaussians:
    """Screen-space Gaussians plus the intermediates the backward needs."""

    mean2d: np.ndarray        # (M, 2)
    conic: np.ndarray         # (M, 3) upper-triangular of inv(cov2d)
    cov2d: np.ndarray         # (M, 3) upper-triangular, floor included
    depth: np.ndarray         # (M,)
    radius: np.ndarray        # (M,)
    rgb: np.ndarray           # (M, 3)
    opacity: np.ndarray       # (M,)
    source_index: np.ndarray  # (M,) index into the input arrays
    t_cam: np.ndarray         # (M, 3) camera-space means
    jac: np.ndarray           # (M, 2, 3) projection Jacobians
    v_cam: np.ndarray         # (M, 3, 3) camera-space covariances
    power_min: np.ndarray     # (M,) skip threshold on the exponent
    rad2: np.ndarray          # (M,) squared influence radius
    n_source: int
    camera: Camera

    def __len__(self):
        return self.mean2d.shape[0]


def covariance_forward(rot_world, scale_eff):
    """World covariances R diag(s^2) R^T + reg, batched."""
    R = as_f64(rot_world)
    s = as_f64(scale_eff)
    RS = R * s[:, None, :]
    cov = RS @ np.swapaxes(RS, 1, 2)
    cov += COV3D_REG * np.eye(3)
    return cov


def covariance_backward(rot_world, scale_eff, grad_sigma):
    """Chain dL/dSigma to the world rotation and effective scales."""
    R = as_f64(rot_world)
    s = as_f64(scale_eff)
    G = as_f64(grad_sigma)
    Gs = 0.5 * (G + np.swapaxes(G, 1, 2))
    RD = R * (s * s)[:, None, :]
    grad_R = 2.0 * (Gs @ RD)
    inner = np.swapaxes(R, 1, 2) @ Gs @ R
    diag = np.einsum("nkk->nk", inner)
    grad_s = 2.0 * s * diag
    return grad_R, grad_s


def project(means, covariances, rgb, opacity, camera: Camera) -> ProjectedGaussians:
    """Perspective-project Gaussians onto the image plane.

    cov2d = J W Sigma W^T J^T with J the projection Jacobian at the mean and
    W the camera rotation; a floor is added to the diagonal so sub-pixel
    Gaussians stay visible and differentiable. Points behind the near plane
    are culled; `source_index` maps outputs back to inputs.
    """
    means = as_f64(means).reshape(-1, 3)
    covs = as_f64(covariances).reshape(-1, 3, 3)
    rgb = as_f64(rgb).reshape(-1, 3)
    opacity = as_f64(opacity).reshape(-1)
    n = means.shape[0]
    R = camera.rotation
    t = camera.translation

    t_cam = means @ R.T + t
    keep = t_cam[:, 2] > NEAR_PLANE
    idx = np.nonzero(keep)[0]
    t_cam = t_cam[idx]
    x, y, z = t_cam[:, 0], t_cam[:, 1], t_cam[:, 2]
    inv_z = 1.0 / z

    m = idx.shape[0]
    J = np.zeros((m, 2, 3))
    J[:, 0, 0] = camera.fx * inv_z
    J[:, 0, 2] = -camera.fx * x * inv_z * inv_z
    J[:, 1, 1] = camera.fy * inv_z
    J[:, 1, 2] = -camera.fy * y * inv_z * inv_z

    V = R @ covs[idx] @ R.T
    M = J @ V @ np.swapaxes(J, 1, 2)
    a = M[:, 0, 0] + COV2D_FLOOR
    b = M[:, 0, 1]
    c = M[:, 1, 1] + COV2D_FLOOR

    det = a * c - b * b
    inv_det = 1.0 / det
    conic = np.stack([c * inv_det, -b * inv_det, a * inv_det], axis=1)
    cov2d = np.stack([a, b, c], axis=1)

    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    # support radius where alpha falls to 1/255 for this opacity; beyond it
    # every pixel is skipped by the alpha threshold, so tighter tiles do not
    # change the composite
    ln_term = np.log(np.maximum(opacity[idx], 1e-300) / _kernels.ALPHA_SKIP)
    radius = np.sqrt(2.0 * np.maximum(ln_term, 0.0) * lam_max)

    mean2d = np.stack([camera.fx * x * inv_z + camera.cx,
                       camera.fy * y * inv_z + camera.cy], axis=1)

    opac = opacity[idx]
    # exact pre-test for the alpha < 1/255 skip: alpha < skip iff
    # power < log(skip / opacity)
    power_min = np.log(_kernels.ALPHA_SKIP / np.maximum(opac, 1e-300))
    return ProjectedGaussians(
        mean2d=mean2d, conic=conic, cov2d=cov2d, depth=z.copy(),
        radius=radius, rgb=rgb[idx], opacity=opac,
        source_index=idx, t_cam=t_cam, jac=J, v_cam=V,
        power_min=power_min, rad2=radius * radius,
        n_source=n, camera=camera)


def _build_tiles(proj: ProjectedGaussians):
    """Per-tile entry lists sorted front-to-back, ties broken by index."""
    cam = proj.camera
    tiles_x = (cam.width + TILE_SIZE - 1) // TILE_SIZE
    tiles_y = (cam.height + TILE_SIZE - 1) // TILE_SIZE
    n_tiles = tiles_x * tiles_y
    m = len(proj)
    if m == 0:
        return (np.zeros(n_tiles + 1, dtype=np.int64),
                np.zeros(0, dtype=np.int64), tiles_x, tiles_y)

    x0 = np.clip(((proj.mean2d[:, 0] - proj.radius) // TILE_SIZE).astype(np.int64),
                 0, tiles_x - 1)
    x1 = np.clip(((proj.mean2d[:, 0] + proj.radius) // TILE_SIZE).astype(np.int64),
                 0, tiles_x - 1)
    y0 = np.clip(((proj.mean2d[:, 1] - proj.radius) // TILE_SIZE).astype(np.int64),
                 0, tiles_y - 1)
    y1 = np.clip(((proj.mean2d[:, 1] + proj.radius) // TILE_SIZE).astype(np.int64),
                 0, tiles_y - 1)
    # Cull gaussians entirely off screen.
    on = ((proj.mean2d[:, 0] + proj.radius >= 0)
          & (proj.mean2d[:, 0] - proj.radius < cam.width)
          & (proj.mean2d[:, 1] + proj.radius >= 0)
          & (proj.mean2d[:, 1] - proj.radius < cam.height)
          & np.isfinite(proj.radius))

    wx = np.where(on, x1 - x0 + 1, 0)
    wy = np.where(on, y1 - y0 + 1, 0)
    counts = wx * wy
    total = int(counts.sum())
    offsets = np.concatenate([[0], np.cumsum(counts)])
    gauss_of_entry = np.repeat(np.arange(m, dtype=np.int64), counts)
    within = np.arange(total, dtype=np.int64) - offsets[gauss_of_entry]
    wxg = wx[gauss_of_entry]
    tx = x0[gauss_of_entry] + within % wxg
    ty = y0[gauss_of_entry] + within // wxg
    entry_tile = ty * tiles_x + tx

    depth_rank = np.empty(m, dtype=np.int64)
    depth_rank[np.argsort(proj.depth, kind="stable")] = np.arange(m)
    key = entry_tile * (np.int64(m) + 1) + depth_rank[gauss_of_entry]
    order = np.argsort(key, kind="stable")
    entry_tile = entry_tile[order]
    entry_gauss = gauss_of_entry[order]
    tile_starts = np.searchsorted(entry_tile, np.arange(n_tiles + 1)).astype(np.int64)
    return tile_starts, entry_gauss, tiles_x, tiles_y


@dataclass
class RenderOutput:
    """Forward image plus everything the backward pass needs."""

    image: np.ndarray          # (H, W, 3)
    transmittance: np.ndarray  # (H, W)
    n_contrib: np.ndarray      # (H, W) composited contributors per pixel
    background: np.ndarray     # (3,)
    projected: Optional[ProjectedGaussians]
    _walk_end: Optional[np.ndarray]
    _tile_starts: Optional[np.ndarray]
    _entry_gauss: Optional[np.ndarray]
    _entry_data: Optional[tuple]
    _tiles_x: int

    def release(self):
        """Drop backward intermediates; subsequent backward calls fail."""
        self.projected = None
        self._walk_end = None
        self._tile_starts = None
        self._entry_gauss = None
        self._entry_data = None


def rasterize_forward(proj: ProjectedGaussians, background) -> RenderOutput:
    """Front-to-back alpha compositing over 16x16 tiles.

    alpha_i = o'_i exp(-0.5 d^T conic d), clamped at 0.99; contributions with
    alpha < 1/255 are skipped; accumulation stops once transmittance drops
    below 1e-4; remaining transmittance multiplies the background.
    """
    cam = proj.camera
    if np.any(~np.isfinite(proj.depth)):
        raise InvalidInputError("non-finite depth in projected gaussians")
    bg = as_f64(background).reshape(3)
    tile_starts, entry_gauss, tiles_x, tiles_y = _build_tiles(proj)
    e_mean2d = np.ascontiguousarray(proj.mean2d[entry_gauss])
    e_conic = np.ascontiguousarray(proj.conic[entry_gauss])
    e_rgb = np.ascontiguousarray(proj.rgb[entry_gauss])
    e_opac = np.ascontiguousarray(proj.opacity[entry_gauss])
    e_pmin = np.ascontiguousarray(proj.power_min[entry_gauss])
    e_rad2 = np.ascontiguousarray(proj.rad2[entry_gauss])
    H, W = cam.height, cam.width
    image = np.empty((H, W, 3))
    trans = np.empty((H, W))
    n_contrib = np.zeros((H, W), dtype=np.int32)
    walk_end = np.zeros((H, W), dtype=np.int64)
    _kernels.forward_tiles(
        tile_starts, e_mean2d, e_conic, e_rgb, e_opac, e_pmin, e_rad2,
        W, H, TILE_SIZE, tiles_x, bg, image, trans, n_contrib, walk_end)
    return RenderOutput(image=image, transmittance=trans, n_contrib=n_contrib,
                        background=bg, projected=proj, _walk_end=walk_end,
                        _tile_starts=tile_starts, _entry_gauss=entry_gauss,
                        _entry_data=(e_mean2d, e_conic, e_rgb, e_opac,
                                     e_pmin, e_rad2),
                        _tiles_x=tiles_x)


@dataclass
class ScreenGrads:
    """Gradients w.r.t. screen-space quantities, indexed by source point."""

    mean2d: np.ndarray    # (N, 2)
    conic: np.ndarray     # (N, 3)
    opacity: np.ndarray   # (N,)
    rgb: np.ndarray       # (N, 3)


def rasterize_backward_screen(out: RenderOutput, grad_image) -> ScreenGrads:
    """Backward through compositing only, to screen-space parameters."""
    if out.projected is None or out._walk_end is None:
        raise StaleIntermediatesError("render intermediates were released")
    proj = out.projected
    grad_image = as_f64(grad_image)
    if grad_image.shape != out.image.shape:
        raise StaleIntermediatesError(
            f"grad shape {grad_image.shape} does not match image {out.image.shape}")
    cam = proj.camera
    e_mean2d, e_conic, e_rgb, e_opac, e_pmin, e_rad2 = out._entry_data
    entry_grads = np.zeros((out._entry_gauss.shape[0], 9))
    _kernels.backward_tiles(
        out._tile_starts, e_mean2d, e_conic, e_rgb, e_opac, e_pmin, e_rad2,
        cam.width, cam.height, TILE_SIZE, out._tiles_x, out.background,
        out.transmittance, out._walk_end, np.ascontiguousarray(grad_image),
        entry_grads)

    n = proj.n_source
    src = proj.source_index[out._entry_gauss]
    cols = [np.bincount(src, weights=entry_grads[:, c], minlength=n)
            for c in range(9)]
    return ScreenGrads(mean2d=np.stack(cols[0:2], axis=1),
                       conic=np.stack(cols[2:5], axis=1),
                       opacity=cols[5],
                       rgb=np.stack(cols[6:9], axis=1))


def projection_backward(proj: ProjectedGaussians, g_mean2d, g_conic):
    """Chain screen-space gradients to world means and world covariances.

    Takes per-source arrays, returns (grad_mean_world (N,3),
    grad_sigma_world (N,3,3)); culled points get exact zeros.
    """
    n = proj.n_source
    idx = proj.source_index
    gm = as_f64(g_mean2d)[idx]
    gc = as_f64(g_conic)[idx]
    cam = proj.camera
    m = len(proj)

    conic_full = np.empty((m, 2, 2))
    conic_full[:, 0, 0] = proj.conic[:, 0]
    conic_full[:, 0, 1] = proj.conic[:, 1]
    conic_full[:, 1, 0] = proj.conic[:, 1]
    conic_full[:, 1, 1] = proj.conic[:, 2]
    Gc = np.empty((m, 2, 2))
    Gc[:, 0, 0] = gc[:, 0]
    Gc[:, 0, 1] = 0.5 * gc[:, 1]
    Gc[:, 1, 0] = 0.5 * gc[:, 1]
    Gc[:, 1, 1] = gc[:, 2]
    G2 = -(conic_full @ Gc @ conic_full)

    J = proj.jac
    V = proj.v_cam
    gJ = 2.0 * (G2 @ J @ V)
    gV = np.swapaxes(J, 1, 2) @ G2 @ J
    R = cam.rotation
    g_sigma_m = R.T @ gV @ R

    x, y, z = proj.t_cam[:, 0], proj.t_cam[:, 1], proj.t_cam[:, 2]
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    gt = np.zeros((m, 3))
    gt[:, 0] = gm[:, 0] * cam.fx * inv_z
    gt[:, 1] = gm[:, 1] * cam.fy * inv_z
    gt[:, 2] = -gm[:, 0] * cam.fx * x * inv_z2 - gm[:, 1] * cam.fy * y * inv_z2
    gt[:, 0] += gJ[:, 0, 2] * (-cam.fx * inv_z2)
    gt[:, 1] += gJ[:, 1, 2] * (-cam.fy * inv_z2)
    gt[:, 2] += (gJ[:, 0, 0] * (-cam.fx * inv_z2)
                 + gJ[:, 0, 2] * (2.0 * cam.fx * x * inv_z2 * inv_z)
                 + gJ[:, 1, 1] * (-cam.fy * inv_z2)
                 + gJ[:, 1, 2] * (2.0 * cam.fy * y * inv_z2 * inv_z))
    g_mu_m = gt @ R

    g_mean_world = np.zeros((n, 3))
    g_sigma = np.zeros((n, 3, 3))
    g_mean_world[idx] = g_mu_m
    g_sigma[idx] = g_sigma_m
    return g_mean_world, g_sigma


def render_reference(means, covariances, rgb, opacity, camera: Camera,
                     background) -> np.ndarray:
    """Brute-force oracle: full per-pixel sort over all points, no tiles,
    no early termination, double-precision accumulation."""
    means = as_f64(means).reshape(-1, 3)
    if means.shape[0] > ORACLE_MAX_POINTS:
        raise OracleTooLargeError(
            f"{means.shape[0]} points exceeds the oracle cap {ORACLE_MAX_POINTS}")
    proj = project(means, covariances, rgb, opacity, camera)
    bg = as_f64(background).reshape(3)
    order = np.lexsort((proj.source_index, proj.depth))
    image = np.empty((camera.height, camera.width, 3))
    _kernels.reference_pixels(order.astype(np.int64),
                              np.ascontiguousarray(proj.mean2d),
                              np.ascontiguousarray(proj.conic),
                              np.ascontiguousarray(proj.rgb),
                              np.ascontiguousarray(proj.opacity),
                              camera.width, camera.height, bg, image)
    return image
