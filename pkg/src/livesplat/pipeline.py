"""Full render chain for an anchored cloud, forward and backward.

Ties together deformation (offset -> world mean through the anchor frame),
covariance construction, projection, and tile compositing, and chains image
gradients all the way back to the raw per-point attributes. The mask enters
multiplicatively on effective scale and opacity; its gradient is reported
w.r.t. the mask *value*, so the caller applies the straight-through factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .anchors import MeshFrame, WorldPlacement, to_world
from .cloud import GaussianCloud
from .mathutil import (SH_C0, as_f64, normalize_quaternions, quat_to_rotmat,
                       rotmat_grad_to_quat_grad, sigmoid)
from .render import (Camera, RenderOutput, covariance_backward,
                     covariance_forward, project, projection_backward,
                     rasterize_backward_screen, rasterize_forward)


@dataclass
class RenderContext:
    """Saved state linking one forward render to its backward pass."""

    output: RenderOutput
    placement: WorldPlacement
    cloud: GaussianCloud
    mask: np.ndarray
    scale_unmasked: np.ndarray
    scale_eff: np.ndarray
    opacity_unmasked: np.ndarray
    opacity_eff: np.ndarray
    rot_world: np.ndarray
    point_rotmats: np.ndarray
    colors: np.ndarray

    @property
    def image(self):
        return self.output.image


@dataclass
class ParamGrads:
    """Gradients of a scalar loss w.r.t. raw cloud attributes.

    ``mask`` is d loss / d mask-value; multiply by the straight-through
    sigmoid derivative to reach mask_logit. ``mean_world`` is kept for the
    positional-gradient accumulator.
    """

    offset: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: np.ndarray
    color_dc: np.ndarray
    mask: np.ndarray
    mean_world: np.ndarray

    @staticmethod
    def zeros(n):
        return ParamGrads(
            offset=np.zeros((n, 3)), log_scale=np.zeros((n, 3)),
            rotation=np.zeros((n, 4)), opacity_logit=np.zeros(n),
            color_dc=np.zeros((n, 3)), mask=np.zeros(n),
            mean_world=np.zeros((n, 3)))

    def add_(self, other, weight=1.0):
        self.offset += weight * other.offset
        self.log_scale += weight * other.log_scale
        self.rotation += weight * other.rotation
        self.opacity_logit += weight * other.opacity_logit
        self.color_dc += weight * other.color_dc
        self.mask += weight * other.mask
        self.mean_world += weight * other.mean_world
        return self

    def scale_(self, weight):
        self.offset *= weight
        self.log_scale *= weight
        self.rotation *= weight
        self.opacity_logit *= weight
        self.color_dc *= weight
        self.mask *= weight
        self.mean_world *= weight
        return self


@dataclass
class CloudDerived:
    """Frame-independent activations, computed once per training step."""

    mask: np.ndarray
    point_rotmats: np.ndarray
    scale_unmasked: np.ndarray
    opacity_unmasked: np.ndarray
    scale_eff: np.ndarray
    opacity_eff: np.ndarray
    colors: np.ndarray


def derive_cloud_state(cloud: GaussianCloud, mask=None) -> CloudDerived:
    n = cloud.count
    if mask is None:
        mask = np.ones(n)
    mask = as_f64(mask).reshape(n)
    qn, _ = normalize_quaternions(cloud.rotation)
    point_rotmats = quat_to_rotmat(qn)
    scale_unmasked = np.exp(as_f64(cloud.log_scale))
    opacity_unmasked = sigmoid(cloud.opacity_logit)
    return CloudDerived(
        mask=mask, point_rotmats=point_rotmats,
        scale_unmasked=scale_unmasked, opacity_unmasked=opacity_unmasked,
        scale_eff=scale_unmasked * mask[:, None],
        opacity_eff=opacity_unmasked * mask,
        colors=np.clip(0.5 + SH_C0 * as_f64(cloud.color_dc), 0.0, 1.0))


def render_cloud(cloud: GaussianCloud, frame: MeshFrame, camera: Camera,
                 background, mask=None, derived: CloudDerived = None,
                 prev_rotations=None) -> RenderContext:
    """Render an anchored cloud for one frame and keep backward state.

    ``mask`` is the per-point mask value in [0, 1]; pass the straight-through
    forward (binary) values in training, or smooth sigmoid values when
    checking the mask gradient path.
    """
    if derived is None:
        derived = derive_cloud_state(cloud, mask)
    placement = to_world(cloud, frame, point_rotmats=derived.point_rotmats,
                         prev_rotations=prev_rotations)
    sigma = covariance_forward(placement.rot_world, derived.scale_eff)
    proj = project(placement.mean, sigma, derived.colors,
                   derived.opacity_eff, camera)
    output = rasterize_forward(proj, background)
    return RenderContext(
        output=output, placement=placement, cloud=cloud, mask=derived.mask,
        scale_unmasked=derived.scale_unmasked, scale_eff=derived.scale_eff,
        opacity_unmasked=derived.opacity_unmasked,
        opacity_eff=derived.opacity_eff,
        rot_world=placement.rot_world, point_rotmats=derived.point_rotmats,
        colors=derived.colors)


def render_cloud_backward(ctx: RenderContext, grad_image) -> ParamGrads:
    """Analytic gradients of sum(grad_image * image) w.r.t. raw attributes.

    Culled and skipped points receive exact zeros. Points whose mask is zero
    get zero gradient to scale/opacity through the render path; their mask
    gradient through this path is also zero because they never composite.
    """
    screen = rasterize_backward_screen(ctx.output, grad_image)
    proj = ctx.output.projected
    g_mu, g_sigma = projection_backward(proj, screen.mean2d, screen.conic)

    g_rotworld, g_scale_eff = covariance_backward(
        ctx.rot_world, ctx.scale_eff, g_sigma)

    Ft = np.swapaxes(ctx.placement.frame_rot, 1, 2)
    # mu = pose(anchor + F_anchor offset): dL/doffset = F^T dL/dmu
    g_offset = (Ft @ g_mu[:, :, None])[:, :, 0]
    # R_world = F R(q): dL/dR(q) = F^T dL/dR_world
    g_Rq = Ft @ g_rotworld
    g_quat = rotmat_grad_to_quat_grad(ctx.cloud.rotation, g_Rq)

    g_log_scale = g_scale_eff * ctx.scale_eff
    g_mask = np.sum(g_scale_eff * ctx.scale_unmasked, axis=1)
    g_opacity_logit = screen.opacity * ctx.mask * ctx.opacity_unmasked \
        * (1.0 - ctx.opacity_unmasked)
    g_mask += screen.opacity * ctx.opacity_unmasked

    interior = (ctx.colors > 0.0) & (ctx.colors < 1.0)
    g_color_dc = SH_C0 * screen.rgb * interior

    return ParamGrads(offset=g_offset, log_scale=g_log_scale, rotation=g_quat,
                      opacity_logit=g_opacity_logit, color_dc=g_color_dc,
                      mask=g_mask, mean_world=g_mu)


def render_cloud_reference(cloud: GaussianCloud, frame: MeshFrame,
                           camera: Camera, background, mask=None) -> np.ndarray:
    """Brute-force render of an anchored cloud (oracle path)."""
    from .render import render_reference
    n = cloud.count
    if mask is None:
        mask = np.ones(n)
    mask = as_f64(mask).reshape(n)
    qn, _ = normalize_quaternions(cloud.rotation)
    placement = to_world(cloud, frame, point_rotmats=quat_to_rotmat(qn))
    scale_eff = np.exp(as_f64(cloud.log_scale)) * mask[:, None]
    opacity_eff = sigmoid(cloud.opacity_logit) * mask
    sigma = covariance_forward(placement.rot_world, scale_eff)
    colors = np.clip(0.5 + SH_C0 * as_f64(cloud.color_dc), 0.0, 1.0)
    return render_reference(placement.mean, sigma, colors, opacity_eff,
                            camera, background)
