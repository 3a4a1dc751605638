"""Gaussian point-cloud data model and raw-to-effective attribute activation.

A cloud is a structure of arrays over N points. Raw attributes live in
unconstrained space (log scale, logit opacity, logit mask) and are stored as
float32; every numerical routine promotes to float64 internally. World-space
placement is not stored here: each point carries a binding to the anchor mesh
and its mean is derived per frame (see :mod:`livesplat.anchors`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .anchors import AnchorBindings
from .errors import InvalidInputError, DegenerateGaussianError
from .mathutil import (SH_C0, as_f32, as_f64, normalize_quaternions,
                       quat_to_rotmat, sigmoid, inverse_sigmoid)

QUAT_NORM_TOL = 1e-6
COV_REG = 1e-8
DEFAULT_MASK_LOGIT = -4.0
DEFAULT_OPACITY_LOGIT = float(inverse_sigmoid(0.8))


@dataclass
class GaussianCloud:
    """Per-point attribute arrays plus the anchor binding of every point.

    offset        (N, 3) local displacement in the anchor tangent frame
    log_scale     (N, 3) log of the per-axis scales
    rotation      (N, 4) quaternion (w, x, y, z), unit up to storage rounding
    opacity_logit (N,)   pre-sigmoid opacity
    color_dc      (N, 3) degree-0 SH color coefficients
    mask_logit    (N,)   pre-binarization simplification mask
    anchor        per-point mesh binding (face, barycentric, group id)
    """

    offset: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: np.ndarray
    color_dc: np.ndarray
    mask_logit: np.ndarray
    anchor: AnchorBindings

    def __post_init__(self):
        self.offset = as_f32(self.offset).reshape(-1, 3)
        self.log_scale = as_f32(self.log_scale).reshape(-1, 3)
        self.rotation = as_f32(self.rotation).reshape(-1, 4)
        self.opacity_logit = as_f32(self.opacity_logit).reshape(-1)
        self.color_dc = as_f32(self.color_dc).reshape(-1, 3)
        self.mask_logit = as_f32(self.mask_logit).reshape(-1)

    @property
    def count(self) -> int:
        return self.offset.shape[0]

    ATTR_NAMES = ("offset", "log_scale", "rotation", "opacity_logit",
                  "color_dc", "mask_logit")

    def attribute_arrays(self):
        return {name: getattr(self, name) for name in self.ATTR_NAMES}

    def validate(self):
        n = self.count
        for name, arr in self.attribute_arrays().items():
            if arr.shape[0] != n:
                raise InvalidInputError(f"{name} length {arr.shape[0]} != count {n}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contains non-finite values")
        if len(self.anchor) != n:
            raise InvalidInputError("anchor binding length mismatch")
        norms = np.linalg.norm(as_f64(self.rotation), axis=1)
        if np.any(np.abs(norms - 1.0) > QUAT_NORM_TOL):
            raise InvalidInputError("rotation quaternions are not unit length")
        return self

    def renormalize_rotations(self):
        qn, _ = normalize_quaternions(self.rotation)
        self.rotation = as_f32(qn)

    def select(self, indices) -> "GaussianCloud":
        """New cloud with the given point subset (copies)."""
        idx = np.asarray(indices)
        return GaussianCloud(
            offset=self.offset[idx],
            log_scale=self.log_scale[idx],
            rotation=self.rotation[idx],
            opacity_logit=self.opacity_logit[idx],
            color_dc=self.color_dc[idx],
            mask_logit=self.mask_logit[idx],
            anchor=self.anchor.select(idx),
        )

    def copy(self) -> "GaussianCloud":
        return self.select(np.arange(self.count))


@dataclass
class EffectiveAttributes:
    """Activated scales/opacities and their masked counterparts."""

    scale: np.ndarray
    opacity: np.ndarray
    masked_scale: np.ndarray
    masked_opacity: np.ndarray


def activate(cloud: GaussianCloud, binarized_mask) -> EffectiveAttributes:
    """Apply activations and the binary simplification mask.

    The mask multiplies the effective scale and opacity; points masked to
    zero contribute nothing to compositing. Gradients through the mask factor
    are handled by the straight-through rule in :mod:`livesplat.adapt`.
    """
    m = as_f64(binarized_mask).reshape(-1)
    if m.shape[0] != cloud.count:
        raise InvalidInputError("mask length does not match cloud count")
    scale = np.exp(as_f64(cloud.log_scale))
    opacity = sigmoid(cloud.opacity_logit)
    return EffectiveAttributes(
        scale=scale,
        opacity=opacity,
        masked_scale=scale * m[:, None],
        masked_opacity=opacity * m,
    )


def build_covariance(rotation, scale):
    """Covariance from a unit quaternion and positive per-axis scales.

    Accepts a single (4,)/(3,) pair or batches (N, 4)/(N, 3); returns
    (3, 3) or (N, 3, 3) with sigma = R diag(s^2) R^T.
    """
    q = as_f64(rotation)
    s = as_f64(scale)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    s = np.atleast_2d(s)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(s))):
        raise InvalidInputError("non-finite rotation or scale")
    if np.any(s <= 0.0):
        raise InvalidInputError("scale components must be positive")
    norms = np.linalg.norm(q, axis=1)
    if np.any(np.abs(norms - 1.0) > QUAT_NORM_TOL):
        raise InvalidInputError("quaternion is not unit length")
    R = quat_to_rotmat(q / norms[:, None])
    RS = R * s[:, None, :]
    cov = RS @ np.swapaxes(RS, 1, 2)
    return cov[0] if single else cov


def eval_gaussian(x, mean, cov):
    """Unnormalized Gaussian density exp(-0.5 (x-mu)^T sigma^-1 (x-mu))."""
    x = as_f64(x)
    mean = as_f64(mean)
    cov = as_f64(cov)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(mean))
            and np.all(np.isfinite(cov))):
        raise InvalidInputError("non-finite input to eval_gaussian")
    reg = cov + COV_REG * np.eye(3)
    try:
        diff = x - mean
        sol = np.linalg.solve(reg, diff)
    except np.linalg.LinAlgError as exc:
        raise DegenerateGaussianError("covariance singular after regularization") from exc
    power = -0.5 * float(diff @ sol)
    return float(np.exp(power))


def color_of(color_dc, view_direction=None):
    """Degree-0 SH color evaluation; the view direction is ignored.

    RGB = clamp(0.5 + C0 * color_dc) into [0, 1].
    """
    dc = as_f64(color_dc)
    return np.clip(0.5 + SH_C0 * dc, 0.0, 1.0)


def make_cloud(bindings: AnchorBindings, log_scale_init, *,
               opacity_logit=DEFAULT_OPACITY_LOGIT,
               mask_logit=DEFAULT_MASK_LOGIT,
               color_dc=None) -> GaussianCloud:
    """Fresh cloud for a set of anchor bindings.

    Offsets start at zero (points sit on the surface), rotations at identity.
    """
    n = len(bindings)
    log_scale = np.broadcast_to(as_f64(log_scale_init).reshape(-1, 3) if
                                np.ndim(log_scale_init) else
                                np.full((1, 3), float(log_scale_init)), (n, 3))
    rotation = np.zeros((n, 4))
    rotation[:, 0] = 1.0
    if color_dc is None:
        color_dc = np.zeros((n, 3))
    return GaussianCloud(
        offset=np.zeros((n, 3)),
        log_scale=np.array(log_scale),
        rotation=rotation,
        opacity_logit=np.full(n, opacity_logit),
        color_dc=color_dc,
        mask_logit=np.full(n, mask_logit),
        anchor=bindings,
    )
