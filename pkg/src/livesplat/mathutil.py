"""Small numerical helpers shared across modules.

Quaternion conventions: (w, x, y, z) component order, right-handed rotations.
Batched routines take (N, 4) arrays and return (N, 3, 3) stacks; everything
runs in float64 regardless of the caller's storage dtype.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

# Degree-0 real spherical harmonic constant, 1 / (2 sqrt(pi)).
SH_C0 = 0.28209479177387814

_SH1 = 0.4886025119029199
_SH2A = 1.0925484305920792
_SH20 = 0.31539156525252005
_SH22 = 0.5462742152960396


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def inverse_sigmoid(y):
    y = np.asarray(y, dtype=np.float64)
    return np.log(y / (1.0 - y))


def normalize_quaternions(q):
    """Return unit quaternions and their norms; raises on zero norm."""
    q = np.asarray(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise ValueError("quaternion with zero or non-finite norm")
    return q / norms, norms[..., 0]


def quat_to_rotmat(q):
    """Unit quaternions (..., 4) to rotation matrices (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def rotmat_grad_to_quat_grad(q_raw, grad_R):
    """Chain dL/dR back to raw (unnormalized) quaternion components.

    The rotation is built from the normalized quaternion, so the gradient
    includes the Jacobian of the normalization.
    """
    q_raw = np.asarray(q_raw, dtype=np.float64)
    qn, norms = normalize_quaternions(q_raw)
    w, x, y, z = qn[..., 0], qn[..., 1], qn[..., 2], qn[..., 3]
    G = np.asarray(grad_R, dtype=np.float64)

    g00, g01, g02 = G[..., 0, 0], G[..., 0, 1], G[..., 0, 2]
    g10, g11, g12 = G[..., 1, 0], G[..., 1, 1], G[..., 1, 2]
    g20, g21, g22 = G[..., 2, 0], G[..., 2, 1], G[..., 2, 2]

    gw = 2.0 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    gx = 2.0 * (y * g01 + z * g02 + y * g10 - 2.0 * x * g11 - w * g12
                + z * g20 + w * g21 - 2.0 * x * g22)
    gy = 2.0 * (-2.0 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12
                - w * g20 + z * g21 - 2.0 * y * g22)
    gz = 2.0 * (-2.0 * z * g00 - w * g01 + x * g02 + w * g10 - 2.0 * z * g11
                + y * g12 + x * g20 + y * g21)
    g_unit = np.stack([gw, gx, gy, gz], axis=-1)

    dot = np.sum(qn * g_unit, axis=-1, keepdims=True)
    return (g_unit - qn * dot) / norms[..., None]


def sh_basis_deg2(dirs):
    """Real SH basis values up to degree 2 for unit directions (N, 3) -> (N, 9)."""
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = np.empty(d.shape[:-1] + (9,), dtype=np.float64)
    out[..., 0] = SH_C0
    out[..., 1] = _SH1 * y
    out[..., 2] = _SH1 * z
    out[..., 3] = _SH1 * x
    out[..., 4] = _SH2A * x * y
    out[..., 5] = _SH2A * y * z
    out[..., 6] = _SH20 * (3.0 * z * z - 1.0)
    out[..., 7] = _SH2A * x * z
    out[..., 8] = _SH22 * (x * x - y * y)
    return out


def as_f32(a):
    return np.ascontiguousarray(a, dtype=np.float32)


def as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)
