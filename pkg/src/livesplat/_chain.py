"""Fused per-point kernels: anchor frame -> world -> projection, and back.

Production fast path for training. The unfused numpy implementations in
anchors.py / render.py / pipeline.py remain the reference; tests assert both
paths agree to float64 roundoff, and the gradient suite checks this chain
against finite differences.
"""

import numpy as np
from numba import njit, prange

ALPHA_SKIP = 1.0 / 255.0


@njit(cache=True, parallel=True)
def chain_forward(verts, faces, face_idx, bary, offset, quat, scale_eff,
                  opacity_eff, pose_r, pose_t, cam_r, cam_t,
                  fx, fy, cx, cy, near, reg, floor,
                  valid, anchor_pos, frame_rot, t_cam, mean2d, conic,
                  depth, rad2, power_min, degen):
    n = face_idx.shape[0]
    for p in prange(n):
        f = face_idx[p]
        i0 = faces[f, 0]
        i1 = faces[f, 1]
        i2 = faces[f, 2]
        b0 = bary[p, 0]
        b1 = bary[p, 1]
        b2 = bary[p, 2]
        ax = b0 * verts[i0, 0] + b1 * verts[i1, 0] + b2 * verts[i2, 0]
        ay = b0 * verts[i0, 1] + b1 * verts[i1, 1] + b2 * verts[i2, 1]
        az = b0 * verts[i0, 2] + b1 * verts[i1, 2] + b2 * verts[i2, 2]
        anchor_pos[p, 0] = ax
        anchor_pos[p, 1] = ay
        anchor_pos[p, 2] = az

        e1x = verts[i1, 0] - verts[i0, 0]
        e1y = verts[i1, 1] - verts[i0, 1]
        e1z = verts[i1, 2] - verts[i0, 2]
        e2x = verts[i2, 0] - verts[i0, 0]
        e2y = verts[i2, 1] - verts[i0, 1]
        e2z = verts[i2, 2] - verts[i0, 2]
        nx = e1y * e2z - e1z * e2y
        ny = e1z * e2x - e1x * e2z
        nz = e1x * e2y - e1y * e2x
        nl = np.sqrt(nx * nx + ny * ny + nz * nz)
        tl = np.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
        A = np.empty((3, 3))
        if nl <= 2e-10 or tl <= 1e-12:
            degen[p] = 1
            for i in range(3):
                for j in range(3):
                    A[i, j] = 1.0 if i == j else 0.0
        else:
            degen[p] = 0
            nx /= nl
            ny /= nl
            nz /= nl
            tx = e1x / tl
            ty = e1y / tl
            tz = e1z / tl
            bx = ny * tz - nz * ty
            by = nz * tx - nx * tz
            bz = nx * ty - ny * tx
            A[0, 0] = tx
            A[1, 0] = ty
            A[2, 0] = tz
            A[0, 1] = bx
            A[1, 1] = by
            A[2, 1] = bz
            A[0, 2] = nx
            A[1, 2] = ny
            A[2, 2] = nz

        # F = pose_r @ A
        Fm = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                Fm[i, j] = (pose_r[i, 0] * A[0, j] + pose_r[i, 1] * A[1, j]
                            + pose_r[i, 2] * A[2, j])
                frame_rot[p, i, j] = Fm[i, j]

        # mu = pose_r @ (anchor + A @ offset) + pose_t
        ox = offset[p, 0]
        oy = offset[p, 1]
        oz = offset[p, 2]
        lx = ax + A[0, 0] * ox + A[0, 1] * oy + A[0, 2] * oz
        ly = ay + A[1, 0] * ox + A[1, 1] * oy + A[1, 2] * oz
        lz = az + A[2, 0] * ox + A[2, 1] * oy + A[2, 2] * oz
        mx = pose_r[0, 0] * lx + pose_r[0, 1] * ly + pose_r[0, 2] * lz + pose_t[0]
        my = pose_r[1, 0] * lx + pose_r[1, 1] * ly + pose_r[1, 2] * lz + pose_t[1]
        mz = pose_r[2, 0] * lx + pose_r[2, 1] * ly + pose_r[2, 2] * lz + pose_t[2]

        tcx = cam_r[0, 0] * mx + cam_r[0, 1] * my + cam_r[0, 2] * mz + cam_t[0]
        tcy = cam_r[1, 0] * mx + cam_r[1, 1] * my + cam_r[1, 2] * mz + cam_t[1]
        tcz = cam_r[2, 0] * mx + cam_r[2, 1] * my + cam_r[2, 2] * mz + cam_t[2]
        t_cam[p, 0] = tcx
        t_cam[p, 1] = tcy
        t_cam[p, 2] = tcz
        depth[p] = tcz
        if tcz <= near:
            valid[p] = 0
            mean2d[p, 0] = 0.0
            mean2d[p, 1] = 0.0
            conic[p, 0] = 0.0
            conic[p, 1] = 0.0
            conic[p, 2] = 0.0
            rad2[p] = -1.0
            power_min[p] = 1.0
            continue
        valid[p] = 1

        # R(q) from the normalized quaternion
        qw = quat[p, 0]
        qx = quat[p, 1]
        qy = quat[p, 2]
        qz = quat[p, 3]
        qn = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        qw /= qn
        qx /= qn
        qy /= qn
        qz /= qn
        Rq = np.empty((3, 3))
        Rq[0, 0] = 1.0 - 2.0 * (qy * qy + qz * qz)
        Rq[0, 1] = 2.0 * (qx * qy - qw * qz)
        Rq[0, 2] = 2.0 * (qx * qz + qw * qy)
        Rq[1, 0] = 2.0 * (qx * qy + qw * qz)
        Rq[1, 1] = 1.0 - 2.0 * (qx * qx + qz * qz)
        Rq[1, 2] = 2.0 * (qy * qz - qw * qx)
        Rq[2, 0] = 2.0 * (qx * qz - qw * qy)
        Rq[2, 1] = 2.0 * (qy * qz + qw * qx)
        Rq[2, 2] = 1.0 - 2.0 * (qx * qx + qy * qy)

        Rw = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                Rw[i, j] = (Fm[i, 0] * Rq[0, j] + Fm[i, 1] * Rq[1, j]
                            + Fm[i, 2] * Rq[2, j])

        s0 = scale_eff[p, 0]
        s1 = scale_eff[p, 1]
        s2 = scale_eff[p, 2]
        sig = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                sig[i, j] = (Rw[i, 0] * Rw[j, 0] * s0 * s0
                             + Rw[i, 1] * Rw[j, 1] * s1 * s1
                             + Rw[i, 2] * Rw[j, 2] * s2 * s2)
            sig[i, i] += reg

        # V = cam_r sig cam_r^T
        tmp = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                tmp[i, j] = (cam_r[i, 0] * sig[0, j] + cam_r[i, 1] * sig[1, j]
                             + cam_r[i, 2] * sig[2, j])
        V = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                V[i, j] = (tmp[i, 0] * cam_r[j, 0] + tmp[i, 1] * cam_r[j, 1]
                           + tmp[i, 2] * cam_r[j, 2])

        iz = 1.0 / tcz
        j00 = fx * iz
        j02 = -fx * tcx * iz * iz
        j11 = fy * iz
        j12 = -fy * tcy * iz * iz
        a = j00 * j00 * V[0, 0] + 2.0 * j00 * j02 * V[0, 2] \
            + j02 * j02 * V[2, 2] + floor
        b = j00 * (V[0, 1] * j11 + V[0, 2] * j12) \
            + j02 * (V[2, 1] * j11 + V[2, 2] * j12)
        c = j11 * j11 * V[1, 1] + 2.0 * j11 * j12 * V[1, 2] \
            + j12 * j12 * V[2, 2] + floor
        det = a * c - b * b
        inv_det = 1.0 / det
        conic[p, 0] = c * inv_det
        conic[p, 1] = -b * inv_det
        conic[p, 2] = a * inv_det
        mid = 0.5 * (a + c)
        disc = mid * mid - det
        lam = mid + np.sqrt(disc if disc > 0.0 else 0.0)
        op = opacity_eff[p]
        if op < 1e-300:
            op = 1e-300
        ln_term = np.log(op / ALPHA_SKIP)
        power_min[p] = -ln_term
        if ln_term > 0.0:
            rad2[p] = 2.0 * ln_term * lam
        else:
            rad2[p] = -1.0
        mean2d[p, 0] = fx * tcx * iz + cx
        mean2d[p, 1] = fy * tcy * iz + cy


@njit(cache=True, parallel=True)
def chain_backward(face_idx, quat, scale_eff, valid, frame_rot, t_cam, conic,
                   cam_r, fx, fy, reg,
                   g_mean2d, g_conic,
                   g_mu_out, g_offset_out, g_quat_out, g_scale_out):
    n = face_idx.shape[0]
    for p in prange(n):
        if valid[p] == 0:
            for j in range(3):
                g_mu_out[p, j] = 0.0
                g_offset_out[p, j] = 0.0
                g_scale_out[p, j] = 0.0
            for j in range(4):
                g_quat_out[p, j] = 0.0
            continue

        qw = quat[p, 0]
        qx = quat[p, 1]
        qy = quat[p, 2]
        qz = quat[p, 3]
        qn = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        qw /= qn
        qx /= qn
        qy /= qn
        qz /= qn
        Rq = np.empty((3, 3))
        Rq[0, 0] = 1.0 - 2.0 * (qy * qy + qz * qz)
        Rq[0, 1] = 2.0 * (qx * qy - qw * qz)
        Rq[0, 2] = 2.0 * (qx * qz + qw * qy)
        Rq[1, 0] = 2.0 * (qx * qy + qw * qz)
        Rq[1, 1] = 1.0 - 2.0 * (qx * qx + qz * qz)
        Rq[1, 2] = 2.0 * (qy * qz - qw * qx)
        Rq[2, 0] = 2.0 * (qx * qz - qw * qy)
        Rq[2, 1] = 2.0 * (qy * qz + qw * qx)
        Rq[2, 2] = 1.0 - 2.0 * (qx * qx + qy * qy)

        Fm = frame_rot[p]
        Rw = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                Rw[i, j] = (Fm[i, 0] * Rq[0, j] + Fm[i, 1] * Rq[1, j]
                            + Fm[i, 2] * Rq[2, j])
        s0 = scale_eff[p, 0]
        s1 = scale_eff[p, 1]
        s2 = scale_eff[p, 2]
        sig = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                sig[i, j] = (Rw[i, 0] * Rw[j, 0] * s0 * s0
                             + Rw[i, 1] * Rw[j, 1] * s1 * s1
                             + Rw[i, 2] * Rw[j, 2] * s2 * s2)
            sig[i, i] += reg
        tmp = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                tmp[i, j] = (cam_r[i, 0] * sig[0, j] + cam_r[i, 1] * sig[1, j]
                             + cam_r[i, 2] * sig[2, j])
        V = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                V[i, j] = (tmp[i, 0] * cam_r[j, 0] + tmp[i, 1] * cam_r[j, 1]
                           + tmp[i, 2] * cam_r[j, 2])

        tcx = t_cam[p, 0]
        tcy = t_cam[p, 1]
        tcz = t_cam[p, 2]
        iz = 1.0 / tcz
        iz2 = iz * iz
        j00 = fx * iz
        j02 = -fx * tcx * iz2
        j11 = fy * iz
        j12 = -fy * tcy * iz2

        ca = conic[p, 0]
        cb = conic[p, 1]
        cc = conic[p, 2]
        gc0 = g_conic[p, 0]
        gc1 = 0.5 * g_conic[p, 1]
        gc2 = g_conic[p, 2]
        # G2 = -Cf Gc Cf with Cf = [[ca, cb], [cb, cc]]
        # first Cf @ Gc
        m00 = ca * gc0 + cb * gc1
        m01 = ca * gc1 + cb * gc2
        m10 = cb * gc0 + cc * gc1
        m11 = cb * gc1 + cc * gc2
        g2_00 = -(m00 * ca + m01 * cb)
        g2_01 = -(m00 * cb + m01 * cc)
        g2_10 = -(m10 * ca + m11 * cb)
        g2_11 = -(m10 * cb + m11 * cc)

        # gJ = 2 G2 J V; J rows: (j00, 0, j02), (0, j11, j12)
        jv00 = j00 * V[0, 0] + j02 * V[2, 0]
        jv01 = j00 * V[0, 1] + j02 * V[2, 1]
        jv02 = j00 * V[0, 2] + j02 * V[2, 2]
        jv10 = j11 * V[1, 0] + j12 * V[2, 0]
        jv11 = j11 * V[1, 1] + j12 * V[2, 1]
        jv12 = j11 * V[1, 2] + j12 * V[2, 2]
        gJ00 = 2.0 * (g2_00 * jv00 + g2_01 * jv10)
        gJ02 = 2.0 * (g2_00 * jv02 + g2_01 * jv12)
        gJ11 = 2.0 * (g2_10 * jv01 + g2_11 * jv11)
        gJ12 = 2.0 * (g2_10 * jv02 + g2_11 * jv12)

        # gV = J^T G2 J (3x3 symmetric)
        gV = np.empty((3, 3))
        gV[0, 0] = j00 * g2_00 * j00
        gV[0, 1] = j00 * g2_01 * j11
        gV[0, 2] = j00 * (g2_00 * j02 + g2_01 * j12)
        gV[1, 1] = j11 * g2_11 * j11
        gV[1, 2] = j11 * (g2_10 * j02 + g2_11 * j12)
        gV[2, 2] = (j02 * (g2_00 * j02 + g2_01 * j12)
                    + j12 * (g2_10 * j02 + g2_11 * j12))
        gV[1, 0] = gV[0, 1]
        gV[2, 0] = gV[0, 2]
        gV[2, 1] = gV[1, 2]

        # gSigma = cam_r^T gV cam_r
        for i in range(3):
            for j in range(3):
                tmp[i, j] = (cam_r[0, i] * gV[0, j] + cam_r[1, i] * gV[1, j]
                             + cam_r[2, i] * gV[2, j])
        gSig = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                gSig[i, j] = (tmp[i, 0] * cam_r[0, j] + tmp[i, 1] * cam_r[1, j]
                              + tmp[i, 2] * cam_r[2, j])

        # gRw = 2 gSig Rw diag(s^2); g_s[k] = 2 s[k] (Rw^T gSig Rw)[k,k]
        gsr = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                gsr[i, j] = (gSig[i, 0] * Rw[0, j] + gSig[i, 1] * Rw[1, j]
                             + gSig[i, 2] * Rw[2, j])
        s_sq0 = s0 * s0
        s_sq1 = s1 * s1
        s_sq2 = s2 * s2
        gRw = np.empty((3, 3))
        for i in range(3):
            gRw[i, 0] = 2.0 * gsr[i, 0] * s_sq0
            gRw[i, 1] = 2.0 * gsr[i, 1] * s_sq1
            gRw[i, 2] = 2.0 * gsr[i, 2] * s_sq2
        d0 = (Rw[0, 0] * gsr[0, 0] + Rw[1, 0] * gsr[1, 0] + Rw[2, 0] * gsr[2, 0])
        d1 = (Rw[0, 1] * gsr[0, 1] + Rw[1, 1] * gsr[1, 1] + Rw[2, 1] * gsr[2, 1])
        d2 = (Rw[0, 2] * gsr[0, 2] + Rw[1, 2] * gsr[1, 2] + Rw[2, 2] * gsr[2, 2])
        g_scale_out[p, 0] = 2.0 * s0 * d0
        g_scale_out[p, 1] = 2.0 * s1 * d1
        g_scale_out[p, 2] = 2.0 * s2 * d2

        gm0 = g_mean2d[p, 0]
        gm1 = g_mean2d[p, 1]
        gt0 = gm0 * fx * iz + gJ02 * (-fx * iz2)
        gt1 = gm1 * fy * iz + gJ12 * (-fy * iz2)
        gt2 = (-gm0 * fx * tcx * iz2 - gm1 * fy * tcy * iz2
               + gJ00 * (-fx * iz2) + gJ02 * (2.0 * fx * tcx * iz2 * iz)
               + gJ11 * (-fy * iz2) + gJ12 * (2.0 * fy * tcy * iz2 * iz))

        # g_mu = cam_r^T gt
        gmu0 = cam_r[0, 0] * gt0 + cam_r[1, 0] * gt1 + cam_r[2, 0] * gt2
        gmu1 = cam_r[0, 1] * gt0 + cam_r[1, 1] * gt1 + cam_r[2, 1] * gt2
        gmu2 = cam_r[0, 2] * gt0 + cam_r[1, 2] * gt1 + cam_r[2, 2] * gt2
        g_mu_out[p, 0] = gmu0
        g_mu_out[p, 1] = gmu1
        g_mu_out[p, 2] = gmu2

        # g_offset = F^T g_mu
        g_offset_out[p, 0] = Fm[0, 0] * gmu0 + Fm[1, 0] * gmu1 + Fm[2, 0] * gmu2
        g_offset_out[p, 1] = Fm[0, 1] * gmu0 + Fm[1, 1] * gmu1 + Fm[2, 1] * gmu2
        g_offset_out[p, 2] = Fm[0, 2] * gmu0 + Fm[1, 2] * gmu1 + Fm[2, 2] * gmu2

        # gRq = F^T gRw
        gRq = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                gRq[i, j] = (Fm[0, i] * gRw[0, j] + Fm[1, i] * gRw[1, j]
                             + Fm[2, i] * gRw[2, j])

        # quaternion chain through R(q-normalized)
        g00 = gRq[0, 0]
        g01 = gRq[0, 1]
        g02 = gRq[0, 2]
        g10 = gRq[1, 0]
        g11 = gRq[1, 1]
        g12 = gRq[1, 2]
        g20 = gRq[2, 0]
        g21 = gRq[2, 1]
        g22 = gRq[2, 2]
        gw = 2.0 * (-qz * g01 + qy * g02 + qz * g10 - qx * g12
                    - qy * g20 + qx * g21)
        gx = 2.0 * (qy * g01 + qz * g02 + qy * g10 - 2.0 * qx * g11
                    - qw * g12 + qz * g20 + qw * g21 - 2.0 * qx * g22)
        gy = 2.0 * (-2.0 * qy * g00 + qx * g01 + qw * g02 + qx * g10
                    + qz * g12 - qw * g20 + qz * g21 - 2.0 * qy * g22)
        gz = 2.0 * (-2.0 * qz * g00 - qw * g01 + qx * g02 + qw * g10
                    - 2.0 * qz * g11 + qy * g12 + qx * g20 + qy * g21)
        dot = qw * gw + qx * gx + qy * gy + qz * gz
        g_quat_out[p, 0] = (gw - qw * dot) / qn
        g_quat_out[p, 1] = (gx - qx * dot) / qn
        g_quat_out[p, 2] = (gy - qy * dot) / qn
        g_quat_out[p, 3] = (gz - qz * dot) / qn
