"""Mesh-anchored placement of Gaussian points.

Every point is bound to a triangle of the anchor mesh through barycentric
coordinates. Per frame, the binding yields a surface position and an
orthonormal tangent-bitangent-normal frame; the point's local offset is
expressed in that frame, so points ride the deforming surface. Motion is
always measured in canonical (pose-free) space against the first-frame
reference, which makes every quantity here invariant to rigid pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .errors import (BindingError, DegenerateFrameError, InvalidInputError,
                     InvalidMeshError)
from .mathutil import as_f32, as_f64

MIN_FACE_AREA = 1e-10
BARY_TOL = 1e-6


@dataclass
class AnchorBindings:
    """Structure-of-arrays binding of N points to mesh faces."""

    face: np.ndarray        # (N,) int32 face index
    bary: np.ndarray        # (N, 3) float32 barycentric coordinates
    group: np.ndarray       # (N,) int32 anchor-group id (clone lineage)
    bound: np.ndarray       # (N,) bool

    def __post_init__(self):
        self.face = np.ascontiguousarray(self.face, dtype=np.int32).reshape(-1)
        self.bary = as_f32(self.bary).reshape(-1, 3)
        self.group = np.ascontiguousarray(self.group, dtype=np.int32).reshape(-1)
        self.bound = np.ascontiguousarray(self.bound, dtype=bool).reshape(-1)

    def __len__(self):
        return self.face.shape[0]

    def validate(self):
        sums = as_f64(self.bary).sum(axis=1)
        if np.any(np.abs(sums - 1.0) > BARY_TOL):
            raise InvalidInputError("barycentric coordinates do not sum to 1")
        if np.any(as_f64(self.bary) < -BARY_TOL):
            raise InvalidInputError("negative barycentric coordinate")
        return self

    def select(self, indices) -> "AnchorBindings":
        idx = np.asarray(indices)
        return AnchorBindings(self.face[idx], self.bary[idx],
                              self.group[idx], self.bound[idx])

    @staticmethod
    def concat(a: "AnchorBindings", b: "AnchorBindings") -> "AnchorBindings":
        return AnchorBindings(
            np.concatenate([a.face, b.face]),
            np.concatenate([a.bary, b.bary]),
            np.concatenate([a.group, b.group]),
            np.concatenate([a.bound, b.bound]),
        )


@dataclass
class AnchorMesh:
    """Canonical triangle mesh with per-vertex UV.

    ``vertex_displacement`` holds the warm-up geometry correction; the
    displaced canonical vertices are what every frame deformation is applied
    relative to.
    """

    vertices: np.ndarray            # (V, 3) float64, canonical positions
    faces: np.ndarray               # (F, 3) int32
    uv: np.ndarray                  # (V, 2) float64 in [0, 1]^2
    vertex_displacement: Optional[np.ndarray] = None    # (V, 3) float64

    def __post_init__(self):
        self.vertices = as_f64(self.vertices).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32).reshape(-1, 3)
        self.uv = as_f64(self.uv).reshape(-1, 2)
        if self.vertex_displacement is not None:
            self.vertex_displacement = as_f64(self.vertex_displacement).reshape(-1, 3)

    @property
    def vertex_count(self):
        return self.vertices.shape[0]

    @property
    def face_count(self):
        return self.faces.shape[0]

    def displaced_vertices(self) -> np.ndarray:
        if self.vertex_displacement is None:
            return self.vertices
        return self.vertices + self.vertex_displacement

    def validate(self):
        if self.uv.shape[0] != self.vertex_count:
            raise InvalidMeshError("uv count does not match vertex count")
        if self.faces.min(initial=0) < 0 or self.faces.max(initial=-1) >= self.vertex_count:
            raise InvalidMeshError("face indices out of range")
        areas = face_areas(self.vertices, self.faces)
        if np.any(areas <= MIN_FACE_AREA):
            raise InvalidMeshError("degenerate canonical face")
        return self

    def bounding_radius(self) -> float:
        v = self.displaced_vertices()
        center = v.mean(axis=0)
        return float(np.linalg.norm(v - center, axis=1).max())


@dataclass
class MeshFrame:
    """One tracked frame: deformed canonical vertices plus rigid pose."""

    mesh: AnchorMesh
    vertices: np.ndarray                # (V, 3) float64, canonical space
    pose_rotation: np.ndarray = None    # (3, 3)
    pose_translation: np.ndarray = None  # (3,)
    timestamp: float = 0.0

    def __post_init__(self):
        self.vertices = as_f64(self.vertices).reshape(-1, 3)
        if self.pose_rotation is None:
            self.pose_rotation = np.eye(3)
        if self.pose_translation is None:
            self.pose_translation = np.zeros(3)
        self.pose_rotation = as_f64(self.pose_rotation).reshape(3, 3)
        self.pose_translation = as_f64(self.pose_translation).reshape(3)
        if self.vertices.shape[0] != self.mesh.vertex_count:
            raise InvalidMeshError("frame vertex count does not match mesh")


def face_areas(vertices, faces):
    v = as_f64(vertices)
    tri = v[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def vertex_normals(vertices, faces):
    """Area-weighted unit vertex normals."""
    v = as_f64(vertices)
    tri = v[faces]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    out = np.zeros_like(v)
    for k in range(3):
        np.add.at(out, faces[:, k], fn)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return out / norms


def face_adjacency(faces):
    """(P, 2) array of face-index pairs sharing an edge."""
    faces = np.asarray(faces)
    edges = {}
    pairs = []
    for f in range(faces.shape[0]):
        a, b, c = faces[f]
        for u, w in ((a, b), (b, c), (c, a)):
            key = (min(u, w), max(u, w))
            other = edges.get(key)
            if other is None:
                edges[key] = f
            else:
                pairs.append((other, f))
    return np.asarray(pairs, dtype=np.int32).reshape(-1, 2)


def _uv_barycentric(p, a, b, c):
    v0 = b - a
    v1 = c - a
    v2 = p - a
    d00 = v0 @ v0
    d01 = v0 @ v1
    d11 = v1 @ v1
    d20 = v2 @ v0
    d21 = v2 @ v1
    denom = d00 * d11 - d01 * d01
    if abs(denom) < 1e-18:
        return None
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    u = 1.0 - v - w
    return np.array([u, v, w])


class _UvLocator:
    """Grid-bucketed point-in-triangle lookup over the UV chart."""

    def __init__(self, mesh: AnchorMesh):
        uv = mesh.uv
        tri = uv[mesh.faces]
        v0 = tri[:, 1] - tri[:, 0]
        v1 = tri[:, 2] - tri[:, 0]
        self._uv_area = 0.5 * np.abs(v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]).sum()
        if self._uv_area <= 1e-12:
            raise InvalidMeshError("empty UV chart")
        self._tri = tri
        self._lo = tri.min(axis=1)
        self._hi = tri.max(axis=1)
        self._gmin = self._lo.min(axis=0)
        self._gmax = self._hi.max(axis=0)
        span = np.maximum(self._gmax - self._gmin, 1e-9)
        self._res = int(min(128, max(8, np.sqrt(mesh.face_count))))
        self._cell = span / self._res
        self._buckets = [[] for _ in range(self._res * self._res)]
        lo_idx = np.clip(((self._lo - self._gmin) / self._cell).astype(int), 0, self._res - 1)
        hi_idx = np.clip(((self._hi - self._gmin) / self._cell).astype(int), 0, self._res - 1)
        for f in range(mesh.face_count):
            for gy in range(lo_idx[f, 1], hi_idx[f, 1] + 1):
                for gx in range(lo_idx[f, 0], hi_idx[f, 0] + 1):
                    self._buckets[gy * self._res + gx].append(f)

    def locate(self, p):
        """Face index and barycentric for UV point p, or (None, None)."""
        g = (p - self._gmin) / self._cell
        gx, gy = int(g[0]), int(g[1])
        if not (0 <= gx < self._res and 0 <= gy < self._res):
            return None, None
        for f in self._buckets[gy * self._res + gx]:
            tri = self._tri[f]
            bary = _uv_barycentric(p, tri[0], tri[1], tri[2])
            if bary is not None and np.all(bary >= -1e-9):
                return f, np.clip(bary, 0.0, None) / max(np.clip(bary, 0.0, None).sum(), 1e-30)
        return None, None


def bind_uv_points(mesh: AnchorMesh, uv_points) -> AnchorBindings:
    """Bind explicit UV-space points to mesh faces.

    Points outside the chart raise; use :func:`sample_uv_anchors` for
    redraw-on-miss sampling.
    """
    locator = _UvLocator(mesh)
    uv_points = as_f64(uv_points).reshape(-1, 2)
    faces, barys = [], []
    for p in uv_points:
        f, b = locator.locate(p)
        if f is None:
            raise InvalidMeshError(f"uv point {p} is outside the chart")
        faces.append(f)
        barys.append(b)
    n = len(faces)
    return AnchorBindings(np.asarray(faces), np.asarray(barys),
                          np.arange(n, dtype=np.int32), np.ones(n, dtype=bool))


def sample_uv_anchors(mesh: AnchorMesh, n: int, seed: int = 0) -> AnchorBindings:
    """Draw n anchor bindings from a low-discrepancy sequence over UV space.

    Samples come from a scrambled Halton sequence; draws that miss the UV
    chart are discarded and the sequence simply continues, so the result is
    reproducible from the seed alone.
    """
    if n < 1:
        raise InvalidInputError("need at least one anchor")
    mesh.validate()
    locator = _UvLocator(mesh)
    sampler = qmc.Halton(d=2, scramble=True, seed=seed)
    faces, barys = [], []
    misses = 0
    while len(faces) < n:
        batch = sampler.random(max(64, n - len(faces)))
        for p in batch:
            f, b = locator.locate(p)
            if f is None:
                misses += 1
                if misses > 1000 * n + 10000:
                    raise InvalidMeshError("UV chart coverage too sparse to sample")
                continue
            faces.append(f)
            barys.append(b)
            if len(faces) == n:
                break
    return AnchorBindings(np.asarray(faces), np.asarray(barys),
                          np.arange(n, dtype=np.int32), np.ones(n, dtype=bool))


def _face_frames(vertices, faces, face_idx):
    """Tangent frames of the given faces; returns (pos-basis, degenerate mask).

    Columns of each 3x3 are tangent, bitangent, normal of the face.
    """
    tri = as_f64(vertices)[faces[face_idx]]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    normal = np.cross(e1, e2)
    n_len = np.linalg.norm(normal, axis=1)
    t_len = np.linalg.norm(e1, axis=1)
    degenerate = (n_len <= 2.0 * MIN_FACE_AREA) | (t_len <= 1e-12)
    safe_n = np.where(degenerate[:, None], 1.0, n_len[:, None])
    safe_t = np.where(degenerate[:, None], 1.0, t_len[:, None])
    nhat = normal / safe_n
    that = e1 / safe_t
    bhat = np.cross(nhat, that)
    R = np.stack([that, bhat, nhat], axis=2)
    return R, degenerate


def anchor_frame(frame: MeshFrame, binding_face: int, binding_bary):
    """Surface position and tangent frame for one binding on a frame."""
    pos, rot, degen = anchor_frames_batch(
        frame, np.asarray([binding_face]), as_f64(binding_bary).reshape(1, 3))
    if degen[0]:
        raise DegenerateFrameError(f"face {binding_face} is degenerate in this frame")
    return pos[0], rot[0]


def anchor_frames_batch(frame: MeshFrame, face_idx, bary,
                        prev_rotations=None):
    """Vectorized anchor frames; degenerate faces reuse previous rotations.

    Returns (positions (N,3), rotations (N,3,3), degenerate mask (N,)).
    Streaming input must not halt, so degenerate deformed faces keep the
    rotation supplied in ``prev_rotations`` (or identity) and are flagged.
    """
    verts = frame.vertices
    faces = frame.mesh.faces
    tri = verts[faces[face_idx]]
    bary = as_f64(bary)
    pos = (bary[:, None, :] @ tri)[:, 0, :]
    rot, degen = _face_frames(verts, faces, face_idx)
    if np.any(degen):
        if prev_rotations is not None:
            rot[degen] = prev_rotations[degen]
        else:
            rot[degen] = np.eye(3)
    return pos, rot, degen


@dataclass
class WorldPlacement:
    """Per-point world placement derived from a mesh frame."""

    mean: np.ndarray          # (N, 3) world-space Gaussian means
    rot_world: np.ndarray     # (N, 3, 3) world orientation (pose * anchor * point)
    frame_rot: np.ndarray     # (N, 3, 3) pose * anchor rotation (offset frame)
    anchor_pos: np.ndarray    # (N, 3) canonical-space surface positions
    degenerate: np.ndarray    # (N,) flagged anchor frames


def to_world(cloud, frame: MeshFrame, point_rotmats=None,
             prev_rotations=None) -> WorldPlacement:
    """World mean and orientation of every point for one frame.

    mean = pose o (anchor_pos + anchor_rot @ offset); the world rotation
    composes pose, anchor frame, and the point's own quaternion. Linear in
    the offset for a fixed frame.
    """
    binding = cloud.anchor
    if not np.all(binding.bound):
        raise BindingError("cloud contains unbound points")
    anchor_pos, anchor_rot, degen = anchor_frames_batch(
        frame, binding.face, binding.bary, prev_rotations)
    offset = as_f64(cloud.offset)
    Rp = frame.pose_rotation
    tp = frame.pose_translation
    local = anchor_pos + (anchor_rot @ offset[:, :, None])[:, :, 0]
    mean = local @ Rp.T + tp
    frame_rot = Rp @ anchor_rot
    if point_rotmats is None:
        from .mathutil import quat_to_rotmat, normalize_quaternions
        qn, _ = normalize_quaternions(cloud.rotation)
        point_rotmats = quat_to_rotmat(qn)
    rot_world = frame_rot @ point_rotmats
    return WorldPlacement(mean=mean, rot_world=rot_world, frame_rot=frame_rot,
                          anchor_pos=anchor_pos, degenerate=degen)


@dataclass
class CanonicalReference:
    """First-frame surface positions and normals of every bound point."""

    anchor_positions: np.ndarray   # (N, 3)
    anchor_normals: np.ndarray     # (N, 3) unit
    anchor_rotations: np.ndarray   # (N, 3, 3) canonical tangent frames

    @staticmethod
    def from_bindings(mesh: AnchorMesh, bindings: AnchorBindings,
                      canonical_vertices=None) -> "CanonicalReference":
        verts = canonical_vertices if canonical_vertices is not None \
            else mesh.displaced_vertices()
        frame0 = MeshFrame(mesh=mesh, vertices=verts)
        pos, rot, degen = anchor_frames_batch(frame0, bindings.face, bindings.bary)
        if np.any(degen):
            raise DegenerateFrameError("degenerate face in canonical reference")
        return CanonicalReference(anchor_positions=pos,
                                  anchor_normals=rot[:, :, 2].copy(),
                                  anchor_rotations=rot)

    def __len__(self):
        return self.anchor_positions.shape[0]


def accumulate_motion(current_positions, reference: CanonicalReference, acc):
    """Add this frame's canonical-space displacement to the accumulator.

    ``current_positions`` are the bound points' surface positions on the
    deformed canonical mesh (pose excluded), so rigid motion contributes
    exactly zero.
    """
    disp = np.linalg.norm(as_f64(current_positions) - reference.anchor_positions,
                          axis=1)
    acc.add_motion(disp)
    return acc


@dataclass
class SurfaceDistance:
    """Value and gradients of the point-to-surface regularizer."""

    value: float
    per_point: np.ndarray     # (N,) masked |normal-projected offset|
    grad_offset: np.ndarray   # (N, 3) d value / d offset
    grad_mask: np.ndarray     # (N,) d value / d mask (straight-through input)


def point_to_surface(cloud, reference: CanonicalReference,
                     mask=None) -> SurfaceDistance:
    """Sum over mask-selected points of |(P - P0) . n0|.

    P is the point's canonical-space position P0 + R0 @ offset; with an
    orthonormal anchor frame the projection reduces to the offset's normal
    component. The gradient w.r.t. the mask is reported for every point,
    masked or not, which is what lets the straight-through estimator keep
    pushing logits of already-masked points.
    """
    if not np.all(cloud.anchor.bound):
        raise BindingError("cloud contains unbound points")
    if mask is None:
        from .mathutil import sigmoid
        mask = (sigmoid(cloud.mask_logit) > 0.01).astype(np.float64)
    mask = as_f64(mask).reshape(-1)
    offset = as_f64(cloud.offset)
    rotated = np.einsum("nij,nj->ni", reference.anchor_rotations, offset)
    proj = np.einsum("ni,ni->n", rotated, reference.anchor_normals)
    contrib = np.abs(proj)
    sign = np.sign(proj)
    # d|proj|/d offset = sign * R0^T n0
    dproj_doff = np.einsum("nij,ni->nj", reference.anchor_rotations,
                           reference.anchor_normals)
    grad_offset = (mask * sign)[:, None] * dproj_doff
    return SurfaceDistance(
        value=float(np.sum(mask * contrib)),
        per_point=mask * contrib,
        grad_offset=grad_offset,
        grad_mask=contrib,
    )
