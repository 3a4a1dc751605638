"""Synthetic deforming-head scene generator and its on-disk format.

Stands in for live face capture: a subdivided icosphere with spherical UV
and a procedural texture deforms under a scripted sum of raised-cosine
radial bumps, one designated cap staying exactly static. Ground-truth images
come from a classical z-buffered triangle rasterizer (barycentric texture
sampling, Lambertian shading) that shares no code with the Gaussian
renderer.

Scene directory layout (version 1):
  scene.json            header: counts, camera, split, file names
  texture.png           ground-truth texture (8-bit RGB)
  mesh.bin              little-endian: u32 V, u32 F, f64 vertices (V*3),
                        i32 faces (F*3), f64 uv (V*2)
  frame_NNNNN.png       8-bit RGB target image
  frame_NNNNN.meta      text sidecar, fields one per line:
                        frame, timestamp, pose_rotation (9 floats row-major),
                        pose_translation (3 floats), vertices_file
  frame_NNNNN.verts     raw little-endian f64 deformed canonical vertices

The tracked mesh written to the sidecars deliberately excludes the optional
ground-truth-only bump, mimicking a coarse head tracker; the warm-up phase
is what recovers that gap.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np
from PIL import Image

from . import _meshkernels
from .anchors import AnchorMesh, MeshFrame, vertex_normals
from .camera import Camera
from .errors import ConfigError, FormatError
from .mathutil import as_f32, as_f64

SCENE_VERSION = 1


@dataclass
class FrameSample:
    """One unit of streaming input."""

    image: np.ndarray        # (H, W, 3) float32 in [0, 1]
    mesh_frame: MeshFrame
    camera: Camera
    index: int


@dataclass
class DeformRegion:
    center: np.ndarray       # unit direction
    radius: float            # angular support (radians)
    amplitude: float         # radial displacement scale
    frequency: float         # cycles over the training window
    phase: float


@dataclass
class SceneConfig:
    frames: int = 600
    resolution: int = 128
    seed: int = 0
    holdout_fraction: float = 0.2
    n_regions: int = 5
    amplitude: float = 0.09
    region_radius: float = 0.55
    static_center: tuple = (-0.45, 0.55, 0.72)
    static_radius: float = 0.38
    holdout_amplitude_ramp: float = 1.3
    subdivisions: int = 4
    texture_resolution: int = 256
    background: tuple = (0.12, 0.13, 0.15)
    light_direction: tuple = (0.3, 0.45, 0.9)
    ambient: float = 0.72
    diffuse: float = 0.28
    camera_distance: float = 2.6
    camera_height: float = 0.1
    focal_per_128: float = 105.0
    gt_bump_amplitude: float = 0.0
    gt_bump_center: tuple = (0.55, 0.35, 0.76)
    gt_bump_radius: float = 0.5

    def validate(self):
        if self.frames < 1:
            raise ConfigError("frame count must be >= 1")
        if self.resolution < 32:
            raise ConfigError("resolution must be >= 32")
        if not (0.0 <= self.holdout_fraction < 1.0):
            raise ConfigError("holdout fraction must be in [0, 1)")
        return self

    @property
    def holdout_start(self) -> int:
        return self.frames - int(round(self.frames * self.holdout_fraction))


def icosphere(subdivisions: int = 4):
    """Subdivided unit icosahedron; returns (vertices (V,3), faces (F,3))."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key in cache:
                return cache[key]
            a = np.asarray(verts[i])
            b = np.asarray(verts[j])
            m = (a + b) / 2.0
            m /= np.linalg.norm(m)
            verts.append(tuple(m))
            cache[key] = len(verts) - 1
            return cache[key]

        for (a, b, c) in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int32)


def spherical_uv(vertices, faces):
    """Per-vertex spherical UV with seam duplication at the back.

    Faces straddling the u wrap get their low-u vertices duplicated with
    u + 1, so individual UV triangles are never degenerate; the duplicated
    strip sits just outside the unit square and simply receives no anchor
    samples.
    """
    v = as_f64(vertices)
    u = 0.5 + np.arctan2(v[:, 0], v[:, 2]) / (2.0 * np.pi)
    w = 0.5 + np.arcsin(np.clip(v[:, 1], -1.0, 1.0)) / np.pi
    uv = np.stack([u, w], axis=1)
    verts = v.copy()
    faces = np.array(faces, dtype=np.int32)
    uv_list = [uv]
    vert_list = [verts]
    extra_uv = []
    extra_v = []
    remap = {}
    next_idx = verts.shape[0]
    for fi in range(faces.shape[0]):
        us = uv[faces[fi], 0]
        if us.max() - us.min() > 0.5:
            for k in range(3):
                vi = faces[fi, k]
                if uv[vi, 0] < 0.5:
                    if vi not in remap:
                        remap[vi] = next_idx
                        extra_uv.append([uv[vi, 0] + 1.0, uv[vi, 1]])
                        extra_v.append(verts[vi])
                        next_idx += 1
                    faces[fi, k] = remap[vi]
    if extra_uv:
        uv_all = np.concatenate([uv, np.asarray(extra_uv)], axis=0)
        verts_all = np.concatenate([verts, np.asarray(extra_v)], axis=0)
    else:
        uv_all = uv
        verts_all = verts
    return verts_all, faces, uv_all


def build_head_mesh(subdivisions: int = 4) -> AnchorMesh:
    verts, faces = icosphere(subdivisions)
    verts, faces, uv = spherical_uv(verts, faces)
    return AnchorMesh(vertices=verts, faces=faces, uv=uv)


def procedural_texture(resolution: int, seed: int) -> np.ndarray:
    """Smooth low-frequency RGB texture in [0.15, 0.95], seed-deterministic."""
    rng = np.random.default_rng(seed + 101)
    u = (np.arange(resolution) + 0.5) / resolution
    uu, vv = np.meshgrid(u, u, indexing="xy")
    tex = np.zeros((resolution, resolution, 3))
    for ch in range(3):
        img = 0.55 * np.ones_like(uu)
        for _ in range(3):
            fu = rng.uniform(0.4, 1.6)
            fv = rng.uniform(0.4, 1.6)
            ph = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.05, 0.13)
            img += amp * np.sin(2 * np.pi * (fu * uu + fv * vv) + ph)
        tex[:, :, ch] = img
    return np.clip(tex, 0.15, 0.95)


def _unit(v):
    v = as_f64(v)
    return v / np.linalg.norm(v)


@dataclass
class DeformScript:
    """Scripted radial bump deformation with an exactly-static cap."""

    regions: List[DeformRegion]
    static_center: np.ndarray
    static_radius: float
    train_frames: int
    total_frames: int
    holdout_ramp: float

    @staticmethod
    def build(config: SceneConfig, mesh: AnchorMesh) -> "DeformScript":
        rng = np.random.default_rng(config.seed + 202)
        static_center = _unit(config.static_center)
        regions = []
        attempts = 0
        while len(regions) < config.n_regions and attempts < 1000:
            attempts += 1
            d = _unit(rng.normal(size=3))
            # bias regions toward the camera-facing hemisphere
            d[2] = abs(d[2])
            d = _unit(d)
            gap = np.arccos(np.clip(d @ static_center, -1, 1))
            if gap < config.static_radius + config.region_radius + 0.12:
                continue
            regions.append(DeformRegion(
                center=d,
                radius=config.region_radius,
                amplitude=config.amplitude * rng.uniform(0.7, 1.3),
                frequency=rng.uniform(1.0, 3.0),
                phase=rng.uniform(0, 2 * np.pi),
            ))
        train_frames = config.holdout_start
        return DeformScript(regions=regions, static_center=static_center,
                            static_radius=config.static_radius,
                            train_frames=max(train_frames, 1),
                            total_frames=config.frames,
                            holdout_ramp=config.holdout_amplitude_ramp)

    def region_weights(self, vertices):
        """(R, V) raised-cosine weights, exactly zero inside the static cap."""
        dirs = as_f64(vertices)
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        ang_static = np.arccos(np.clip(dirs @ self.static_center, -1, 1))
        shield = np.zeros(dirs.shape[0])
        outside = ang_static >= self.static_radius + 0.1
        ramp = (ang_static - self.static_radius) / 0.1
        shield[outside] = 1.0
        mid = (~outside) & (ang_static > self.static_radius)
        shield[mid] = 0.5 * (1 - np.cos(np.pi * ramp[mid]))
        weights = []
        for r in self.regions:
            ang = np.arccos(np.clip(dirs @ r.center, -1, 1))
            w = np.where(ang < r.radius,
                         0.5 * (1 + np.cos(np.pi * ang / r.radius)), 0.0)
            weights.append(w * shield)
        return np.asarray(weights)

    def amplitude_factor(self, frame_idx: int) -> float:
        if frame_idx < self.train_frames:
            return 1.0
        span = max(self.total_frames - self.train_frames, 1)
        a = (frame_idx - self.train_frames + 1) / span
        return 1.0 + (self.holdout_ramp - 1.0) * a

    def displace(self, mesh: AnchorMesh, frame_idx: int) -> np.ndarray:
        """Deformed canonical vertices for one frame."""
        base = mesh.vertices
        normals = base / np.linalg.norm(base, axis=1, keepdims=True)
        weights = self.region_weights(base)
        tau = frame_idx / self.train_frames
        amp = self.amplitude_factor(frame_idx)
        disp = np.zeros_like(base)
        for r, w in zip(self.regions, weights):
            s = np.sin(2 * np.pi * r.frequency * tau + r.phase)
            disp += (amp * r.amplitude * s) * w[:, None] * normals
        return base + disp

    def static_vertex_mask(self, mesh: AnchorMesh) -> np.ndarray:
        dirs = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)
        ang = np.arccos(np.clip(dirs @ self.static_center, -1, 1))
        return ang <= self.static_radius


def default_camera(config: SceneConfig) -> Camera:
    res = config.resolution
    return Camera.look_at(
        position=(0.0, config.camera_height, config.camera_distance),
        target=(0.0, 0.0, 0.0),
        fx=config.focal_per_128 * res / 128.0,
        width=res, height=res)


def render_ground_truth(vertices, mesh: AnchorMesh, camera: Camera,
                        texture, config: SceneConfig,
                        pose_rotation=None, pose_translation=None) -> np.ndarray:
    """Classical triangle rasterization of the (posed) deformed mesh."""
    verts = as_f64(vertices)
    if pose_rotation is not None:
        verts = verts @ as_f64(pose_rotation).T + as_f64(pose_translation)
    normals = vertex_normals(verts, mesh.faces)
    light = _unit(config.light_direction)
    shade = config.ambient + config.diffuse * np.clip(normals @ light, 0.0, None)

    pix, z = camera.project_points(verts)
    faces = mesh.faces
    tri2d = pix[faces]
    tri_z = z[faces]
    inv_z = np.where(tri_z > 0.01, 1.0 / tri_z, 0.0)
    tri_uv_over_z = mesh.uv[faces] * inv_z[:, :, None]
    tri_inv_z = inv_z
    tri_shade_over_z = shade[faces] * inv_z

    H = camera.height
    W = camera.width
    image = np.empty((H, W, 3))
    _meshkernels.raster_mesh(
        np.ascontiguousarray(tri2d), np.ascontiguousarray(tri_z),
        np.ascontiguousarray(tri_uv_over_z), np.ascontiguousarray(tri_inv_z),
        np.ascontiguousarray(tri_shade_over_z),
        W, H, as_f64(texture), as_f64(config.background), image)
    return image


@dataclass
class SyntheticScene:
    """Fully generated scene held in memory."""

    config: SceneConfig
    mesh: AnchorMesh
    camera: Camera
    texture: np.ndarray
    script: DeformScript
    frames: List[FrameSample]

    @property
    def train_indices(self):
        return list(range(self.config.holdout_start))

    @property
    def holdout_indices(self):
        return list(range(self.config.holdout_start, self.config.frames))

    def static_vertex_mask(self):
        return self.script.static_vertex_mask(self.mesh)


def _gt_bump(mesh: AnchorMesh, config: SceneConfig) -> np.ndarray:
    if config.gt_bump_amplitude == 0.0:
        return np.zeros_like(mesh.vertices)
    center = _unit(config.gt_bump_center)
    dirs = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)
    ang = np.arccos(np.clip(dirs @ center, -1, 1))
    w = np.where(ang < config.gt_bump_radius,
                 0.5 * (1 + np.cos(np.pi * ang / config.gt_bump_radius)), 0.0)
    return config.gt_bump_amplitude * w[:, None] * dirs


def gen_scene(config: SceneConfig) -> SyntheticScene:
    """Generate the full frame sequence, deterministic from the seed.

    The tracked mesh frames exclude the ground-truth-only bump; images are
    rendered from the bumped geometry.
    """
    config.validate()
    mesh = build_head_mesh(config.subdivisions)
    camera = default_camera(config)
    texture = procedural_texture(config.texture_resolution, config.seed)
    script = DeformScript.build(config, mesh)
    bump = _gt_bump(mesh, config)

    frames = []
    for i in range(config.frames):
        tracked = script.displace(mesh, i)
        gt_vertices = tracked + bump
        image = render_ground_truth(gt_vertices, mesh, camera, texture, config)
        frame = MeshFrame(mesh=mesh, vertices=tracked, timestamp=float(i))
        frames.append(FrameSample(image=as_f32(np.clip(image, 0.0, 1.0)),
                                  mesh_frame=frame, camera=camera, index=i))
    return SyntheticScene(config=config, mesh=mesh, camera=camera,
                          texture=texture, script=script, frames=frames)


# ---------------------------------------------------------------------------
# Scene directory I/O


def _write_png(path, image):
    arr = np.clip(as_f64(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def _read_png(path):
    return np.asarray(Image.open(path), dtype=np.float32) / 255.0


def save_scene(scene: SyntheticScene, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    mesh = scene.mesh
    cam = scene.camera
    header = {
        "version": SCENE_VERSION,
        "frames": scene.config.frames,
        "holdout_start": scene.config.holdout_start,
        "resolution": scene.config.resolution,
        "seed": scene.config.seed,
        "background": list(scene.config.background),
        "camera": {
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
            "rotation": cam.rotation.ravel().tolist(),
            "translation": cam.translation.tolist(),
        },
        "vertex_count": mesh.vertex_count,
        "face_count": mesh.face_count,
        "mesh_file": "mesh.bin",
        "texture_file": "texture.png",
    }
    with open(os.path.join(out_dir, "scene.json"), "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "mesh.bin"), "wb") as fh:
        fh.write(np.uint32(mesh.vertex_count).tobytes())
        fh.write(np.uint32(mesh.face_count).tobytes())
        fh.write(mesh.vertices.astype("<f8").tobytes())
        fh.write(mesh.faces.astype("<i4").tobytes())
        fh.write(mesh.uv.astype("<f8").tobytes())
    _write_png(os.path.join(out_dir, "texture.png"), scene.texture)
    for fr in scene.frames:
        stem = f"frame_{fr.index:05d}"
        _write_png(os.path.join(out_dir, stem + ".png"), fr.image)
        with open(os.path.join(out_dir, stem + ".verts"), "wb") as fh:
            fh.write(fr.mesh_frame.vertices.astype("<f8").tobytes())
        mf = fr.mesh_frame
        lines = [
            f"frame {fr.index}",
            f"timestamp {mf.timestamp!r}",
            "pose_rotation " + " ".join(repr(v) for v in mf.pose_rotation.ravel()),
            "pose_translation " + " ".join(repr(v) for v in mf.pose_translation),
            f"vertices_file {stem}.verts",
        ]
        with open(os.path.join(out_dir, stem + ".meta"), "w") as fh:
            fh.write("\n".join(lines) + "\n")


class SceneDirectory:
    """Lazy reader for a saved scene directory."""

    def __init__(self, path: str):
        self.path = path
        header_path = os.path.join(path, "scene.json")
        if not os.path.exists(header_path):
            raise FormatError(f"no scene.json under {path}")
        with open(header_path) as fh:
            self.header = json.load(fh)
        if self.header.get("version") != SCENE_VERSION:
            raise FormatError(f"unknown scene version {self.header.get('version')}")
        self.frames = int(self.header["frames"])
        self.holdout_start = int(self.header["holdout_start"])
        cam = self.header["camera"]
        self.camera = Camera(
            fx=cam["fx"], fy=cam["fy"], cx=cam["cx"], cy=cam["cy"],
            width=cam["width"], height=cam["height"],
            rotation=np.asarray(cam["rotation"]).reshape(3, 3),
            translation=np.asarray(cam["translation"]))
        self.background = np.asarray(self.header["background"])
        self.mesh = self._read_mesh()

    def _read_mesh(self) -> AnchorMesh:
        with open(os.path.join(self.path, self.header["mesh_file"]), "rb") as fh:
            raw = fh.read()
        V = int(np.frombuffer(raw, "<u4", count=1, offset=0)[0])
        F = int(np.frombuffer(raw, "<u4", count=1, offset=4)[0])
        off = 8
        verts = np.frombuffer(raw, "<f8", count=V * 3, offset=off).reshape(V, 3)
        off += V * 3 * 8
        faces = np.frombuffer(raw, "<i4", count=F * 3, offset=off).reshape(F, 3)
        off += F * 3 * 4
        uv = np.frombuffer(raw, "<f8", count=V * 2, offset=off).reshape(V, 2)
        return AnchorMesh(vertices=verts.copy(), faces=faces.copy(), uv=uv.copy())

    @property
    def train_indices(self):
        return list(range(self.holdout_start))

    @property
    def holdout_indices(self):
        return list(range(self.holdout_start, self.frames))

    def load_frame(self, index: int) -> FrameSample:
        stem = os.path.join(self.path, f"frame_{index:05d}")
        image = _read_png(stem + ".png")
        meta = {}
        with open(stem + ".meta") as fh:
            for line in fh:
                key, _, rest = line.strip().partition(" ")
                meta[key] = rest
        verts = np.fromfile(stem + ".verts", dtype="<f8").reshape(-1, 3)
        pose_r = np.asarray([float(v) for v in meta["pose_rotation"].split()]).reshape(3, 3)
        pose_t = np.asarray([float(v) for v in meta["pose_translation"].split()])
        frame = MeshFrame(mesh=self.mesh, vertices=verts,
                          pose_rotation=pose_r, pose_translation=pose_t,
                          timestamp=float(meta["timestamp"]))
        return FrameSample(image=image, mesh_frame=frame,
                           camera=self.camera, index=index)
