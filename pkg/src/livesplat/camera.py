"""Pinhole camera shared by the splatting renderer and the scene generator.

Camera space: x right, y down, z forward. Pixel (row i, col j) has center
(j + 0.5, i + 0.5); a world point maps to
(fx * x / z + cx, fy * y / z + cy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .mathutil import as_f64


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray       # (3, 3) world-to-camera
    translation: np.ndarray    # (3,)

    def __post_init__(self):
        self.rotation = as_f64(self.rotation).reshape(3, 3)
        self.translation = as_f64(self.translation).reshape(3)

    def validate(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image size must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise InvalidInputError("camera rotation is not orthonormal")
        return self

    def world_to_cam(self, points):
        return as_f64(points) @ self.rotation.T + self.translation

    def project_points(self, points):
        """Pixel coordinates and camera depths of world points."""
        t = self.world_to_cam(points)
        z = t[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            px = self.fx * t[:, 0] / z + self.cx
            py = self.fy * t[:, 1] / z + self.cy
        return np.stack([px, py], axis=1), z

    @staticmethod
    def look_at(position, target, up=(0.0, 1.0, 0.0), fx=105.0, fy=None,
                width=128, height=128):
        """Camera at `position` looking at `target`, image y pointing down."""
        position = as_f64(position)
        forward = as_f64(target) - position
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, as_f64(up))
        right = right / np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward], axis=0)
        t = -R @ position
        if fy is None:
            fy = fx
        return Camera(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
                      width=width, height=height, rotation=R, translation=t)
