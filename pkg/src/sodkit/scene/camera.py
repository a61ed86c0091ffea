"""Onboard pinhole camera with a fixed 45-degree field of view.

The camera rides a satellite with its boresight along the velocity vector;
for a circular orbit the radial direction is exactly orthogonal to the
velocity, so (right, down, forward) forms an orthonormal frame with
down = -radial. Focal length in pixels is (imageSize/2)/tan(FoV/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .orbit import OrbitConfig, propagate

FOV_DEG = 45.0


@dataclass
class CameraModel:
    image_size: int
    position: np.ndarray   # km, world frame
    right: np.ndarray      # unit vectors, world frame
    down: np.ndarray
    forward: np.ndarray

    @property
    def fov_rad(self) -> float:
        return math.radians(FOV_DEG)

    @property
    def focal_px(self) -> float:
        return (self.image_size / 2.0) / math.tan(self.fov_rad / 2.0)

    @staticmethod
    def from_orbit(orbit: OrbitConfig, t: float, image_size: int) -> "CameraModel":
        position, velocity = propagate(orbit, t)
        forward = velocity / np.linalg.norm(velocity)
        radial = position / np.linalg.norm(position)
        down = -radial
        right = np.cross(down, forward)
        right /= np.linalg.norm(right)
        return CameraModel(image_size=image_size, position=position,
                           right=right, down=down, forward=forward)


def project(camera: CameraModel, world_point: np.ndarray):
    """Pinhole projection to continuous pixel coordinates.

    Returns (x_px, y_px, depth_km, in_frustum). Points behind the camera
    report in_frustum False with unusable pixel coordinates.
    """
    d = np.asarray(world_point, dtype=np.float64) - camera.position
    x_cam = float(d @ camera.right)
    y_cam = float(d @ camera.down)
    depth = float(d @ camera.forward)
    if depth <= 0.0:
        return 0.0, 0.0, depth, False
    f = camera.focal_px
    half = camera.image_size / 2.0
    u = half + f * x_cam / depth
    v = half + f * y_cam / depth
    size = camera.image_size
    in_frustum = (0.0 <= u < size) and (0.0 <= v < size)
    return u, v, depth, in_frustum


def unproject(camera: CameraModel, u: float, v: float, depth_km: float) -> np.ndarray:
    """World point at pixel (u, v) and boresight depth; inverse of project."""
    f = camera.focal_px
    half = camera.image_size / 2.0
    direction = (camera.forward
                 + camera.right * ((u - half) / f)
                 + camera.down * ((v - half) / f))
    return camera.position + depth_km * direction
