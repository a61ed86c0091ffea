"""Frame rendering and range-gated box annotation.

Satellites render as shaded convex sprites (disks with a fake-sphere
shading ramp) over a star-speckled near-black background. Apparent sprite
radius follows the pinhole model: focal_px * (size/2) / depth. Pixel
coverage — the set of pixel centers inside the projected disk, with a
one-pixel fallback for sub-pixel sprites — is the single source of truth
for both the painter and the annotation boxes, so a pixel scan of a
rendered sprite reproduces its box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraModel

# Lambert-ish shading floor keeps every covered pixel clearly above the
# background (min intensity = SHADE_FLOOR * 255 * albedo).
SHADE_FLOOR = 0.25
LIGHT_DIR = np.array([-0.45, -0.6, 0.66])
LIGHT_DIR = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)

BACKGROUND_NOISE_MAX = 12
STAR_RATE_PER_PX = 0.001


@dataclass(frozen=True)
class SatelliteState:
    position: np.ndarray   # km, world frame
    size_m: float
    albedo: float = 0.9


@dataclass(frozen=True)
class Annotation:
    class_id: int
    cx: float             # all normalized to [0, 1]
    cy: float
    w: float
    h: float
    range_km: float


def sprite_geometry(camera: CameraModel, sat: SatelliteState):
    """Projected center, radius in pixels, depth, and range; None if the
    satellite sits behind the image plane."""
    d = sat.position - camera.position
    depth = float(d @ camera.forward)
    rng_km = float(np.linalg.norm(d))
    if depth <= 0.0:
        return None
    f = camera.focal_px
    half = camera.image_size / 2.0
    u = half + f * float(d @ camera.right) / depth
    v = half + f * float(d @ camera.down) / depth
    radius_px = f * (sat.size_m / 1000.0 / 2.0) / depth
    return u, v, radius_px, depth, rng_km


def coverage_mask(image_size: int, u: float, v: float, radius_px: float):
    """Pixel coverage of a disk at (u, v): pixel centers within the radius,
    or the single nearest pixel when the disk is sub-pixel but its center
    lands in frame. Returns (x0, y0, mask) or None for no coverage."""
    x0 = max(0, int(np.floor(u - radius_px)))
    x1 = min(image_size, int(np.ceil(u + radius_px)) + 1)
    y0 = max(0, int(np.floor(v - radius_px)))
    y1 = min(image_size, int(np.ceil(v + radius_px)) + 1)
    if x0 < x1 and y0 < y1:
        xs = np.arange(x0, x1) + 0.5
        ys = np.arange(y0, y1) + 0.5
        dx = xs[None, :] - u
        dy = ys[:, None] - v
        mask = dx * dx + dy * dy <= radius_px * radius_px
        if mask.any():
            return x0, y0, mask
    if 0.0 <= u < image_size and 0.0 <= v < image_size:
        return int(u), int(v), np.ones((1, 1), dtype=bool)
    return None


def _paint_sprite(image: np.ndarray, u: float, v: float, radius_px: float,
                  albedo: float) -> None:
    cover = coverage_mask(image.shape[0], u, v, radius_px)
    if cover is None:
        return
    x0, y0, mask = cover
    h, w = mask.shape
    xs = (np.arange(x0, x0 + w) + 0.5 - u)
    ys = (np.arange(y0, y0 + h) + 0.5 - v)
    r = max(radius_px, 0.5)
    nx = np.clip(xs[None, :] / r, -1.0, 1.0)
    ny = np.clip(ys[:, None] / r, -1.0, 1.0)
    nz = np.sqrt(np.maximum(0.0, 1.0 - nx * nx - ny * ny))
    lambert = nx * LIGHT_DIR[0] + ny * LIGHT_DIR[1] + nz * LIGHT_DIR[2]
    shade = SHADE_FLOOR + (1.0 - SHADE_FLOOR) * np.maximum(0.0, lambert)
    intensity = np.clip(255.0 * albedo * shade, 0, 255).astype(np.uint8)
    region = image[y0 : y0 + h, x0 : x0 + w]
    region[mask] = intensity[mask, None]


def render_frame(scene: list[SatelliteState], camera: CameraModel, seed: int,
                 stars: bool = True, star_rate: float = STAR_RATE_PER_PX) -> np.ndarray:
    """Deterministic 8-bit RGB frame for (scene, camera, seed)."""
    size = camera.image_size
    rng = np.random.default_rng(seed)
    noise = rng.integers(0, BACKGROUND_NOISE_MAX + 1, size=(size, size)).astype(np.uint8)
    image = np.repeat(noise[:, :, None], 3, axis=2)
    if stars and star_rate > 0:
        count = rng.poisson(star_rate * size * size)
        if count:
            ys = rng.integers(0, size, count)
            xs = rng.integers(0, size, count)
            brightness = rng.integers(120, 256, count)
            image[ys, xs] = brightness[:, None]

    visible = []
    for sat in scene:
        geom = sprite_geometry(camera, sat)
        if geom is not None:
            visible.append((geom[3], geom, sat))
    # Painter's algorithm: far sprites first, near sprites overwrite.
    for _, (u, v, radius, _, _), sat in sorted(visible, key=lambda rec: -rec[0]):
        _paint_sprite(image, u, v, radius, sat.albedo)
    return image


def annotate(scene: list[SatelliteState], camera: CameraModel,
             range_gate_km: float = 5.0) -> list[Annotation]:
    """One tight box per satellite that lies within the range gate and
    whose sprite covers at least one pixel of the frame."""
    size = camera.image_size
    out = []
    for sat in scene:
        geom = sprite_geometry(camera, sat)
        if geom is None:
            continue
        u, v, radius, _, rng_km = geom
        if rng_km > range_gate_km:
            continue
        cover = coverage_mask(size, u, v, radius)
        if cover is None:
            continue
        x0, y0, mask = cover
        cols = np.nonzero(mask.any(axis=0))[0]
        rows = np.nonzero(mask.any(axis=1))[0]
        x1, x2 = x0 + cols[0], x0 + cols[-1] + 1
        y1, y2 = y0 + rows[0], y0 + rows[-1] + 1
        out.append(Annotation(
            class_id=0,
            cx=float((x1 + x2) / 2.0 / size),
            cy=float((y1 + y2) / 2.0 / size),
            w=float((x2 - x1) / size),
            h=float((y2 - y1) / size),
            range_km=rng_km,
        ))
    return out
