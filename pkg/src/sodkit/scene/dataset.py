"""Dataset generation: train/test splits of rendered frames with
normalized box labels and a JSON manifest.

Each frame derives its own RNG stream from (seed, split, frame index), so
generation order never affects the output and regeneration with the same
config is byte-identical. Scenes are independent: a fresh observer orbit
per frame, with target satellites placed inside the camera frustum at
log-uniform depths so sprite scales span sub-pixel to tens of pixels.

File formats:
    images    binary PPM (P6), 8-bit RGB
    labels    one line per object: "class cx cy w h", normalized, LF endings
    manifest  JSON: seed, config echo, per-file object counts and ranges
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .camera import CameraModel, unproject
from .orbit import OrbitConfig
from .render import Annotation, SatelliteState, annotate, render_frame

SPLIT_CODES = {"train": 0, "test": 1}


@dataclass
class GenConfig:
    train_count: int = 450
    test_count: int = 150
    seed: int = 0
    image_size: int = 160
    sat_rate: float = 1.5          # Poisson mean, clamped to sat_max
    sat_max: int = 4
    size_range_m: tuple[float, float] = (2.0, 6.0)
    # 0.03 km puts the largest sprite near 40 px at 160 px / 45 deg FoV;
    # the far end exceeds the range gate so ungated satellites occur.
    depth_range_km: tuple[float, float] = (0.03, 6.0)
    range_gate_km: float = 5.0
    cadence_s: float = 5.0
    altitude_range_km: tuple[float, float] = (500.0, 600.0)
    star_rate: float | None = None   # stars per pixel; None keeps the renderer default

    def __post_init__(self):
        self.size_range_m = tuple(self.size_range_m)
        self.depth_range_km = tuple(self.depth_range_km)
        self.altitude_range_km = tuple(self.altitude_range_km)
        if self.train_count < 0 or self.test_count < 0:
            raise ValueError("split counts must be non-negative")
        if self.depth_range_km[0] <= 0:
            raise ValueError("depth range must be positive")


def frame_rng(cfg: GenConfig, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, SPLIT_CODES[split], index])


def frame_seed(cfg: GenConfig, split: str, index: int) -> int:
    seq = np.random.SeedSequence([cfg.seed, SPLIT_CODES[split], index, 0xC0FFEE])
    return int(seq.generate_state(1)[0])


def sample_frame(cfg: GenConfig, split: str, index: int):
    """Observer camera plus target satellites for one frame."""
    rng = frame_rng(cfg, split, index)
    orbit = OrbitConfig.sample(rng, cfg.altitude_range_km)
    t = index * cfg.cadence_s
    camera = CameraModel.from_orbit(orbit, t, cfg.image_size)

    count = min(int(rng.poisson(cfg.sat_rate)), cfg.sat_max)
    lo, hi = cfg.depth_range_km
    margin = 0.1 * cfg.image_size
    scene = []
    for _ in range(count):
        depth = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        u = rng.uniform(margin, cfg.image_size - margin)
        v = rng.uniform(margin, cfg.image_size - margin)
        scene.append(SatelliteState(
            position=unproject(camera, u, v, depth),
            size_m=float(rng.uniform(*cfg.size_range_m)),
            albedo=float(rng.uniform(0.7, 1.0)),
        ))
    return camera, scene, t


# -- file formats -----------------------------------------------------------------


def write_ppm(image: np.ndarray, path: str | Path) -> None:
    h, w, c = image.shape
    if c != 3 or image.dtype != np.uint8:
        raise ValueError("write_ppm expects HxWx3 uint8")
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).copy()


def write_labels(annotations: list[Annotation], path: str | Path) -> None:
    lines = [
        f"{a.class_id} {a.cx:.6f} {a.cy:.6f} {a.w:.6f} {a.h:.6f}\n"
        for a in annotations
    ]
    Path(path).write_text("".join(lines), newline="\n")


def load_labels(path: str | Path) -> list[tuple[int, float, float, float, float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        cls, cx, cy, w, h = line.split()
        rows.append((int(cls), float(cx), float(cy), float(w), float(h)))
    return rows


def image_to_array(image: np.ndarray) -> np.ndarray:
    """HxWx3 uint8 -> 3xHxW float64 in [0, 1]."""
    return image.astype(np.float64).transpose(2, 0, 1) / 255.0


def load_split(root: str | Path, split: str):
    """Images (uint8 HxWx3) and normalized labels for one split directory."""
    split_dir = Path(root) / split
    images, labels = [], []
    for image_path in sorted(split_dir.glob("*.ppm")):
        images.append(read_ppm(image_path))
        labels.append(load_labels(image_path.with_suffix(".txt")))
    if not images:
        raise FileNotFoundError(f"no .ppm frames under {split_dir}")
    return images, labels


# -- generation ---------------------------------------------------------------------


def generate_dataset(cfg: GenConfig, out_dir: str | Path) -> dict:
    """Write train/ and test/ splits plus manifest.json; returns the manifest."""
    out = Path(out_dir)
    manifest: dict = {"seed": cfg.seed, "config": asdict(cfg), "splits": {}}
    for split, count in (("train", cfg.train_count), ("test", cfg.test_count)):
        split_dir = out / split
        split_dir.mkdir(parents=True, exist_ok=True)
        records = []
        for index in range(count):
            camera, scene, _ = sample_frame(cfg, split, index)
            star_kwargs = {} if cfg.star_rate is None else {"star_rate": cfg.star_rate}
            image = render_frame(scene, camera, frame_seed(cfg, split, index), **star_kwargs)
            boxes = annotate(scene, camera, cfg.range_gate_km)
            stem = f"img_{index:05d}"
            write_ppm(image, split_dir / f"{stem}.ppm")
            write_labels(boxes, split_dir / f"{stem}.txt")
            records.append({
                "image": f"{split}/{stem}.ppm",
                "label": f"{split}/{stem}.txt",
                "objects": len(boxes),
                "ranges_km": [round(a.range_km, 6) for a in boxes],
            })
        manifest["splits"][split] = records
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
