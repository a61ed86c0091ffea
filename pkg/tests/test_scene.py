"""Tests for orbit propagation, the pinhole camera, sprite rendering,
range-gated annotation, and dataset generation."""

import hashlib
import math
from pathlib import Path

import numpy as np
import pytest

from sodkit.scene import (
    CameraModel,
    GenConfig,
    MU_EARTH_KM3_S2,
    OrbitConfig,
    SatelliteState,
    annotate,
    generate_dataset,
    load_labels,
    orbital_period,
    project,
    propagate,
    read_ppm,
    render_frame,
    write_ppm,
)
from sodkit.scene.dataset import frame_seed, sample_frame
from sodkit.scene.camera import unproject

from oracles import tight_pixel_bounds


def make_orbit(alt=550.0, inc=0.7, raan=1.1, phase=0.3):
    return OrbitConfig(altitude_km=alt, inclination=inc, raan=raan, phase=phase)


class TestOrbit:
    def test_radius_is_earth_plus_altitude(self):
        orbit = make_orbit(alt=512.5)
        assert orbit.radius_km == 6371.0 + 512.5

    def test_position_at_zero_from_angles_only(self):
        orbit = make_orbit(phase=0.0)
        pos, _ = propagate(orbit, 0.0)
        # At phase 0 the satellite sits on the ascending node line.
        expected = orbit.radius_km * np.array([math.cos(orbit.raan), math.sin(orbit.raan), 0.0])
        np.testing.assert_allclose(pos, expected, atol=1e-9)

    def test_radius_conserved_over_period(self):
        orbit = make_orbit()
        period = orbital_period(orbit)
        r = orbit.radius_km
        for t in np.linspace(0.0, period, 57):
            pos, _ = propagate(orbit, float(t))
            assert abs(np.linalg.norm(pos) - r) / r < 1e-9

    def test_period_at_550km(self):
        # 2*pi*sqrt(6921^3 / mu) = 5730.127 s.
        orbit = make_orbit(alt=550.0)
        period = orbital_period(orbit)
        closed_form = 2.0 * math.pi * math.sqrt(6921.0 ** 3 / MU_EARTH_KM3_S2)
        assert abs(period - closed_form) / closed_form < 1e-12
        assert abs(period - 5730.127089334606) < 1e-6

    def test_periodicity(self):
        orbit = make_orbit(alt=583.0, inc=1.3)
        period = orbital_period(orbit)
        p0, v0 = propagate(orbit, 10.0)
        p1, v1 = propagate(orbit, 10.0 + period)
        assert np.linalg.norm(p1 - p0) < 1e-6
        assert np.linalg.norm(v1 - v0) < 1e-9

    def test_velocity_orthogonal_to_radius(self):
        orbit = make_orbit(inc=0.4, raan=2.2, phase=4.0)
        pos, vel = propagate(orbit, 321.0)
        assert abs(pos @ vel) < 1e-6

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            propagate(make_orbit(), -1.0)

    def test_sampled_altitudes_in_band(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            orbit = OrbitConfig.sample(rng)
            assert 500.0 <= orbit.altitude_km <= 600.0


class TestCamera:
    def setup_method(self):
        self.camera = CameraModel.from_orbit(make_orbit(), 0.0, 160)

    def test_focal_length_formula(self):
        assert self.camera.focal_px == pytest.approx(80.0 / math.tan(math.radians(22.5)), abs=1e-12)

    def test_boresight_projects_to_center(self):
        point = self.camera.position + 3.0 * self.camera.forward
        u, v, depth, ok = project(self.camera, point)
        assert ok and depth == pytest.approx(3.0, abs=1e-9)
        assert u == pytest.approx(80.0, abs=1e-6)
        assert v == pytest.approx(80.0, abs=1e-6)

    def test_half_angle_edge_lands_on_border(self):
        half_angle = math.radians(22.5)
        point = (self.camera.position + 2.0 * self.camera.forward
                 + 2.0 * math.tan(half_angle) * self.camera.right)
        u, v, _, _ = project(self.camera, point)
        assert abs(u - 160.0) <= 1.0
        assert v == pytest.approx(80.0, abs=1e-6)

    def test_behind_camera_excluded(self):
        point = self.camera.position - 1.0 * self.camera.forward
        *_, ok = project(self.camera, point)
        assert not ok

    def test_frame_is_orthonormal(self):
        basis = np.stack([self.camera.right, self.camera.down, self.camera.forward])
        np.testing.assert_allclose(basis @ basis.T, np.eye(3), atol=1e-12)

    def test_unproject_round_trip(self):
        point = unproject(self.camera, 31.25, 140.5, 2.7)
        u, v, depth, ok = project(self.camera, point)
        assert ok
        assert (u, v) == (pytest.approx(31.25, abs=1e-9), pytest.approx(140.5, abs=1e-9))
        assert depth == pytest.approx(2.7, abs=1e-12)


class TestRender:
    def setup_method(self):
        self.camera = CameraModel.from_orbit(make_orbit(), 0.0, 160)

    def on_axis(self, depth_km, size_m=150.0):
        return SatelliteState(position=self.camera.position + depth_km * self.camera.forward,
                              size_m=size_m)

    def test_empty_scene_is_mostly_black(self):
        image = render_frame([], self.camera, seed=3)
        near_black = (image.max(axis=2) < 20).mean()
        assert near_black > 0.99

    def test_deterministic_bytes(self):
        scene = [self.on_axis(1.0)]
        a = render_frame(scene, self.camera, seed=9)
        b = render_frame(scene, self.camera, seed=9)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, render_frame(scene, self.camera, seed=10))

    def test_perspective_scaling_4_to_1(self):
        near = render_frame([self.on_axis(1.0)], self.camera, seed=0, stars=False)
        far = render_frame([self.on_axis(4.0)], self.camera, seed=0, stars=False)
        bn = tight_pixel_bounds(near)
        bf = tight_pixel_bounds(far)
        d_near = max(bn[2] - bn[0], bn[3] - bn[1])
        d_far = max(bf[2] - bf[0], bf[3] - bf[1])
        assert abs(d_near - 4 * d_far) <= 4  # +-1 px on the far diameter

    def test_subpixel_sprite_still_paints(self):
        image = render_frame([self.on_axis(4.9, size_m=2.0)], self.camera, seed=1, stars=False)
        assert tight_pixel_bounds(image) is not None


class TestAnnotate:
    def setup_method(self):
        self.camera = CameraModel.from_orbit(make_orbit(), 0.0, 160)

    def on_axis(self, range_km, size_m=2.0):
        return SatelliteState(position=self.camera.position + range_km * self.camera.forward,
                              size_m=size_m)

    def test_beyond_gate_no_box(self):
        assert annotate([self.on_axis(5.1)], self.camera) == []

    def test_inside_gate_box_contains_center(self):
        boxes = annotate([self.on_axis(4.9)], self.camera)
        assert len(boxes) == 1
        box = boxes[0]
        assert box.range_km == pytest.approx(4.9, abs=1e-9)
        assert box.cx - box.w / 2 <= 0.5 <= box.cx + box.w / 2
        assert box.cy - box.h / 2 <= 0.5 <= box.cy + box.h / 2

    def test_behind_camera_no_box(self):
        sat = SatelliteState(position=self.camera.position - 2.0 * self.camera.forward,
                             size_m=4.0)
        assert annotate([sat], self.camera) == []

    @pytest.mark.parametrize("depth,size_m", [(0.05, 3.0), (0.3, 150.0), (1.5, 400.0)])
    def test_box_matches_pixel_scan(self, depth, size_m):
        sat = SatelliteState(position=self.camera.position + depth * self.camera.forward
                             + 0.013 * depth * self.camera.right,
                             size_m=size_m)
        boxes = annotate([sat], self.camera)
        assert len(boxes) == 1
        box = boxes[0]
        image = render_frame([sat], self.camera, seed=2, stars=False)
        x1, y1, x2, y2 = tight_pixel_bounds(image)
        assert abs(box.cx * 160 - box.w * 80 - x1) <= 1
        assert abs(box.cx * 160 + box.w * 80 - x2) <= 1
        assert abs(box.cy * 160 - box.h * 80 - y1) <= 1
        assert abs(box.cy * 160 + box.h * 80 - y2) <= 1

    def test_boxes_stay_normalized(self):
        rng = np.random.default_rng(7)
        cfg = GenConfig(train_count=0, test_count=0, seed=7)
        for index in range(40):
            camera, scene, _ = sample_frame(cfg, "train", index)
            for box in annotate(scene, camera, cfg.range_gate_km):
                assert 0.0 <= box.cx - box.w / 2 and box.cx + box.w / 2 <= 1.0
                assert 0.0 <= box.cy - box.h / 2 and box.cy + box.h / 2 <= 1.0
                assert box.range_km <= cfg.range_gate_km


class TestPPM:
    def test_round_trip(self, tmp_path):
        image = np.random.default_rng(0).integers(0, 256, (12, 9, 3)).astype(np.uint8)
        path = tmp_path / "img.ppm"
        write_ppm(image, path)
        assert np.array_equal(read_ppm(path), image)

    def test_header_bytes(self, tmp_path):
        path = tmp_path / "img.ppm"
        write_ppm(np.zeros((2, 3, 3), dtype=np.uint8), path)
        assert path.read_bytes().startswith(b"P6\n3 2\n255\n")


def corpus_digest(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(path.name.encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


class TestGenerateDataset:
    def small_cfg(self, seed=11):
        return GenConfig(train_count=12, test_count=4, seed=seed)

    def test_counts_and_manifest(self, tmp_path):
        manifest = generate_dataset(self.small_cfg(), tmp_path)
        assert len(manifest["splits"]["train"]) == 12
        assert len(manifest["splits"]["test"]) == 4
        assert len(list((tmp_path / "train").glob("*.ppm"))) == 12
        assert len(list((tmp_path / "test").glob("*.ppm"))) == 4
        assert (tmp_path / "manifest.json").exists()

    def test_same_seed_byte_identical(self, tmp_path):
        generate_dataset(self.small_cfg(), tmp_path / "a")
        generate_dataset(self.small_cfg(), tmp_path / "b")
        assert corpus_digest(tmp_path / "a") == corpus_digest(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        generate_dataset(self.small_cfg(seed=1), tmp_path / "a")
        generate_dataset(self.small_cfg(seed=2), tmp_path / "b")
        assert corpus_digest(tmp_path / "a") != corpus_digest(tmp_path / "b")

    def test_labels_revalidate_against_rerender(self, tmp_path):
        cfg = self.small_cfg(seed=5)
        manifest = generate_dataset(cfg, tmp_path)
        size = cfg.image_size
        for split in ("train", "test"):
            for index, record in enumerate(manifest["splits"][split]):
                labels = load_labels(tmp_path / record["label"])
                assert len(labels) == record["objects"]
                for rng_km in record["ranges_km"]:
                    assert rng_km <= cfg.range_gate_km
                camera, scene, _ = sample_frame(cfg, split, index)
                expected = annotate(scene, camera, cfg.range_gate_km)
                assert len(expected) == len(labels)
                for (cls, cx, cy, w, h), ann in zip(labels, expected):
                    assert cls == 0
                    assert abs(cx - ann.cx) < 1e-6 and abs(cy - ann.cy) < 1e-6
                    assert abs(w - ann.w) < 1e-6 and abs(h - ann.h) < 1e-6

    def test_images_match_frame_seed_rerender(self, tmp_path):
        cfg = self.small_cfg(seed=6)
        generate_dataset(cfg, tmp_path)
        camera, scene, _ = sample_frame(cfg, "train", 3)
        regen = render_frame(scene, camera, frame_seed(cfg, "train", 3))
        stored = read_ppm(tmp_path / "train" / "img_00003.ppm")
        assert np.array_equal(stored, regen)
