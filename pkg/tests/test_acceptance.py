"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The toy-overfit
criterion trains two variants and dominates the runtime (minutes); the
rest complete in seconds to a couple of minutes.
"""

import hashlib
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from sodkit import tensor as T
from sodkit.bench import time_inference
from sodkit.blocks import ParamStore, RepNCSPELAN4, SqueezeExcite, ViTEncoder
from sodkit.metrics import Detection, IOU_THRESHOLDS, average_precision, iou, map_suite, nms
from sodkit.models import ModelSpec, build
from sodkit.scene import (
    CameraModel,
    GenConfig,
    MU_EARTH_KM3_S2,
    OrbitConfig,
    SatelliteState,
    annotate,
    generate_dataset,
    orbital_period,
    propagate,
    render_frame,
)
from sodkit.scene.dataset import frame_seed, load_labels, load_split, sample_frame
from sodkit.tensor import Tensor, finite_diff_check
from sodkit.train import TrainConfig, TargetMap, assign_targets, detection_loss, train

from oracles import (
    average_precision_naive,
    iou_naive,
    nms_naive,
    tight_pixel_bounds,
)

SEEDS = [0, 1, 2, 3, 4]


@contextmanager
def criterion(number: int, label: str):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"\n[FAIL] criterion {number}: {label}", flush=True)
        raise
    elapsed = time.perf_counter() - start
    print(f"\n[PASS] criterion {number}: {label} ({elapsed:.1f}s)", flush=True)


def rand(shape, seed, scale=1.0):
    return scale * np.random.default_rng(seed).standard_normal(shape)


class TestCriterion1GradientFidelity:
    TOL = 1e-4
    H = 1e-5

    def check(self, fn, point):
        err = finite_diff_check(fn, Tensor(point), h=self.H)
        assert err < self.TOL, f"max relative error {err}"

    def test_gradient_fidelity(self):
        with criterion(1, "gradient fidelity of primitives and full blocks "
                          "(< 1e-4, 5 seeds, < 2 min)"):
            start = time.perf_counter()
            for seed in SEEDS:
                w_conv = Tensor(rand((3, 2, 3, 3), seed=seed + 1))
                weigh = Tensor(rand((1, 3, 3, 3), seed=seed + 2))
                self.check(lambda t: (T.conv2d(t, w_conv, stride=2, padding=1) * weigh).sum(),
                           rand((1, 2, 5, 5), seed=seed + 3))
                b_mat = Tensor(rand((4, 3), seed=seed + 4))
                w_mat = Tensor(rand((2, 3), seed=seed + 5))
                self.check(lambda t: (T.matmul(t, b_mat) * w_mat).sum(),
                           rand((2, 4), seed=seed + 6))
                w_gap = Tensor(rand((2, 3), seed=seed + 7))
                self.check(lambda t: (T.global_avg_pool(t) * w_gap).sum(),
                           rand((2, 3, 4, 4), seed=seed + 8))
                w_act = Tensor(rand((10,), seed=seed + 9))
                for kind in ("sigmoid", "silu", "relu"):
                    point = rand((10,), seed=seed + 10)
                    point = np.where(np.abs(point) < 0.05, 0.3, point)
                    self.check(lambda t: (T.activation(t, kind) * w_act).sum(), point)
                w_soft = Tensor(rand((3, 5), seed=seed + 11))
                self.check(lambda t: (T.softmax_lastdim(t) * w_soft).sum(),
                           rand((3, 5), seed=seed + 12))
                bn = T.BatchNorm2dState(3)
                w_bn = Tensor(rand((2, 3, 3, 3), seed=seed + 13))
                self.check(lambda t: (T.normalize(t, "batchnorm2d", bn, "train") * w_bn).sum(),
                           rand((2, 3, 3, 3), seed=seed + 14))
                ln = T.LayerNormState(6)
                w_ln = Tensor(rand((4, 6), seed=seed + 15))
                self.check(lambda t: (T.normalize(t, "layernorm", ln, "train") * w_ln).sum(),
                           rand((4, 6), seed=seed + 16))
                w_cat = Tensor(rand((1, 4, 2, 2), seed=seed + 17))
                def cat_fn(t):
                    a, b = T.split(t, [2, 2])
                    return (T.concat([b, a]) * w_cat).sum()
                self.check(cat_fn, rand((1, 4, 2, 2), seed=seed + 18))

            # full blocks: plain and SE aggregation, transformer encoder, loss
            for seed in SEEDS:
                for use_se in (False, True):
                    store = ParamStore(seed)
                    block = RepNCSPELAN4(store, "b", 8, 8, use_se=use_se)
                    w_blk = Tensor(rand((1, 8, 8, 8), seed=seed + 19))
                    self.check(lambda t: (block(t, training=False) * w_blk).sum(),
                               rand((1, 8, 8, 8), seed=seed + 20))
                store = ParamStore(seed)
                vit = ViTEncoder(store, "v", 2, (2, 2), patch=4, dim=8, heads=2,
                                 depth=2, mlp_ratio=2)
                w_vit = Tensor(rand((1, 8, 2, 2), seed=seed + 21))
                self.check(lambda t: (vit(t) * w_vit).sum(),
                           rand((1, 2, 8, 8), seed=seed + 22))

                cfg = TrainConfig()
                gts = [(0, 0.5, 0.5, 0.55, 0.5), (0, 0.25, 0.25, 0.2, 0.22)]
                targets = [assign_targets(gts, 32, (8, 16, 32), 1)]
                fixed = [rand((1, 6, 32 // s, 32 // s), seed=seed + 23 + i)
                         for i, s in enumerate((8, 16, 32))]
                for probe in range(3):
                    def loss_fn(t):
                        maps = [t if i == probe else Tensor(fixed[i]) for i in range(3)]
                        return detection_loss(maps, targets, (8, 16, 32), 32, cfg)[0]
                    self.check(loss_fn, fixed[probe].copy())

            assert time.perf_counter() - start < 120.0


class TestCriterion2SESemantics:
    def test_se_semantics(self):
        with criterion(2, "squeeze-excite: zeroed params halve exactly, "
                          "random params strictly contract"):
            store = ParamStore(0)
            se = SqueezeExcite(store, "se", 8)
            for p in store.params.values():
                p.data = np.zeros_like(p.data)
            y = rand((2, 8, 5, 5), seed=1)
            out = se(Tensor(y)).data
            assert np.array_equal(out, 0.5 * y)

            for seed in SEEDS:
                store = ParamStore(seed + 10)
                se = SqueezeExcite(store, "se", 8)
                y = rand((2, 8, 4, 6), seed=seed + 20)
                out = se(Tensor(y)).data
                assert out.shape == y.shape
                nz = y != 0
                assert np.all(np.abs(out[nz]) < np.abs(y[nz]))


class TestCriterion3DropInStructure:
    def test_drop_in_structure(self):
        with criterion(3, "SE drop-in: parameter diff, identical shapes, "
                          "FLOPs delta analytic and < 0.5%"):
            vit = build(ModelSpec(variant="gelan-vit"), seed=0)
            se = build(ModelSpec(variant="gelan-vit-se"), seed=0)

            extra = set(se.parameter_names()) - set(vit.parameter_names())
            assert extra and all(".se." in name for name in extra)
            assert set(vit.parameter_names()) < set(se.parameter_names())

            x = Tensor(np.random.default_rng(0).random((1, 3, 160, 160)))
            shapes_vit = [o.shape for o in vit.forward(x)]
            shapes_se = [o.shape for o in se.forward(x)]
            assert shapes_vit == shapes_se

            delta = se.count_flops()["total"] - vit.count_flops()["total"]
            s = se.spec.input_size
            analytic = (se.elan3.se.flops(s // 16, s // 16)
                        + se.elan4.se.flops(s // 32, s // 32))
            assert delta == analytic
            assert 0 < delta < 0.005 * se.count_flops()["total"]


class TestCriterion4MetricsOracle:
    def random_box(self, rng, span=20.0):
        x1, y1 = rng.uniform(0, span, 2)
        w, h = rng.uniform(0.5, span / 2, 2)
        return (float(x1), float(y1), float(x1 + w), float(y1 + h))

    def test_metrics_oracle(self):
        with criterion(4, "iou/nms/AP/mAP50:95 match brute-force oracles on 200 "
                          "randomized instances (1e-9); (0,0,2,2)/(1,1,3,3) = 1/7"):
            assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1.0 / 7.0, abs=1e-15)

            rng = np.random.default_rng(42)
            for _ in range(200):
                a, b = self.random_box(rng), self.random_box(rng)
                assert abs(iou(a, b) - iou_naive(a, b)) < 1e-9

            for case in range(200):
                case_rng = np.random.default_rng(1000 + case)
                dets = [Detection(int(case_rng.integers(0, 2)),
                                  float(case_rng.uniform()),
                                  self.random_box(case_rng))
                        for _ in range(case_rng.integers(1, 9))]
                thr = float(case_rng.uniform(0.1, 0.9))
                assert nms(dets, thr) == nms_naive(dets, thr)

            for case in range(200):
                case_rng = np.random.default_rng(5000 + case)
                n_img = int(case_rng.integers(1, 4))
                gts = [[(0, self.random_box(case_rng))
                        for _ in range(case_rng.integers(0, 4))] for _ in range(n_img)]
                dets = [[Detection(0, float(case_rng.uniform()), self.random_box(case_rng))
                         for _ in range(case_rng.integers(0, 5))] for _ in range(n_img)]
                thr = float(case_rng.choice([0.3, 0.5, 0.75]))
                ap, _ = average_precision(dets, gts, thr)
                assert abs(ap - average_precision_naive(dets, gts, thr)) < 1e-9

            rng = np.random.default_rng(7)
            gts = [[(0, self.random_box(rng)) for _ in range(rng.integers(0, 3))]
                   for _ in range(12)]
            dets = [[Detection(0, float(rng.uniform()), self.random_box(rng))
                     for _ in range(rng.integers(0, 5))] for _ in range(12)]
            report = map_suite(dets, gts)
            assert report.map50_95 == np.mean(list(report.ap_by_threshold.values()))
            for thr in IOU_THRESHOLDS:
                assert abs(report.ap_by_threshold[thr]
                           - average_precision_naive(dets, gts, thr)) < 1e-9


class TestCriterion5DatasetProcedure:
    def corpus_digest(self, root: Path) -> str:
        digest = hashlib.sha256()
        for path in sorted(root.rglob("*")):
            if path.is_file():
                digest.update(path.name.encode())
                digest.update(path.read_bytes())
        return digest.hexdigest()

    def test_dataset_procedure(self, tmp_path):
        with criterion(5, "450+150 corpus: range gate exact, boxes match the "
                          "pixel-scan oracle within 1 px, byte-identical regen (< 5 min)"):
            start = time.perf_counter()
            cfg = GenConfig(seed=20)
            manifest = generate_dataset(cfg, tmp_path / "a")
            assert len(manifest["splits"]["train"]) == 450
            assert len(manifest["splits"]["test"]) == 150

            size = cfg.image_size
            boxes_checked = 0
            for split in ("train", "test"):
                for index, record in enumerate(manifest["splits"][split]):
                    for rng_km in record["ranges_km"]:
                        assert rng_km <= cfg.range_gate_km
                    labels = load_labels(tmp_path / "a" / record["label"])
                    assert len(labels) == record["objects"]
                    if not labels:
                        continue
                    camera, scene, _ = sample_frame(cfg, split, index)
                    # annotate() emits per-satellite boxes in scene order
                    pairs = [(sat, anns[0]) for sat in scene
                             for anns in [annotate([sat], camera, cfg.range_gate_km)]
                             if anns]
                    assert len(pairs) == len(labels)
                    for (cls, cx, cy, w, h), (sat, ann) in zip(labels, pairs):
                        assert abs(cx - ann.cx) < 1e-6 and abs(w - ann.w) < 1e-6
                        image = render_frame([sat], camera, frame_seed(cfg, split, index),
                                             stars=False)
                        bounds = tight_pixel_bounds(image)
                        assert bounds is not None
                        x1, y1, x2, y2 = bounds
                        assert abs((cx - w / 2) * size - x1) <= 1.0
                        assert abs((cx + w / 2) * size - x2) <= 1.0
                        assert abs((cy - h / 2) * size - y1) <= 1.0
                        assert abs((cy + h / 2) * size - y2) <= 1.0
                        boxes_checked += 1
            assert boxes_checked > 300

            generate_dataset(cfg, tmp_path / "b")
            assert self.corpus_digest(tmp_path / "a") == self.corpus_digest(tmp_path / "b")
            assert time.perf_counter() - start < 300.0


OVERFIT_GEN = dict(train_count=16, test_count=0, seed=3,
                   depth_range_km=(0.02, 0.15), size_range_m=(3.0, 6.0),
                   star_rate=0.0)
OVERFIT_TRAIN = dict(epochs=300, batch_size=4, lr=2e-3, seed=0,
                     eval_every=25, conf_threshold=0.01, target_map50=0.9)


class TestCriterion6ToyLearning:
    def test_toy_overfit_both_variants(self, tmp_path):
        with criterion(6, "16-image overfit: gelan-vit-se and gelan-t reach "
                          "training mAP50 >= 0.9 within 300 epochs (< 30 min)"):
            start = time.perf_counter()
            generate_dataset(GenConfig(**OVERFIT_GEN), tmp_path)
            images, labels = load_split(tmp_path, "train")
            assert len(images) == 16

            results = {}
            for variant in ("gelan-vit-se", "gelan-t"):
                model = build(ModelSpec(variant=variant), seed=0)
                log, _ = train(model, images, labels, TrainConfig(**OVERFIT_TRAIN))
                scored = [r.map50 for r in log.rows if r.map50 is not None]
                results[variant] = (max(scored), log.rows[-1].epoch)
                print(f"  {variant}: best mAP50 {max(scored):.3f} "
                      f"at epoch {log.rows[-1].epoch}", flush=True)

            for variant, (best, epoch) in results.items():
                assert best >= 0.9, f"{variant} reached only {best:.3f}"
                assert epoch <= 300
            assert time.perf_counter() - start < 1800.0


class NoOpModel:
    def forward(self, images):
        return images


class TestCriterion7BenchProtocol:
    def test_bench_protocol(self):
        with criterion(7, "bench: 25 runs, 5 discarded, 20 retained, batch 1; "
                          "mean recomputed; no-op forward < 1 ms"):
            model = build(ModelSpec(variant="gelan-t", input_size=96), seed=0)
            report = time_inference(model, runs=25, discard=5, name="gelan-t")
            assert report.runs_total == 25
            assert report.runs_discarded == 5
            assert report.retained == 20
            assert report.batch_size == 1
            retained = report.latencies_ms[5:]
            assert len(retained) == 20
            assert report.mean_ms == pytest.approx(sum(retained) / 20.0, abs=5e-4)

            noop = time_inference(NoOpModel(), input_size=96, runs=10, discard=2)
            assert noop.mean_ms < 1.0


class TestCriterion8OrbitMath:
    def test_orbit_math(self):
        with criterion(8, "orbit: |r| drift < 1e-9 over a period; 550 km period "
                          "matches 2*pi*sqrt(r^3/mu) within 1e-6"):
            orbit = OrbitConfig(altitude_km=550.0, inclination=0.9, raan=2.1, phase=0.4)
            period = orbital_period(orbit)
            r = orbit.radius_km
            for t in np.linspace(0.0, period, 201):
                pos, _ = propagate(orbit, float(t))
                assert abs(np.linalg.norm(pos) - r) / r < 1e-9

            closed_form = 2.0 * math.pi * math.sqrt(r ** 3 / MU_EARTH_KM3_S2)
            assert abs(period - closed_form) / closed_form < 1e-6

            p0, _ = propagate(orbit, 0.0)
            p1, _ = propagate(orbit, period)
            assert np.linalg.norm(p1 - p0) < 1e-6
