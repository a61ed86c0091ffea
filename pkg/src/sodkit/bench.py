"""Steady-state inference benchmarking: forward-only wall time at batch 1
over repeated runs with warm-up discards, plus best-effort peak memory.

Timing wraps the model's forward call alone — input construction, decode,
NMS, and metric computation all stay outside the clock.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor

DEFAULT_RUNS = 25
DEFAULT_DISCARD = 5


@dataclass
class BenchReport:
    model_name: str
    input_size: int
    batch_size: int
    runs_total: int
    runs_discarded: int
    latencies_ms: list[float]
    mean_ms: float
    median_ms: float
    stddev_ms: float
    peak_memory_bytes: int | None
    peak_memory_source: str | None
    peak_power_mw: float | None = None  # requires platform sensors; left absent
    retained: int = field(init=False)

    def __post_init__(self):
        self.retained = self.runs_total - self.runs_discarded

    def to_dict(self) -> dict:
        return asdict(self)

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def from_dict(payload: dict) -> "BenchReport":
        payload = dict(payload)
        payload.pop("retained", None)
        return BenchReport(**payload)

    @staticmethod
    def load_json(path: str | Path) -> "BenchReport":
        return BenchReport.from_dict(json.loads(Path(path).read_text()))

    def summary_line(self) -> str:
        if self.peak_memory_bytes is None:
            ram = "ram n/a"
        else:
            ram = f"{self.peak_memory_bytes / 1e9:.3f} GB"
        power = "power n/a" if self.peak_power_mw is None else f"{self.peak_power_mw:.1f} mW"
        return (f"{self.model_name}: {self.mean_ms:.2f} ms | {ram} | {power} "
                f"({self.retained} retained of {self.runs_total} runs, batch {self.batch_size})")


def _peak_rss_bytes() -> tuple[int | None, str | None]:
    try:
        import resource
    except ImportError:
        return None, None
    peak_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return int(peak_kb) * 1024, "getrusage.ru_maxrss"


def time_inference(model, input_size: int | None = None, runs: int = DEFAULT_RUNS,
                   discard: int = DEFAULT_DISCARD, name: str | None = None,
                   seed: int = 0) -> BenchReport:
    """Measure forward latency over ``runs`` consecutive calls at batch 1,
    discarding the first ``discard`` as warm-up."""
    if not runs > discard >= 0:
        raise ValueError(f"need runs > discard >= 0, got runs={runs} discard={discard}")
    if input_size is None:
        input_size = model.spec.input_size
    images = Tensor(np.random.default_rng(seed).random((1, 3, input_size, input_size)))

    latencies = []
    for _ in range(runs):
        start = time.perf_counter_ns()
        model.forward(images)
        stop = time.perf_counter_ns()
        latencies.append((stop - start) / 1e6)

    retained = latencies[discard:]
    peak_bytes, peak_source = _peak_rss_bytes()
    return BenchReport(
        model_name=name or getattr(getattr(model, "spec", None), "variant", "model"),
        input_size=input_size,
        batch_size=1,
        runs_total=runs,
        runs_discarded=discard,
        latencies_ms=[round(v, 4) for v in latencies],
        mean_ms=round(statistics.fmean(retained), 4),
        median_ms=round(statistics.median(retained), 4),
        stddev_ms=round(statistics.stdev(retained) if len(retained) > 1 else 0.0, 4),
        peak_memory_bytes=peak_bytes,
        peak_memory_source=peak_source,
    )


def peak_memory(model, input_size: int | None = None) -> int | None:
    """Best-effort process high-water mark after one forward pass."""
    if input_size is None:
        input_size = model.spec.input_size
    images = Tensor(np.zeros((1, 3, input_size, input_size)))
    model.forward(images)
    peak_bytes, _ = _peak_rss_bytes()
    return peak_bytes
