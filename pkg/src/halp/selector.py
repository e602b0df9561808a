"""Deadline-driven model selection and service-reliability Monte Carlo.

Per task the selector picks the highest-accuracy catalog entry whose
predicted latency fits the deadline. Stand-alone latency is the measured
inference time alone (channel and image play no role); distributed latency
adds the image offload: each secondary receives half the image over its own
link, with the two concurrent transfers running at 0.8 of the drawn
per-link throughput, i.e. offload = bits / (1.6 * r).

Image sizes are Gaussian with mean 300 KB and variance 50 KB (standard
deviation ~7.07 KB), truncated at 1 KB.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources

import numpy as np

KB = 1024
IMAGE_MEAN_BYTES = 300 * KB
IMAGE_STD_BYTES = float(np.sqrt(50.0)) * KB  # variance of 50 KB
IMAGE_MIN_BYTES = 1 * KB
OFFLOAD_LINK_FACTOR = 1.6  # two half-image transfers in parallel at 0.8 link efficiency


class Mode(Enum):
    STANDALONE = "standalone"
    HALP = "halp"


class ChannelState(Enum):
    POOR = (25.0, 50.0)
    MEDIUM = (50.0, 75.0)
    GOOD = (75.0, 100.0)

    @property
    def lo(self) -> float:
        return self.value[0]

    @property
    def hi(self) -> float:
        return self.value[1]


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    alpha: float
    rho: int
    t_standalone_ms: float
    t_halp_ms: float
    top1_accuracy: float

    def __post_init__(self):
        if self.t_halp_ms > self.t_standalone_ms:
            raise ValueError(f"{self.name}: distributed time exceeds stand-alone time")
        if not 0.0 <= self.top1_accuracy <= 1.0:
            raise ValueError(f"{self.name}: accuracy must be a fraction in [0, 1]")


@dataclass(frozen=True)
class TaskInstance:
    image_bytes: float
    deadline_ms: float
    rate_mbps: float

    def __post_init__(self):
        if self.image_bytes <= 0:
            raise ValueError("image size must be positive")


def load_catalog(path: str | None = None) -> list[CatalogEntry]:
    if path is None:
        text = resources.files("halp").joinpath("data/catalog.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    doc = json.loads(text)
    return [CatalogEntry(**item) for item in doc["entries"]]


def offload_time_ms(image_bytes: float, rate_mbps: float) -> float:
    return image_bytes * 8 / (OFFLOAD_LINK_FACTOR * rate_mbps * 1e6) * 1e3


def predict_latency(entry: CatalogEntry, task: TaskInstance, mode: Mode) -> float:
    """Milliseconds to finish one task with this entry under the given mode."""
    if mode is Mode.STANDALONE:
        return entry.t_standalone_ms
    return offload_time_ms(task.image_bytes, task.rate_mbps) + entry.t_halp_ms


def select_model(
    catalog: list[CatalogEntry], task: TaskInstance, mode: Mode
) -> CatalogEntry | None:
    """Highest-accuracy entry meeting the deadline; None when nothing fits.
    Ties break toward lower predicted latency, then name."""
    if not catalog:
        raise ValueError("catalog must not be empty")
    best = None
    for entry in catalog:
        latency = predict_latency(entry, task, mode)
        if latency > task.deadline_ms:
            continue
        key = (-entry.top1_accuracy, latency, entry.name)
        if best is None or key < best[0]:
            best = (key, entry)
    return None if best is None else best[1]


@dataclass(frozen=True)
class ReliabilityPoint:
    deadline_ms: float
    failure_prob: float
    expected_accuracy: float
    service_reliability: float


def draw_tasks(rng: np.random.Generator, n: int, channel: ChannelState, deadline_ms: float):
    image = rng.normal(IMAGE_MEAN_BYTES, IMAGE_STD_BYTES, size=n)
    np.maximum(image, IMAGE_MIN_BYTES, out=image)
    rate = rng.uniform(channel.lo, channel.hi, size=n)
    return image, rate


def run_reliability(
    catalog: list[CatalogEntry],
    deadlines_ms,
    channel: ChannelState,
    n_tasks: int,
    seed: int,
    mode: Mode,
) -> list[ReliabilityPoint]:
    """Monte Carlo over tasks: failure probability, mean accuracy of
    successful selections, and accuracy-weighted success probability."""
    if n_tasks < 1:
        raise ValueError("need at least one task")
    acc = np.array([e.top1_accuracy for e in catalog])
    t_standalone = np.array([e.t_standalone_ms for e in catalog])
    t_halp = np.array([e.t_halp_ms for e in catalog])
    points = []
    for d_idx, deadline in enumerate(deadlines_ms):
        rng = np.random.default_rng([seed, d_idx])
        image, rate = draw_tasks(rng, n_tasks, channel, deadline)
        if mode is Mode.STANDALONE:
            latency = np.broadcast_to(t_standalone, (n_tasks, len(catalog)))
        else:
            offload = image * 8 / (OFFLOAD_LINK_FACTOR * rate * 1e6) * 1e3
            latency = offload[:, None] + t_halp[None, :]
        qualifies = latency <= deadline
        feasible = qualifies.any(axis=1)
        masked = np.where(qualifies, acc[None, :], -1.0)
        chosen = masked.max(axis=1)
        chosen = np.where(feasible, chosen, 0.0)
        n_ok = int(feasible.sum())
        points.append(
            ReliabilityPoint(
                deadline_ms=float(deadline),
                failure_prob=1.0 - n_ok / n_tasks,
                expected_accuracy=float(chosen.sum() / n_ok) if n_ok else 0.0,
                service_reliability=float(chosen.mean()),
            )
        )
    return points


def reliability_csv(
    results: dict[tuple[str, str], list[ReliabilityPoint]]
) -> str:
    """CSV rows keyed by (mode, channel), matching the reliability figures."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["deadline_ms", "mode", "channel", "failure_prob", "reliability"])
    for (mode, channel), points in results.items():
        for p in points:
            writer.writerow(
                [f"{p.deadline_ms:g}", mode, channel,
                 f"{p.failure_prob:.6f}", f"{p.service_reliability:.6f}"]
            )
    return buf.getvalue()
