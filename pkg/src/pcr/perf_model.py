"""Analytical throughput model: mean sizes, Little's-law rates, min() system law.

All rates are plain doubles in bytes/second and images/second. The closed
forms only depend on mean cumulative sample sizes, never on the shape of
the size distribution.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .container import read_index
from .errors import ContainerError


@dataclass
class SizeStats:
    """Per-group cumulative size statistics over a PCR corpus."""

    per_group_mean: np.ndarray  # (G,) mean bytes through group g
    baseline_mean: float        # mean full-fidelity sample size
    n_samples: int
    per_group_q25: np.ndarray
    per_group_q50: np.ndarray
    per_group_q75: np.ndarray

    @property
    def n_groups(self) -> int:
        return len(self.per_group_mean)

    def validate(self) -> None:
        if np.any(np.diff(self.per_group_mean) < 0):
            raise ValueError("cumulative means must be non-decreasing")
        if not np.isclose(self.per_group_mean[-1], self.baseline_mean, rtol=1e-12):
            raise ValueError("cumulative mean at G must equal the baseline mean")


def stats_from_sizes(cumulative_sizes: np.ndarray) -> SizeStats:
    """Build stats from a (G, n_samples) matrix of per-image cumulative bytes."""
    cumulative_sizes = np.asarray(cumulative_sizes, dtype=np.float64)
    means = cumulative_sizes.mean(axis=1)
    q25, q50, q75 = np.quantile(cumulative_sizes, [0.25, 0.5, 0.75], axis=1)
    return SizeStats(
        per_group_mean=means,
        baseline_mean=float(means[-1]),
        n_samples=cumulative_sizes.shape[1],
        per_group_q25=q25,
        per_group_q50=q50,
        per_group_q75=q75,
    )


def collect_stats(paths: Iterable) -> SizeStats:
    """Compute per-group cumulative size stats from record indexes only."""
    columns = []
    n_groups = None
    for path in _expand(paths):
        with open(path, "rb") as f:
            index, _ = read_index(f)
        if n_groups is None:
            n_groups = index.n_groups
        elif index.n_groups != n_groups:
            raise ContainerError(
                f"{path}: group count {index.n_groups} differs from {n_groups}")
        columns.append(index.cumulative_image_sizes())
    if not columns:
        raise ContainerError("no records found")
    return stats_from_sizes(np.concatenate(columns, axis=1))


def _expand(paths) -> list[Path]:
    if isinstance(paths, (str, Path)):
        paths = [paths]
    out: list[Path] = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out.extend(sorted(p.glob("*.pcr")))
        else:
            out.append(p)
    return out


@dataclass
class ThroughputModel:
    """Bandwidth + compute rate + size stats; yields rate/speedup predictions."""

    bandwidth: float       # W, bytes/second
    compute_rate: float    # Xc, images/second
    stats: SizeStats
    record_overhead_s: float = 0.0  # constant per-record cost (seek), default 0
    images_per_record: int | None = None

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.compute_rate <= 0:
            raise ValueError("compute rate must be positive")
        if self.record_overhead_s and not self.images_per_record:
            raise ValueError("record overhead needs images_per_record")


class SystemPoint(NamedTuple):
    throughput: float
    utilization: float


def pipeline_throughput(model: ThroughputModel, g: int) -> float:
    """Data-pipeline rate at group g: bandwidth over mean cumulative size."""
    mean = float(model.stats.per_group_mean[g - 1])
    if model.record_overhead_s:
        n = model.images_per_record
        return n / (n * mean / model.bandwidth + model.record_overhead_s)
    return model.bandwidth / mean


def system_throughput(model: ThroughputModel, g: int) -> SystemPoint:
    """System rate is the min of compute and pipeline rates (with utilization)."""
    xg = pipeline_throughput(model, g)
    return SystemPoint(
        throughput=min(model.compute_rate, xg),
        utilization=min(1.0, xg / model.compute_rate),
    )


def speedup(model: ThroughputModel, from_g: int, to_g: int) -> float:
    """Max speedup switching from group ``from_g`` to ``to_g``.

    Ratio of mean cumulative sizes; only attained when the pipeline is
    data-bound at both operating points.
    """
    return float(model.stats.per_group_mean[from_g - 1]
                 / model.stats.per_group_mean[to_g - 1])


def stats_to_csv(stats: SizeStats, f) -> None:
    w = csv.writer(f)
    w.writerow(["group", "cumulative_mean_bytes", "q25", "q50", "q75"])
    for g in range(1, stats.n_groups + 1):
        w.writerow([g,
                    f"{stats.per_group_mean[g - 1]:.10g}",
                    f"{stats.per_group_q25[g - 1]:.10g}",
                    f"{stats.per_group_q50[g - 1]:.10g}",
                    f"{stats.per_group_q75[g - 1]:.10g}"])
