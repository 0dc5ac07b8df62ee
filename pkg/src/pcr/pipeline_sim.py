"""Deterministic loader->compute pipeline simulation under token-bucket limits.

Time is integer nanoseconds on a virtual clock. The loader is a closed
system (the next record fetch starts once the previous completes and a
prefetch slot is free); the compute unit drains fetched records at its own
rate. Steady-state throughput therefore converges to
min(compute_rate, n * bucket_rate / record_size).
"""

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigInvalid

NS = 1_000_000_000


@dataclass
class TokenBucket:
    """Byte tokens accrue at ``rate`` up to ``capacity``; reads block on deficit."""

    rate: float                  # bytes/second; math.inf disables limiting
    capacity: float | None = None  # default: one second of rate
    tokens: float = field(init=False)
    last_refill: int = field(init=False, default=0)  # ns

    def __post_init__(self):
        if self.rate <= 0:
            raise ConfigInvalid("bucket rate must be positive")
        if self.capacity is None:
            self.capacity = self.rate if math.isfinite(self.rate) else math.inf
        if self.capacity <= 0:
            raise ConfigInvalid("bucket capacity must be positive")
        self.tokens = self.capacity  # starts full: one interval of burst

    def _refill(self, now_ns: int) -> None:
        if now_ns > self.last_refill:
            self.tokens = min(self.capacity,
                              self.tokens + self.rate * (now_ns - self.last_refill) / NS)
            self.last_refill = now_ns

    def acquire(self, nbytes: float, now_ns: int) -> int:
        """Earliest time the last byte's tokens are available; state advances."""
        if not math.isfinite(self.rate):
            return now_ns
        self._refill(now_ns)
        t = now_ns
        need = float(nbytes)
        while need > 0:
            take = min(self.tokens, need)
            self.tokens -= take
            need -= take
            if need <= 0:
                break
            fill = min(self.capacity, need)
            wait = math.ceil(fill / self.rate * NS)
            t += wait
            self._refill(t)
        return t


@dataclass
class SimConfig:
    """Workload description for one node of the pipeline."""

    record_sizes: Sequence[float]      # bytes of groups-1..g prefix, per scan group
    scan_group: int
    images_per_record: int
    compute_rate: float                # Xc images/second; math.inf allowed
    bucket_rate: float                 # bytes/second; math.inf allowed
    bucket_capacity: float | None = None
    prefetch_depth: int = 2
    n_nodes: int = 1
    duration_s: float | None = None
    n_records: int | None = None
    dataset_images: int | None = None
    warmup_records: int = 4
    size_jitter: float = 0.0           # +/- fraction of record size, seeded
    seed: int = 0

    def validate(self) -> None:
        if not self.record_sizes or any(s <= 0 for s in self.record_sizes):
            raise ConfigInvalid("record_sizes must be positive")
        if not 1 <= self.scan_group <= len(self.record_sizes):
            raise ConfigInvalid("scan_group out of range")
        if self.images_per_record <= 0:
            raise ConfigInvalid("images_per_record must be positive")
        if self.compute_rate <= 0:
            raise ConfigInvalid("compute_rate must be positive")
        if self.bucket_rate <= 0:
            raise ConfigInvalid("bucket_rate must be positive")
        if self.prefetch_depth < 1:
            raise ConfigInvalid("prefetch_depth must be >= 1")
        if self.n_nodes < 1:
            raise ConfigInvalid("n_nodes must be >= 1")
        if self.duration_s is None and self.n_records is None:
            raise ConfigInvalid("set duration_s or n_records")
        if not 0 <= self.size_jitter < 1:
            raise ConfigInvalid("size_jitter must be in [0, 1)")


@dataclass(frozen=True)
class BatchEvent:
    fetch_start: int
    fetch_end: int
    compute_start: int
    compute_end: int
    stall: int


@dataclass
class SimTrace:
    events: list[BatchEvent]
    images_per_record: int
    n_nodes: int
    warmup_records: int

    @property
    def n_records(self) -> int:
        return len(self.events)

    @property
    def total_stall_ns(self) -> int:
        return sum(e.stall for e in self.events)

    @property
    def wall_ns(self) -> int:
        return self.events[-1].compute_end if self.events else 0

    @property
    def stall_fraction(self) -> float:
        return self.total_stall_ns / self.wall_ns if self.wall_ns else 0.0

    def throughput_images_per_s(self, *, steady: bool = True) -> float:
        """Aggregate rate across nodes; warm-up records excluded when steady."""
        ev = self.events
        w = self.warmup_records
        if steady and len(ev) > w + 1 and w >= 1:
            span = ev[-1].compute_end - ev[w - 1].compute_end
            count = (len(ev) - w) * self.images_per_record
        else:
            span = ev[-1].compute_end
            count = len(ev) * self.images_per_record
        if span <= 0:
            return math.inf
        return count / span * NS * self.n_nodes

    def to_csv(self, f) -> None:
        w = csv.writer(f)
        w.writerow(["record", "fetch_start_ns", "fetch_end_ns",
                    "compute_start_ns", "compute_end_ns", "stall_ns"])
        for i, e in enumerate(self.events):
            w.writerow([i, e.fetch_start, e.fetch_end,
                        e.compute_start, e.compute_end, e.stall])


def simulate(config: SimConfig) -> SimTrace:
    """Run one node's pipeline; identical config and seed give identical traces."""
    config.validate()
    bucket = TokenBucket(config.bucket_rate, config.bucket_capacity)
    size = float(config.record_sizes[config.scan_group - 1])
    rng = np.random.default_rng(config.seed)

    compute_ns = 0
    if math.isfinite(config.compute_rate):
        compute_ns = math.ceil(config.images_per_record / config.compute_rate * NS)

    duration_ns = None
    if config.duration_s is not None:
        duration_ns = math.ceil(config.duration_s * NS)
    max_records = config.n_records if config.n_records is not None else None

    events: list[BatchEvent] = []
    d = config.prefetch_depth
    while True:
        k = len(events)
        if max_records is not None and k >= max_records:
            break
        fetch_start = events[k - 1].fetch_end if k else 0
        if k >= d:
            fetch_start = max(fetch_start, events[k - d].compute_end)
        if duration_ns is not None and fetch_start >= duration_ns:
            break
        s = size
        if config.size_jitter:
            s = max(1.0, size * (1.0 + config.size_jitter * rng.uniform(-1, 1)))
        fetch_end = bucket.acquire(s, fetch_start)
        prev_compute_end = events[k - 1].compute_end if k else 0
        compute_start = max(fetch_end, prev_compute_end)
        compute_end = compute_start + compute_ns
        stall = max(0, fetch_end - prev_compute_end)
        events.append(BatchEvent(fetch_start, fetch_end, compute_start,
                                 compute_end, stall))

    if not events:
        raise ConfigInvalid("simulation extent admits no records")
    return SimTrace(events=events, images_per_record=config.images_per_record,
                    n_nodes=config.n_nodes, warmup_records=config.warmup_records)


def project_time_to_epoch(source, n_epochs: int,
                          dataset_images: int | None = None) -> float:
    """Seconds for ``n_epochs`` at the steady-state rate of a trace or config."""
    if isinstance(source, SimConfig):
        if dataset_images is None:
            dataset_images = source.dataset_images
        source = simulate(source)
    if dataset_images is None:
        raise ConfigInvalid("dataset_images required for epoch projection")
    rate = source.throughput_images_per_s()
    return n_epochs * dataset_images / rate


@dataclass(frozen=True)
class SweepCell:
    bandwidth: float
    scan_group: int
    images_per_s: float
    stall_fraction: float
    epoch_seconds: float


def sweep(base: SimConfig, bandwidths: Sequence[float],
          scan_groups: Sequence[int]) -> tuple[list[SweepCell], list[str]]:
    """Simulate every (bandwidth, scan group) cell; errors recorded, not raised."""
    cells: list[SweepCell] = []
    errors: list[str] = []
    for b in bandwidths:
        for g in scan_groups:
            cfg = replace(base, bucket_rate=b, bucket_capacity=None, scan_group=g)
            try:
                trace = simulate(cfg)
                rate = trace.throughput_images_per_s()
                epoch = (cfg.dataset_images / rate
                         if cfg.dataset_images else math.nan)
                cells.append(SweepCell(b, g, rate, trace.stall_fraction, epoch))
            except Exception as exc:
                errors.append(f"bandwidth={b} scan_group={g}: {exc}")
                cells.append(SweepCell(b, g, math.nan, math.nan, math.nan))
    return cells, errors


def sweep_to_csv(cells: Sequence[SweepCell], f) -> None:
    w = csv.writer(f)
    w.writerow(["bandwidth", "scan_group", "images_per_sec",
                "stall_fraction", "epoch_seconds"])
    for c in cells:
        w.writerow([f"{c.bandwidth:.10g}", c.scan_group,
                    f"{c.images_per_s:.10g}", f"{c.stall_fraction:.10g}",
                    f"{c.epoch_seconds:.10g}"])


_SCALARS = {
    "scan_group": int, "images_per_record": int, "prefetch_depth": int,
    "n_nodes": int, "n_records": int, "dataset_images": int,
    "warmup_records": int, "seed": int,
    "compute_rate": float, "bucket_rate": float, "bucket_capacity": float,
    "duration_s": float, "size_jitter": float,
}


def parse_config_file(path) -> tuple[SimConfig, dict]:
    """Parse a key=value config file; returns (config, sweep axes).

    Lists (record_sizes, bandwidths, scan_groups) are comma-separated.
    ``inf`` is accepted for rates. Unknown keys raise ConfigInvalid.
    """
    fields: dict = {}
    axes: dict = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigInvalid(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key == "record_sizes":
                fields[key] = [float(v) for v in value.split(",") if v.strip()]
            elif key == "bandwidths":
                axes[key] = [float(v) for v in value.split(",") if v.strip()]
            elif key == "scan_groups":
                axes[key] = [int(v) for v in value.split(",") if v.strip()]
            elif key in _SCALARS:
                fields[key] = _SCALARS[key](value)
            else:
                raise ConfigInvalid(f"{path}:{lineno}: unknown key {key!r}")
    if "record_sizes" not in fields:
        raise ConfigInvalid(f"{path}: record_sizes is required")
    fields.setdefault("scan_group", len(fields["record_sizes"]))
    fields.setdefault("images_per_record", 1024)
    fields.setdefault("compute_rate", math.inf)
    fields.setdefault("bucket_rate", math.inf)
    try:
        config = SimConfig(**fields)
        config.validate()
    except TypeError as exc:
        raise ConfigInvalid(str(exc)) from exc
    return config, axes
