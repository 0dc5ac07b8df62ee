"""Prefix reads of PCR files and reassembly into standalone JPEG streams.

A fidelity-g read consumes exactly header + metadata + index + groups 1..g
in one forward pass. Payload bytes stream through a pair of reusable
buffers: a producer fills the idle buffer while the consumer drains the
ready one, exchanging at buffer granularity.
"""

import os
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .container import PcrIndex, SampleMeta, read_index
from .errors import (FidelityUnavailable, PcrError, TruncatedPayload,
                     ZeroLengthImage)

EOI_BYTES = b"\xff\xd9"
DEFAULT_CHUNK = 4 * 1024 * 1024


@dataclass(frozen=True)
class FidelityRequest:
    scan_group: int

    def __post_init__(self):
        if self.scan_group < 0:
            raise ValueError("scan_group must be >= 0")


@dataclass(frozen=True)
class AssembledImage:
    meta: SampleMeta
    jpeg_bytes: bytes
    groups_used: int


class DoubleBuffer:
    """Two reusable slots exchanged between one producer and one consumer.

    The producer acquires an idle slot, fills it, and publishes it; the
    consumer takes the oldest published slot and releases it when drained.
    Slot state is asserted on every transition, so any overlap of filling
    and consuming raises immediately.
    """

    IDLE, FILLING, READY, CONSUMING = range(4)

    def __init__(self, slot_nbytes: int):
        self._slots = [bytearray(slot_nbytes), bytearray(slot_nbytes)]
        self._state = [self.IDLE, self.IDLE]
        self._free: queue.Queue = queue.Queue()
        self._ready: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._free.put(0)
        self._free.put(1)

    def _transition(self, slot: int, expect: int, new: int) -> None:
        with self._lock:
            if self._state[slot] != expect:
                raise RuntimeError(
                    f"double-buffer contract violated: slot {slot} in state "
                    f"{self._state[slot]}, expected {expect}")
            self._state[slot] = new

    def acquire_for_fill(self) -> tuple[int, memoryview]:
        slot = self._free.get()
        self._transition(slot, self.IDLE, self.FILLING)
        return slot, memoryview(self._slots[slot])

    def publish(self, slot: int, nbytes: int) -> None:
        self._transition(slot, self.FILLING, self.READY)
        self._ready.put((slot, nbytes))

    def publish_end(self, error: BaseException | None = None) -> None:
        self._ready.put((None, error))

    def take_ready(self) -> tuple[int | None, object]:
        slot, payload = self._ready.get()
        if slot is not None:
            self._transition(slot, self.READY, self.CONSUMING)
        return slot, payload

    def release(self, slot: int) -> None:
        self._transition(slot, self.CONSUMING, self.IDLE)
        self._free.put(slot)

    def view(self, slot: int, nbytes: int) -> memoryview:
        return memoryview(self._slots[slot])[:nbytes]


@dataclass
class PrefixBuffers:
    """Result of a prefix read: index, metadata, and group payload buffers."""

    index: PcrIndex
    metas: list[SampleMeta]
    groups: list[bytes]  # groups[k] holds scan group k+1
    scan_group: int
    bytes_read: int
    _image_offsets: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self._image_offsets:
            lens = self.index.per_image_group_lengths.astype(np.int64)
            for g in range(self.scan_group):
                self._image_offsets.append(
                    np.concatenate(([0], np.cumsum(lens[g][:-1]))))

    def image_slice(self, g: int, image_i: int) -> bytes:
        off = int(self._image_offsets[g - 1][image_i])
        ln = int(self.index.per_image_group_lengths[g - 1, image_i])
        return self.groups[g - 1][off:off + ln]


def _fill_groups_double_buffered(source: BinaryIO, sizes: list[int],
                                 chunk_size: int) -> list[bytes]:
    total = sum(sizes)
    buf = DoubleBuffer(chunk_size)
    out = bytearray(total)

    def produce():
        try:
            remaining = total
            while remaining > 0:
                slot, view = buf.acquire_for_fill()
                want = min(chunk_size, remaining)
                got = source.readinto(view[:want])
                if not got:
                    buf.publish(slot, 0)
                    buf.publish_end(TruncatedPayload(
                        "file ends before the requested scan group"))
                    return
                remaining -= got
                buf.publish(slot, got)
            buf.publish_end()
        except BaseException as exc:  # surfaced on the consumer side
            buf.publish_end(exc)

    producer = threading.Thread(target=produce, name="pcr-prefix-producer", daemon=True)
    producer.start()
    pos = 0
    try:
        while True:
            slot, payload = buf.take_ready()
            if slot is None:
                if payload is not None:
                    raise payload
                break
            nbytes = payload
            out[pos:pos + nbytes] = buf.view(slot, nbytes)
            pos += nbytes
            buf.release(slot)
    finally:
        producer.join()
    if pos != total:
        raise TruncatedPayload("file ends before the requested scan group")

    groups = []
    start = 0
    for s in sizes:
        groups.append(bytes(out[start:start + s]))
        start += s
    return groups


def _fill_groups_plain(source: BinaryIO, sizes: list[int]) -> list[bytes]:
    groups = []
    for s in sizes:
        chunk = bytearray(s)
        view = memoryview(chunk)
        pos = 0
        while pos < s:
            got = source.readinto(view[pos:])
            if not got:
                raise TruncatedPayload("file ends before the requested scan group")
            pos += got
        groups.append(bytes(chunk))
    return groups


def read_prefix(source: BinaryIO, req: FidelityRequest, *,
                double_buffer: bool = True,
                chunk_size: int = DEFAULT_CHUNK) -> PrefixBuffers:
    """Read exactly the bytes for groups 1..req.scan_group, forward-only."""
    index, metas = read_index(source)
    g = req.scan_group
    if g > index.n_groups:
        raise FidelityUnavailable(
            f"requested scan group {g} but record has {index.n_groups}")
    sizes = [index.group_size(k) for k in range(1, g + 1)]
    if g == 0:
        groups: list[bytes] = []
    elif double_buffer:
        groups = _fill_groups_double_buffered(source, sizes, chunk_size)
    else:
        groups = _fill_groups_plain(source, sizes)
    bytes_read = index.payload_start + sum(sizes)
    return PrefixBuffers(index=index, metas=metas, groups=groups,
                         scan_group=g, bytes_read=bytes_read)


def assemble(prefix: PrefixBuffers, image_i: int,
             g: int | None = None) -> AssembledImage:
    """Concatenate image_i's slices through group g and terminate with EOI.

    The EOI is appended only when the concatenation does not already end
    with one, so a full-fidelity assembly reproduces the source bit-exactly.
    """
    if g is None:
        g = prefix.scan_group
    if not 1 <= g <= prefix.scan_group:
        raise ValueError(f"group {g} not loaded (prefix holds 1..{prefix.scan_group})")
    if not 0 <= image_i < prefix.index.n_images:
        raise IndexError(f"image {image_i} out of range")
    parts = []
    for k in range(1, g + 1):
        s = prefix.image_slice(k, image_i)
        if s:
            parts.append(s)
    if not parts or prefix.index.per_image_group_lengths[0, image_i] == 0:
        raise ZeroLengthImage(f"image {image_i} has no bytes in scan group 1")
    data = b"".join(parts)
    if not data.endswith(EOI_BYTES):
        data += EOI_BYTES
    return AssembledImage(meta=prefix.metas[image_i], jpeg_bytes=data, groups_used=g)


def _record_paths(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.pcr"))
        if not files:
            raise FileNotFoundError(f"no .pcr files under {p}")
        return files
    return [p]


def open_record(path, req: FidelityRequest, *, double_buffer: bool = True,
                direct_io: bool | None = None) -> PrefixBuffers:
    """Open one .pcr file and read its prefix at the requested fidelity."""
    if direct_io is None:
        direct_io = os.environ.get("PCR_DIRECT_IO", "") in ("1", "true", "yes")
    opener = _DirectFile if direct_io else open
    try:
        with opener(path, "rb") as f:
            return read_prefix(f, req, double_buffer=double_buffer)
    except PcrError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def iterate(path, req: FidelityRequest, *, permissive: bool = False,
            double_buffer: bool = True,
            direct_io: bool | None = None) -> Iterator[AssembledImage]:
    """Yield every image of every record under ``path`` at fidelity ``req``.

    Records are visited in sorted filename order; images in record order
    (shuffling is the consumer's job). At scan group 0 the yielded images
    carry empty payloads (labels only). With ``permissive`` set, per-file
    errors are reported on stderr and iteration continues.
    """
    for rec_path in _record_paths(path):
        try:
            prefix = open_record(rec_path, req, double_buffer=double_buffer,
                                 direct_io=direct_io)
        except PcrError:
            if permissive:
                import sys
                import traceback
                traceback.print_exc(file=sys.stderr)
                continue
            raise
        if req.scan_group == 0:
            for meta in prefix.metas:
                yield AssembledImage(meta=meta, jpeg_bytes=b"", groups_used=0)
            continue
        for i in range(prefix.index.n_images):
            yield assemble(prefix, i)


class _DirectFile:
    """O_DIRECT file wrapper with aligned reads, for cache-bypass benchmarks."""

    ALIGN = 4096

    def __init__(self, path, mode="rb"):
        if mode != "rb":
            raise ValueError("only rb supported")
        self._fd = os.open(path, os.O_RDONLY | os.O_DIRECT)
        self._pos = 0
        self._size = os.fstat(self._fd).st_size
        self._scratch = bytearray(2 * 1024 * 1024 + self.ALIGN)
        addr = np.frombuffer(self._scratch, np.uint8).ctypes.data
        skew = (-addr) % self.ALIGN
        self._aligned = memoryview(self._scratch)[skew:skew + 2 * 1024 * 1024]

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def readinto(self, view) -> int:
        want = len(view)
        if want == 0 or self._pos >= self._size:
            return 0
        # Reads must start and end on ALIGN boundaries; over-read and slice.
        lo = (self._pos // self.ALIGN) * self.ALIGN
        hi = min(self._size, self._pos + want)
        hi_aligned = min(((hi + self.ALIGN - 1) // self.ALIGN) * self.ALIGN,
                         (self._size // self.ALIGN) * self.ALIGN + self.ALIGN)
        span = min(hi_aligned - lo, len(self._aligned))
        got = os.preadv(self._fd, [self._aligned[:span]], lo)
        avail = min(got - (self._pos - lo), want, self._size - self._pos)
        if avail <= 0:
            return 0
        view[:avail] = self._aligned[self._pos - lo:self._pos - lo + avail]
        self._pos += avail
        return avail

    def read(self, n: int) -> bytes:
        out = bytearray(n)
        view = memoryview(out)
        pos = 0
        while pos < n:
            got = self.readinto(view[pos:])
            if not got:
                break
            pos += got
        return bytes(out[:pos])
