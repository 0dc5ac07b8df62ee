"""PCR container: fixed header, sample metadata, index, then scan groups.

On-disk layout (all integers little-endian):

    offset 0   magic "PCR1"
    offset 4   u16 format version (currently 1)
    offset 6   u16 flags (reserved, 0)
    offset 8   u32 n_images
    offset 12  u16 n_groups
    offset 14  6 reserved bytes (0)
    offset 20  u32 CRC-32 of metadata block + index block
    offset 24  metadata block: u32 block length (self-inclusive), then per
               image: u64 sample_id, i32 label, u8 n_scans, u16 name length,
               UTF-8 name
    ...        index block: n_groups u64 absolute group offsets, then the
               n_groups x n_images table of u32 byte lengths (group-major)
    ...        payload: scan groups 1..G, each group holding every image's
               bytes in record order

Group g >= 2 stores each image's scan g; group 1 additionally prepends the
image's header bytes. Images with fewer scans than n_groups contribute
zero-length entries to the higher groups; surplus scans beyond n_groups are
concatenated into the final group. Scan group 0 is the metadata itself
(labels only) and has no payload.
"""

import dataclasses
import struct
import zlib
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import (BadMagic, ContainerError, CorruptIndex, EmptyRecord,
                     VersionUnsupported)
from .jpeg_scan import ScanMap, parse_scans

MAGIC = b"PCR1"
FORMAT_VERSION = 1
HEADER_SIZE = 24
MAX_GROUPS = 64

_HEADER = struct.Struct("<4sHHIH6sI")
_META_ENTRY = struct.Struct("<QiBH")  # sample_id, label, n_scans, name length


@dataclass(frozen=True)
class SampleMeta:
    sample_id: int
    label: int
    source_name: str
    n_scans: int = 0


@dataclass
class PcrIndex:
    n_images: int
    n_groups: int
    group_offsets: np.ndarray  # (G,) u64 absolute offsets of groups 1..G
    per_image_group_lengths: np.ndarray  # (G, n_images) u32
    metadata_len: int  # metadata block size in bytes, length prefix included

    def group_size(self, g: int) -> int:
        return int(self.per_image_group_lengths[g - 1].sum())

    @property
    def index_nbytes(self) -> int:
        return 8 * self.n_groups + 4 * self.n_groups * self.n_images

    @property
    def payload_start(self) -> int:
        return HEADER_SIZE + self.metadata_len + self.index_nbytes

    @property
    def payload_nbytes(self) -> int:
        return int(self.per_image_group_lengths.sum(dtype=np.uint64))

    @property
    def file_nbytes(self) -> int:
        return self.payload_start + self.payload_nbytes

    def cumulative_image_sizes(self) -> np.ndarray:
        """(G, n_images) cumulative bytes per image through each group."""
        return np.cumsum(self.per_image_group_lengths, axis=0, dtype=np.int64)

    def validate(self) -> None:
        if self.per_image_group_lengths.shape != (self.n_groups, self.n_images):
            raise CorruptIndex("length table shape does not match header counts")
        if self.group_offsets.shape != (self.n_groups,):
            raise CorruptIndex("group offset count does not match header")
        expect = self.payload_start
        for g in range(1, self.n_groups + 1):
            if int(self.group_offsets[g - 1]) != expect:
                raise CorruptIndex(f"group {g} offset inconsistent with sizes")
            expect += self.group_size(g)
        if self.n_groups > 1 and not np.all(np.diff(self.group_offsets.astype(np.int64)) >= 0):
            raise CorruptIndex("group offsets not non-decreasing")


@dataclass
class PcrRecord:
    index: PcrIndex
    metadata: list[SampleMeta]
    group_payloads: list[bytes]  # group_payloads[g-1] is group g

    @property
    def n_images(self) -> int:
        return self.index.n_images

    @property
    def n_groups(self) -> int:
        return self.index.n_groups


def _split_groups(data: bytes, smap: ScanMap, n_groups: int) -> list[bytes]:
    """Assign header+scans of one image to groups 1..n_groups."""
    parts: list[list[bytes]] = [[] for _ in range(n_groups)]
    parts[0].append(data[:smap.header.length])
    for j, rng in enumerate(smap.scans):
        g = min(j + 1, n_groups)
        parts[g - 1].append(data[rng.offset:rng.end])
    return [b"".join(p) for p in parts]


def encode_record(images: Sequence[tuple[bytes, SampleMeta]],
                  n_groups: int = 10) -> PcrRecord:
    """Rearrange parsed images into fidelity-ordered scan groups.

    Every image must parse as a progressive JPEG; parse errors are re-raised
    annotated with the offending sample. The result serializes
    deterministically given input order.
    """
    if not images:
        raise EmptyRecord("a record needs at least one image")
    if not 1 <= n_groups <= MAX_GROUPS:
        raise ValueError(f"n_groups must be in 1..{MAX_GROUPS}")

    seen_ids: set[int] = set()
    metas: list[SampleMeta] = []
    per_image_parts: list[list[bytes]] = []
    for data, meta in images:
        if meta.sample_id in seen_ids:
            raise ContainerError(f"duplicate sample_id {meta.sample_id}")
        seen_ids.add(meta.sample_id)
        try:
            smap = parse_scans(data)
        except Exception as exc:
            raise type(exc)(
                f"sample {meta.sample_id} ({meta.source_name}): {exc}") from exc
        metas.append(dataclasses.replace(meta, n_scans=smap.n_scans))
        per_image_parts.append(_split_groups(data, smap, n_groups))

    n_images = len(metas)
    lengths = np.zeros((n_groups, n_images), dtype=np.uint32)
    payloads: list[bytes] = []
    for g in range(1, n_groups + 1):
        chunks = [per_image_parts[i][g - 1] for i in range(n_images)]
        for i, c in enumerate(chunks):
            lengths[g - 1, i] = len(c)
        payloads.append(b"".join(chunks))

    metadata_len = _metadata_nbytes(metas)
    index = PcrIndex(
        n_images=n_images,
        n_groups=n_groups,
        group_offsets=np.zeros(n_groups, dtype=np.uint64),
        per_image_group_lengths=lengths,
        metadata_len=metadata_len,
    )
    start = index.payload_start
    offsets = [start]
    for g in range(1, n_groups):
        offsets.append(offsets[-1] + index.group_size(g))
    index.group_offsets = np.asarray(offsets, dtype=np.uint64)
    index.validate()
    return PcrRecord(index=index, metadata=metas, group_payloads=payloads)


def _metadata_nbytes(metas: Iterable[SampleMeta]) -> int:
    return 4 + sum(_META_ENTRY.size + len(m.source_name.encode()) for m in metas)


def _serialize_metadata(metas: Sequence[SampleMeta]) -> bytes:
    out = bytearray()
    for m in metas:
        name = m.source_name.encode()
        if len(name) > 0xFFFF:
            raise ContainerError(f"source name too long for sample {m.sample_id}")
        out += _META_ENTRY.pack(m.sample_id, m.label, m.n_scans, len(name))
        out += name
    return struct.pack("<I", 4 + len(out)) + bytes(out)


def _serialize_index(index: PcrIndex) -> bytes:
    return (index.group_offsets.astype("<u8").tobytes()
            + index.per_image_group_lengths.astype("<u4").tobytes())


def container_overhead(n_images: int, n_groups: int,
                       name_byte_lengths: Sequence[int]) -> int:
    """Closed-form byte count of everything in a record except the payload."""
    meta = 4 + sum(_META_ENTRY.size + ln for ln in name_byte_lengths)
    return HEADER_SIZE + meta + 8 * n_groups + 4 * n_groups * n_images


def write_record(record: PcrRecord, sink: BinaryIO) -> int:
    """Serialize a record to ``sink``; returns the number of bytes written."""
    meta_block = _serialize_metadata(record.metadata)
    if len(meta_block) != record.index.metadata_len:
        raise ContainerError("metadata length disagrees with index")
    index_block = _serialize_index(record.index)
    checksum = zlib.crc32(meta_block + index_block)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, 0, record.index.n_images,
                          record.index.n_groups, b"\0" * 6, checksum)
    written = 0
    for chunk in (header, meta_block, index_block, *record.group_payloads):
        sink.write(chunk)
        written += len(chunk)
    if written != record.index.file_nbytes:
        raise ContainerError("serialized size disagrees with index")
    return written


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise CorruptIndex(f"short read while loading {what}")
    return data


def read_index(source: BinaryIO) -> tuple[PcrIndex, list[SampleMeta]]:
    """Load index and sample metadata; payload bytes are never touched."""
    header = _read_exact(source, HEADER_SIZE, "header")
    magic, version, _flags, n_images, n_groups, _rsvd, checksum = _HEADER.unpack(header)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"format version {version}")
    if n_images == 0 or n_images > 2**24 or not 1 <= n_groups <= MAX_GROUPS:
        raise CorruptIndex(f"implausible counts: {n_images} images, {n_groups} groups")

    len_prefix = _read_exact(source, 4, "metadata length")
    metadata_len = struct.unpack("<I", len_prefix)[0]
    max_meta = min(4 + n_images * (_META_ENTRY.size + 0xFFFF), 2**30)
    if metadata_len < 4 + n_images * _META_ENTRY.size or metadata_len > max_meta:
        raise CorruptIndex(f"implausible metadata length {metadata_len}")
    meta_entries = _read_exact(source, metadata_len - 4, "metadata block")
    index_block = _read_exact(source, 8 * n_groups + 4 * n_groups * n_images, "index block")

    if zlib.crc32(len_prefix + meta_entries + index_block) != checksum:
        raise CorruptIndex("metadata/index checksum mismatch")

    metas: list[SampleMeta] = []
    pos = 0
    for _ in range(n_images):
        if pos + _META_ENTRY.size > len(meta_entries):
            raise CorruptIndex("metadata block shorter than declared entries")
        sample_id, label, n_scans, name_len = _META_ENTRY.unpack_from(meta_entries, pos)
        pos += _META_ENTRY.size
        if pos + name_len > len(meta_entries):
            raise CorruptIndex("metadata name overruns block")
        name = meta_entries[pos:pos + name_len].decode()
        pos += name_len
        metas.append(SampleMeta(sample_id, label, name, n_scans))
    if pos != len(meta_entries):
        raise CorruptIndex("metadata block has trailing bytes")

    offsets = np.frombuffer(index_block, dtype="<u8", count=n_groups)
    lengths = np.frombuffer(index_block, dtype="<u4",
                            offset=8 * n_groups).reshape(n_groups, n_images)
    index = PcrIndex(
        n_images=n_images,
        n_groups=n_groups,
        group_offsets=offsets.astype(np.uint64),
        per_image_group_lengths=lengths.astype(np.uint32),
        metadata_len=metadata_len,
    )
    index.validate()
    return index, metas
