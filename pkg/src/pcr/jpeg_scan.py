"""Progressive JPEG marker scanning: split a byte stream into header + scans.

Works purely on the marker level; entropy-coded data is skipped, never
decoded. Byte accounting is exact: header plus scans always partition the
input, so re-concatenating reproduces it bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import Malformed, NotJpeg, NotProgressive, Truncated, Unsupported

SOI = 0xD8
EOI = 0xD9
SOS = 0xDA
DQT = 0xDB
DNL = 0xDC
DRI = 0xDD
DHP = 0xDE
DHT = 0xC4
DAC = 0xCC
TEM = 0x01
SOF2 = 0xC2

_SOF_CODES = frozenset(
    {0xC0, 0xC1, 0xC2, 0xC3, 0xC5, 0xC6, 0xC7, 0xC9, 0xCA, 0xCB, 0xCD, 0xCE, 0xCF})
_ARITHMETIC_SOFS = frozenset({0xC9, 0xCA, 0xCB, 0xCD, 0xCE, 0xCF})
# Segments a later scan needs to decode; they open the next scan's range so
# that truncating after any complete scan leaves a self-contained stream.
_DECODE_STATE_SEGMENTS = frozenset({DHT, DQT, DRI})

MAX_SCANS = 64


@dataclass(frozen=True)
class ByteRange:
    offset: int
    length: int

    @property
    def end(self) -> int:
        return self.offset + self.length


@dataclass(frozen=True)
class ScanMap:
    """Partition of a progressive JPEG into a header and ordered scan ranges.

    ``header`` covers everything up to the first scan. Each scan range holds
    one SOS segment plus its entropy data; tables emitted between scans
    (DHT/DQT/DRI) belong to the scan that consumes them, while trailing
    APPn/COM/DNL segments stay with the scan they follow.
    """

    header: ByteRange
    scans: tuple[ByteRange, ...]
    total_len: int
    has_trailing_eoi: bool

    @property
    def n_scans(self) -> int:
        return len(self.scans)


def entropy_skip(data, start: int) -> int:
    """Skip entropy-coded data: offset of the first true marker at/after ``start``.

    Stuffed bytes (0xFF 0x00), restart markers (0xFF 0xD0-0xD7) and fill 0xFF
    runs are treated as data. Raises Truncated when no marker follows.
    """
    if start < 0:
        raise ValueError("start must be non-negative")
    buf = data if isinstance(data, np.ndarray) else np.frombuffer(data, np.uint8)
    pos = int(_kernels.find_marker(buf, start))
    if pos < 0:
        raise Truncated(f"no marker found after offset {start}")
    return pos


def _be16(data, pos: int) -> int:
    return (data[pos] << 8) | data[pos + 1]


def parse_scans(data: bytes) -> ScanMap:
    """Parse a single-frame progressive JPEG into header and scan byte ranges.

    Purely structural: validates the marker stream, locates every SOS scan,
    and returns exact byte ranges. Raises NotJpeg / NotProgressive /
    Truncated / Unsupported / Malformed as appropriate; never reads out of
    bounds regardless of input.
    """
    n = len(data)
    if n < 2 or data[0] != 0xFF or data[1] != SOI:
        raise NotJpeg("missing SOI marker")
    buf = np.frombuffer(data, np.uint8)

    pos = 2
    sof_count = 0
    scan_starts: list[int] = []
    pending_start: int | None = None  # first DHT/DQT/DRI since the last scan
    eoi_pos: int | None = None

    while pos < n:
        # Any number of 0xFF fill bytes may precede a marker.
        while pos + 1 < n and data[pos] == 0xFF and data[pos + 1] == 0xFF:
            pos += 1
        if pos + 1 >= n:
            raise Truncated(f"stream ends inside a marker at offset {pos}")
        if data[pos] != 0xFF:
            raise Malformed(f"expected a marker at offset {pos}, found 0x{data[pos]:02X}")
        marker = data[pos + 1]

        if marker == 0x00 or 0xD0 <= marker <= 0xD7:
            raise Malformed(f"stray stuffed/restart byte sequence at offset {pos}")
        if marker == SOI:
            raise Malformed(f"embedded SOI at offset {pos}")
        if marker == EOI:
            if not scan_starts:
                raise Malformed("EOI before any scan")
            eoi_pos = pos
            break
        if marker == TEM:
            pos += 2
            continue
        if marker == DHP:
            raise Unsupported("hierarchical JPEG (DHP) is not supported")
        if marker == DAC:
            raise Unsupported("arithmetic-coded JPEG is not supported")

        if marker in _SOF_CODES:
            sof_count += 1
            if sof_count > 1:
                raise Unsupported("multiple SOF frames are not supported")
            if marker in _ARITHMETIC_SOFS:
                raise Unsupported("arithmetic-coded JPEG is not supported")
            if marker != SOF2:
                raise NotProgressive(
                    f"frame is SOF{marker - 0xC0} (0xFF{marker:02X}), not progressive SOF2")

        if pos + 4 > n:
            raise Truncated(f"stream ends inside segment header at offset {pos}")
        seglen = _be16(data, pos + 2)
        if seglen < 2:
            raise Malformed(f"segment at offset {pos} declares length {seglen}")
        seg_end = pos + 2 + seglen
        if seg_end > n:
            raise Truncated(f"segment at offset {pos} extends past end of stream")

        if marker == SOS:
            if sof_count == 0:
                raise Malformed("SOS before SOF")
            scan_starts.append(pending_start if pending_start is not None else pos)
            pending_start = None
            if len(scan_starts) > MAX_SCANS:
                raise Unsupported(f"more than {MAX_SCANS} scans")
            nxt = _kernels.find_marker(buf, seg_end)
            if nxt < 0:
                raise Truncated("entropy-coded data ends without a marker")
            pos = int(nxt)
            continue

        if scan_starts and pending_start is None and marker in _DECODE_STATE_SEGMENTS:
            pending_start = pos
        pos = seg_end

    if eoi_pos is None:
        raise Truncated("stream ends without EOI")
    if sof_count == 0:
        raise Malformed("no SOF frame found")

    # Bytes after EOI (if any) stay with the last scan so the partition holds.
    header = ByteRange(0, scan_starts[0])
    bounds = scan_starts + [n]
    scans = tuple(
        ByteRange(bounds[i], bounds[i + 1] - bounds[i]) for i in range(len(scan_starts)))
    return ScanMap(
        header=header,
        scans=scans,
        total_len=n,
        has_trailing_eoi=bool(n >= 2 and data[n - 2] == 0xFF and data[n - 1] == EOI),
    )
