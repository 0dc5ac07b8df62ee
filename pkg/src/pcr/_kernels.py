"""Hot numeric kernels with numba-JIT and pure-numpy implementations.

The JIT path is used when numba imports cleanly; set ``PCR_NO_NUMBA=1`` to
force the numpy path (e.g. for debugging or on platforms without numba).
``benchmarks/bench_kernels.py`` compares the two.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_FLAG = os.environ.get("PCR_NO_NUMBA", "").strip().lower()
USING_NUMBA = _FLAG not in ("1", "true", "yes")

if USING_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USING_NUMBA = False


def _find_marker_loop(buf, start):
    # Stuffed 0xFF00 and restart markers 0xFFD0-0xFFD7 are entropy data;
    # runs of 0xFF are fill bytes preceding a marker.
    i = start
    n = buf.shape[0]
    while i < n - 1:
        if buf[i] == 0xFF:
            nxt = buf[i + 1]
            if nxt == 0x00 or (0xD0 <= nxt <= 0xD7):
                i += 2
                continue
            if nxt == 0xFF:
                i += 1
                continue
            return i
        i += 1
    return -1


def find_marker_np(buf, start):
    """Offset of the first true marker (0xFF + code) at/after ``start``, or -1."""
    n = buf.shape[0]
    if start >= n - 1:
        return -1
    cand = np.flatnonzero(buf[start:n - 1] == 0xFF)
    if cand.size == 0:
        return -1
    nxt = buf[start + cand + 1]
    ok = (nxt != 0x00) & (nxt != 0xFF) & ((nxt < 0xD0) | (nxt > 0xD7))
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        return -1
    return int(start + cand[hits[0]])


def _filter_valid_loop(img, kernel):
    h, w = img.shape
    m = kernel.shape[0]
    ow = w - m + 1
    oh = h - m + 1
    tmp = np.empty((h, ow), dtype=np.float64)
    for i in range(h):
        for j in range(ow):
            acc = 0.0
            for t in range(m):
                acc += img[i, j + t] * kernel[t]
            tmp[i, j] = acc
    out = np.empty((oh, ow), dtype=np.float64)
    for i in range(oh):
        for j in range(ow):
            acc = 0.0
            for t in range(m):
                acc += tmp[i + t, j] * kernel[t]
            out[i, j] = acc
    return out


def filter_valid_np(img, kernel):
    """Separable valid-mode correlation of a 2-D image with a 1-D kernel."""
    t = sliding_window_view(img, kernel.shape[0], axis=1) @ kernel
    return sliding_window_view(t, kernel.shape[0], axis=0) @ kernel


if USING_NUMBA:
    # Lazy signatures: parse buffers arrive as read-only np.frombuffer views.
    find_marker_nb = njit(cache=True, nogil=True)(_find_marker_loop)
    filter_valid_nb = njit(cache=True, nogil=True)(_filter_valid_loop)
    find_marker = find_marker_nb
    filter_valid = filter_valid_nb
else:
    find_marker = find_marker_np
    filter_valid = filter_valid_np
