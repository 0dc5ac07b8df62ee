import io
import struct

import numpy as np
import pytest
from PIL import Image

from pcr.container import SampleMeta, encode_record, write_record


def progressive_bytes(arr: np.ndarray, quality: int = 90) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="JPEG", progressive=True, quality=quality)
    return buf.getvalue()


def baseline_bytes(arr: np.ndarray, quality: int = 90) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="JPEG", quality=quality)
    return buf.getvalue()


def natural_image(rng: np.random.Generator, h: int = 96, w: int = 96) -> np.ndarray:
    """Smooth random field with some texture, vaguely photograph-like."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    fx, fy, fz = rng.uniform(0.02, 0.2, 3)
    base = (
        120
        + 70 * np.sin(fx * xx + rng.uniform(0, 6)) * np.cos(fy * yy + rng.uniform(0, 6))
        + 40 * np.sin(fz * (xx + yy))
    )
    noise = rng.normal(0, 12, (h, w))
    # cheap blur to concentrate energy at low frequencies
    for _ in range(2):
        noise = (noise + np.roll(noise, 1, 0) + np.roll(noise, 1, 1)
                 + np.roll(noise, -1, 0) + np.roll(noise, -1, 1)) / 5
    chans = []
    for shift in (0, 25, -25):
        chans.append(np.clip(base + shift + noise * 8, 0, 255))
    return np.stack(chans, axis=-1).astype(np.uint8)


def _segment(marker: int, payload: bytes) -> bytes:
    return bytes([0xFF, marker]) + struct.pack(">H", len(payload) + 2) + payload


def clean_entropy(rng: np.random.Generator, n: int) -> bytes:
    """Random entropy-looking bytes with no 0xFF."""
    raw = rng.integers(0, 255, n, dtype=np.uint8)
    raw[raw == 0xFF] = 0xFE
    return raw.tobytes()


def synth_progressive(n_scans: int, entropy_sizes=None, *, gray=True,
                      seed: int = 0, tables_between_scans: bool = False,
                      h: int = 16, w: int = 16) -> bytes:
    """Structurally valid progressive JPEG with synthetic entropy data.

    Marker layout is real (SOI, JFIF, DQT, SOF2, DHT, n SOS scans, EOI) but
    the entropy bytes are fabricated, so the result parses without decoding.
    """
    rng = np.random.default_rng(seed)
    if entropy_sizes is None:
        entropy_sizes = [int(rng.integers(8, 40)) for _ in range(n_scans)]
    assert len(entropy_sizes) == n_scans

    out = bytearray(b"\xff\xd8")
    out += _segment(0xE0, b"JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00")
    out += _segment(0xDB, b"\x00" + bytes([max(1, (i * 7) % 64) for i in range(64)]))
    n_comp = 1 if gray else 3
    sof = bytes([8]) + struct.pack(">HH", h, w) + bytes([n_comp])
    for c in range(n_comp):
        sof += bytes([c + 1, 0x11, 0])
    out += _segment(0xC2, sof)
    dht = bytes([0x00]) + bytes([0] * 15 + [1]) + bytes([0x05])
    out += _segment(0xC4, dht)
    for s in range(n_scans):
        if tables_between_scans and s > 0:
            out += _segment(0xC4, bytes([0x10]) + bytes([0] * 15 + [1]) + bytes([0x03]))
        sos = bytes([1, 1, 0x00])
        sos += bytes([0 if s == 0 else 1, 0 if s == 0 else 63, s % 14])
        out += _segment(0xDA, sos)
        body = bytearray(clean_entropy(rng, entropy_sizes[s]))
        if len(body) >= 10:
            body[3:3] = b"\xff\x00"      # stuffed byte
            body[8:8] = b"\xff\xd3"      # restart marker treated as data
        out += body
    out += b"\xff\xd9"
    return bytes(out)


def staircase_image(rng: np.random.Generator, cls: int, coarse: float = 18.0,
                    mid: float = 24.0, fine: float = 65.0) -> np.ndarray:
    """Two-class image whose class signal is split across DCT bands.

    The coarse blob survives scan 1, the one-cycle-per-block wave arrives
    with the first luma AC scan, and the 1.5-cycle wave only with the
    second AC band, so gradient similarity climbs in distinct steps.
    """
    yy, xx = np.mgrid[0:64, 0:64].astype(np.float64)
    blob = np.exp(-(((xx - 32) / 22) ** 2 + ((yy - 32) / 22) ** 2))
    med = np.sin(2 * np.pi * xx / 8.0)
    fin = np.sin(2 * np.pi * 1.5 * xx / 8.0)
    sign = 1 if cls == 0 else -1
    base = 128 + rng.normal(0, 5, (64, 64))
    img = base + sign * (coarse * blob + mid * med + fine * fin)
    return np.stack([np.clip(img, 0, 255).astype(np.uint8)] * 3, axis=-1)


def build_staircase_corpus(directory, n_per_class: int = 24, seed: int = 0):
    """Encode the engineered two-class corpus into one record under ``directory``."""
    rng = np.random.default_rng(seed)
    images = []
    sid = 0
    for cls in (0, 1):
        for i in range(n_per_class):
            data = progressive_bytes(staircase_image(rng, cls), quality=50)
            images.append((data, SampleMeta(sid, cls, f"{cls}-{i}.jpg")))
            sid += 1
    record = encode_record(images, n_groups=10)
    path = directory / "staircase.pcr"
    with open(path, "wb") as f:
        write_record(record, f)
    return directory


@pytest.fixture(scope="session")
def staircase_corpus(tmp_path_factory):
    return build_staircase_corpus(tmp_path_factory.mktemp("staircase"))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def real_jpegs():
    """Mixed corpus of PIL-encoded progressive JPEGs (bytes)."""
    rng = np.random.default_rng(42)
    out = []
    for i in range(16):
        h = int(rng.integers(48, 120))
        w = int(rng.integers(48, 120))
        arr = natural_image(rng, h, w)
        if i % 5 == 4:
            out.append(progressive_bytes(arr[:, :, 0], quality=88))  # 6 scans
        else:
            out.append(progressive_bytes(arr, quality=90))           # 10 scans
    return out


@pytest.fixture(scope="session")
def record_file(tmp_path_factory, real_jpegs):
    """One encoded record of the real corpus, on disk."""
    path = tmp_path_factory.mktemp("records") / "corpus.pcr"
    images = [(d, SampleMeta(i, i % 3, f"img-{i:03d}.jpg"))
              for i, d in enumerate(real_jpegs)]
    record = encode_record(images, n_groups=10)
    with open(path, "wb") as f:
        write_record(record, f)
    return path, images, record


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    """Directory of JPEG files with a labels.tsv manifest, for CLI tests."""
    rng = np.random.default_rng(7)
    d = tmp_path_factory.mktemp("dataset")
    lines = []
    for i in range(9):
        arr = natural_image(rng, 64, 64)
        name = f"sample-{i:02d}.jpg"
        (d / name).write_bytes(progressive_bytes(arr, quality=90))
        lines.append(f"{name}\t{i % 3}")
    (d / "labels.tsv").write_text("\n".join(lines) + "\n")
    return d
