"""Multi-scale SSIM and per-scan-group fidelity reports.

The metric follows the standard 5-scale formulation: 11x11 Gaussian window
(sigma 1.5), K1=0.01, K2=0.03, dynamic range 255, scale weights
(0.0448, 0.2856, 0.3001, 0.2363, 0.1333), computed on the BT.601 luminance
channel. Between scales, images are 2x2 mean-pooled (odd edges padded
symmetrically). Images too small for five scales use as many scales as fit
an 11-pixel window, with the leading weights renormalized to sum to one.
"""

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels, decode
from .errors import DimensionMismatch, TooSmall
from .reader import FidelityRequest, assemble, open_record, _record_paths

MSSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03

_BT601 = np.array([0.299, 0.587, 0.114])


def _gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def luminance(img: np.ndarray) -> np.ndarray:
    """BT.601 luminance as float64; grayscale inputs pass through."""
    img = np.asarray(img)
    if img.ndim == 2:
        return np.ascontiguousarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        return np.ascontiguousarray(img.astype(np.float64) @ _BT601)
    raise DimensionMismatch(f"expected (H, W) or (H, W, 3), got {img.shape}")


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    if h % 2 or w % 2:
        img = np.pad(img, ((0, h % 2), (0, w % 2)), mode="symmetric")
        h, w = img.shape
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _ssim_maps(a: np.ndarray, b: np.ndarray, data_range: float):
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    k = _gaussian_window()
    mu_a = _kernels.filter_valid(a, k)
    mu_b = _kernels.filter_valid(b, k)
    var_a = _kernels.filter_valid(np.ascontiguousarray(a * a), k) - mu_a * mu_a
    var_b = _kernels.filter_valid(np.ascontiguousarray(b * b), k) - mu_b * mu_b
    cov = _kernels.filter_valid(np.ascontiguousarray(a * b), k) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def feasible_scales(shape: tuple[int, int], max_scales: int = 5) -> int:
    """Scales usable for this size: floor-halved dims must fit the window.

    Five scales from 176 px up; smaller images drop scales one by one.
    """
    h, w = shape
    scales = 0
    while scales < max_scales and min(h, w) >= WINDOW_SIZE:
        scales += 1
        h //= 2
        w //= 2
    return scales


def mssim(img_a: np.ndarray, img_b: np.ndarray, *,
          data_range: float = 255.0, max_scales: int = 5) -> float:
    """Multi-scale SSIM of two equal-size images, in [0, 1]."""
    a = luminance(img_a)
    b = luminance(img_b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape {a.shape} vs {b.shape}")
    scales = feasible_scales(a.shape, max_scales)
    if scales == 0:
        raise TooSmall(
            f"image {a.shape} is smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window")
    weights = MSSIM_WEIGHTS[:scales]
    if scales < len(MSSIM_WEIGHTS):
        weights = weights / weights.sum()
    factors = np.empty(scales)
    for j in range(scales):
        lum, cs = _ssim_maps(a, b, data_range)
        if j < scales - 1:
            factors[j] = np.maximum(cs, 0.0).mean()
            a = _downsample2(a)
            b = _downsample2(b)
        else:
            factors[j] = np.maximum(lum * cs, 0.0).mean()
    return float(np.prod(factors ** weights))


@dataclass
class MssimReport:
    groups: list[int]
    mean: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    n_images: int
    n_failures: int


def report(paths, decoder: Callable[[bytes], np.ndarray] = decode.to_rgb,
           groups: Sequence[int] | None = None,
           max_images: int | None = None) -> MssimReport:
    """Per-scan-group MSSIM against the full-fidelity reconstruction.

    Each image is read once at full fidelity; partial streams for every
    requested group are assembled from the same buffers and decoded.
    Decode failures are counted and excluded from the aggregates.
    """
    scores: dict[int, list[float]] = {}
    n_images = 0
    n_failures = 0
    for rec_path in _record_paths(paths):
        g_max = open_record(rec_path, FidelityRequest(0)).index.n_groups
        use_groups = list(groups) if groups is not None else list(range(1, g_max + 1))
        prefix = open_record(rec_path, FidelityRequest(g_max))
        for i in range(prefix.index.n_images):
            if max_images is not None and n_images >= max_images:
                break
            n_images += 1
            try:
                full = decoder(assemble(prefix, i, g_max).jpeg_bytes)
            except Exception:
                n_failures += 1
                continue
            for g in use_groups:
                try:
                    partial = decoder(assemble(prefix, i, g).jpeg_bytes)
                    scores.setdefault(g, []).append(mssim(partial, full))
                except Exception:
                    n_failures += 1
    gs = sorted(scores)
    arr = [np.asarray(scores[g]) for g in gs]
    return MssimReport(
        groups=gs,
        mean=np.array([a.mean() for a in arr]),
        q25=np.array([np.quantile(a, 0.25) for a in arr]),
        q75=np.array([np.quantile(a, 0.75) for a in arr]),
        n_images=n_images,
        n_failures=n_failures,
    )


def report_to_csv(rep: MssimReport, f) -> None:
    w = csv.writer(f)
    w.writerow(["group", "mean_mssim", "q25", "q75"])
    for i, g in enumerate(rep.groups):
        w.writerow([g, f"{rep.mean[i]:.10g}", f"{rep.q25[i]:.10g}",
                    f"{rep.q75[i]:.10g}"])


def fit_accuracy_regression(mssim_scores: Sequence[float],
                            accuracies: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares accuracy ~ MSSIM fit: (slope, intercept, r_squared).

    Reporting utility for externally supplied accuracy numbers; makes no
    predictive claim.
    """
    x = np.asarray(mssim_scores, dtype=np.float64)
    y = np.asarray(accuracies, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need matching score/accuracy vectors of length >= 2")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else math.nan
    return float(slope), float(intercept), r2
