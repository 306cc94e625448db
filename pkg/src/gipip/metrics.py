"""Reconstruction quality metrics.

All functions take plain numpy arrays with pixel values on a [0, peak]
scale (peak defaults to 1.0).  PSNR of an exact match is +inf; downstream
aggregation excludes infinite entries from means and reports their count.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ConfigurationError, DimensionError


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"mse: shapes {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ArgumentError("mse of empty arrays")
    d = a - b
    return float(np.mean(d * d))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    if peak <= 0:
        raise ArgumentError(f"peak must be positive, got {peak}")
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / err))


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    coords = np.arange(window) - half
    g = np.exp(-(coords * coords) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _local_means(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # valid-mode weighted local means via a sliding window view
    win = kernel.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (win, win))
    return np.tensordot(view, kernel, axes=((2, 3), (0, 1)))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0,
         window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Structural similarity, Gaussian-weighted, valid windows only.

    Inputs are HW or CHW; channels are scored independently and averaged.
    Images smaller than the window are rejected with a hint to pass a
    smaller one.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"ssim: shapes {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise DimensionError(f"ssim expects HW or CHW images, got rank {a.ndim - 1}")
    if window < 3 or window % 2 == 0:
        raise ArgumentError(f"window must be odd and >= 3, got {window}")
    h, w = a.shape[-2:]
    if h < window or w < window:
        raise ConfigurationError(f"image {h}x{w} smaller than ssim window {window}; "
                                 "pass a smaller window explicitly")
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    kernel = _gaussian_kernel(window, sigma)
    scores = []
    for ca, cb in zip(a, b):
        mu_a = _local_means(ca, kernel)
        mu_b = _local_means(cb, kernel)
        e_aa = _local_means(ca * ca, kernel)
        e_bb = _local_means(cb * cb, kernel)
        e_ab = _local_means(ca * cb, kernel)
        var_a = e_aa - mu_a * mu_a
        var_b = e_bb - mu_b * mu_b
        cov = e_ab - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def optimal_assignment(recovered: np.ndarray, truth: np.ndarray) -> tuple[int, ...]:
    """Pairing of recovered images to truth images maximizing total PSNR.

    Brute force over permutations; restricted to batches of at most 8.
    Element i of the result is the truth index matched to recovered[i].
    Exact matches score +inf, so pairings are ranked first by how many
    exact matches they contain and then by the finite PSNR sum.
    """
    recovered, truth = np.asarray(recovered), np.asarray(truth)
    if recovered.shape != truth.shape:
        raise DimensionError(f"assignment: shapes {recovered.shape} vs {truth.shape}")
    n = recovered.shape[0]
    if n < 1:
        raise ArgumentError("assignment of an empty batch")
    if n > 8:
        raise ArgumentError(f"brute-force assignment is limited to 8 images, got {n}")
    score = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            score[i, j] = psnr(recovered[i], truth[j])
    best, best_perm = None, None
    for perm in itertools.permutations(range(n)):
        vals = [score[i, perm[i]] for i in range(n)]
        key = (sum(np.isinf(v) for v in vals),
               sum(v for v in vals if np.isfinite(v)))
        if best is None or key > best:
            best, best_perm = key, perm
    return best_perm


@dataclass(frozen=True)
class MetricReport:
    """Per-image and aggregate quality of one recovered batch."""

    pairing: tuple[int, ...]
    mse_values: tuple[float, ...]
    psnr_values: tuple[float, ...]
    ssim_values: tuple[float, ...]
    mean_mse: float
    mean_psnr: float          # over finite entries only
    psnr_inf_count: int
    mean_ssim: float


def evaluate_batch(recovered: np.ndarray, truth: np.ndarray,
                   assignment: bool = True, peak: float = 1.0,
                   ssim_window: int = 11) -> MetricReport:
    """Score a recovered batch against the ground truth.

    With ``assignment`` the batch is re-paired by optimal MSE first, since
    gradient averaging makes recovered image order arbitrary; without it
    images are compared position by position.
    """
    recovered, truth = np.asarray(recovered), np.asarray(truth)
    if recovered.shape != truth.shape:
        raise DimensionError(f"evaluate_batch: shapes {recovered.shape} vs {truth.shape}")
    if recovered.ndim != 4:
        raise DimensionError(f"evaluate_batch expects NCHW, got rank {recovered.ndim}")
    n = recovered.shape[0]
    pairing = optimal_assignment(recovered, truth) if assignment else tuple(range(n))
    mses, psnrs, ssims = [], [], []
    for i in range(n):
        t = truth[pairing[i]]
        mses.append(mse(recovered[i], t))
        psnrs.append(psnr(recovered[i], t, peak=peak))
        ssims.append(ssim(recovered[i], t, peak=peak, window=ssim_window))
    finite = [p for p in psnrs if np.isfinite(p)]
    inf_count = len(psnrs) - len(finite)
    mean_psnr = float(np.mean(finite)) if finite else float("inf")
    return MetricReport(pairing=pairing,
                        mse_values=tuple(mses),
                        psnr_values=tuple(psnrs),
                        ssim_values=tuple(ssims),
                        mean_mse=float(np.mean(mses)),
                        mean_psnr=mean_psnr,
                        psnr_inf_count=inf_count,
                        mean_ssim=float(np.mean(ssims)))
