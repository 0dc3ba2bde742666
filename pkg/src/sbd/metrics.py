"""Image-fidelity (PSNR/SSIM) and detection-set metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ParameterError, ValidationError
from .validation import as_image_array, check_odd

PSNR_CAP = 300.0  # returned when the MSE is numerically zero (< peak^2 * 1e-30)


def psnr(reference, test, peak=None):
    """Peak signal-to-noise ratio, 10*log10(peak^2 / MSE), in dB.

    ``peak`` defaults to the maximum of the reference. Numerically identical
    images return the documented cap of 300 dB.
    """
    ref = as_image_array(reference, "reference")
    tst = as_image_array(test, "test")
    if ref.shape != tst.shape:
        raise ValidationError(f"shape mismatch {ref.shape} vs {tst.shape}")
    if peak is None:
        peak = float(ref.max())
    if not np.isfinite(peak) or peak <= 0:
        raise ParameterError(f"peak must be positive, got {peak!r}")
    mse = float(np.mean((ref - tst) ** 2))
    if mse < peak * peak * 1e-30:
        return PSNR_CAP
    return 10.0 * np.log10(peak * peak / mse)


def _gaussian_window_mean(arr, window, sigma):
    """Gaussian-weighted local mean over a window x window neighborhood,
    cropped to the region where the window fits entirely."""
    half = window // 2
    x = np.arange(window) - half
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    out = ndimage.correlate1d(arr, kernel, axis=0, mode="constant")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="constant")
    return out[half:arr.shape[0] - half, half:arr.shape[1] - half]


def ssim(reference, test, window=11, dynamic_range=None):
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Both images are normalized by the reference maximum (low-intensity count
    images would otherwise make the stabilizing constants dominate); the
    default dynamic range L is the normalized reference's max - min, and the
    constants are C1 = (0.01 L)^2, C2 = (0.03 L)^2. A zero dynamic range
    returns 1 for identical images, else 0 with a warning.
    """
    ref = as_image_array(reference, "reference")
    tst = as_image_array(test, "test")
    if ref.shape != tst.shape:
        raise ValidationError(f"shape mismatch {ref.shape} vs {tst.shape}")
    window = check_odd(window, "window")
    if min(ref.shape) < window:
        raise ParameterError(f"image smaller than the {window}x{window} window")

    peak = float(np.max(np.abs(ref)))
    if peak > 0:
        ref = ref / peak
        tst = tst / peak
    if dynamic_range is None:
        span = float(ref.max() - ref.min())
    else:
        span = float(dynamic_range) / (peak if peak > 0 else 1.0)
    if span == 0.0:
        if np.array_equal(ref, tst):
            return 1.0
        warnings.warn("ssim: zero dynamic range with differing images; returning 0",
                      RuntimeWarning, stacklevel=2)
        return 0.0

    sigma = 1.5
    c1 = (0.01 * span) ** 2
    c2 = (0.03 * span) ** 2
    mu_x = _gaussian_window_mean(ref, window, sigma)
    mu_y = _gaussian_window_mean(tst, window, sigma)
    xx = _gaussian_window_mean(ref * ref, window, sigma)
    yy = _gaussian_window_mean(tst * tst, window, sigma)
    xy = _gaussian_window_mean(ref * tst, window, sigma)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricsReport:
    """Fidelity and detection scores for one comparison."""

    psnr: float
    ssim: float
    precision: float
    recall: float
    f1: float
    jaccard: float
    counts: tuple  # (tp, fp, fn)
    scope: str = "all"


def detection_metrics(matching, n_a, n_b, scope="all") -> MetricsReport:
    """Set metrics from a matching of detections A against ground truth B.

    precision = TP/|A|, recall = TP/|B| with TP = number of matched pairs;
    F1 is their harmonic mean and jaccard = TP / (|A| + |B| - TP). When both
    sets are empty the scores are 1 by convention; when only one side is
    empty, the affected ratio is 0.
    """
    n_a, n_b = int(n_a), int(n_b)
    tp = len(matching.pairs)
    if tp > min(n_a, n_b):
        raise ValidationError(f"{tp} pairs exceed set sizes |A|={n_a} |B|={n_b}")
    if n_a == 0 and n_b == 0:
        precision = recall = f1 = jaccard = 1.0
    else:
        precision = tp / n_a if n_a else 0.0
        recall = tp / n_b if n_b else 0.0
        f1 = (2.0 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        jaccard = tp / (n_a + n_b - tp)
    return MetricsReport(float("nan"), float("nan"), precision, recall, f1,
                         jaccard, (tp, n_a - tp, n_b - tp), scope)
