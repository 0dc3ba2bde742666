"""Poisson likelihood-ratio evidence maps for detected atom sites.

For each detection, a disk region of radius sqrt(2) x scale is scored by the
per-pixel log-likelihood ratio of two constant-rate explanations of the raw
counts: the rate fitted from the denoised image versus the vacuum rate. The
per-pixel normalization makes regions of different sizes comparable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln

from .errors import CalibrationError, DomainError, ParameterError
from .validation import as_image_array, check_counts, check_positive
from .detect import _alpha_complex, median_nn_distance

RATE_FLOOR = 1e-6  # fitted rates are clamped here to keep log-likelihoods finite
REGION_RADIUS_FACTOR = np.sqrt(2.0)


@dataclass(frozen=True)
class Region:
    """A pixel set with an optional fitted rate. ``kind`` is free-form
    ("atom_candidate", "vacuum", ...)."""

    xs: np.ndarray
    ys: np.ndarray
    kind: str = "atom_candidate"
    fitted_intensity: float | None = None

    @property
    def n_pixels(self) -> int:
        return int(self.xs.size)


def disk_region(center, radius, shape, kind="atom_candidate") -> Region:
    """Disk of pixel centers within ``radius`` of ``center``, clipped to ``shape``."""
    check_positive(radius, "radius")
    h, w = shape
    cx, cy = center
    x0, x1 = max(int(np.floor(cx - radius)), 0), min(int(np.ceil(cx + radius)), w - 1)
    y0, y1 = max(int(np.floor(cy - radius)), 0), min(int(np.ceil(cy + radius)), h - 1)
    if x0 > x1 or y0 > y1:
        return Region(np.empty(0, np.int64), np.empty(0, np.int64), kind)
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    keep = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius
    return Region(xs[keep].astype(np.int64), ys[keep].astype(np.int64), kind)


def fit_region(denoised, region) -> Region:
    """Fit the region's constant rate as the mean of the denoised image over it,
    clamped at the rate floor."""
    arr = as_image_array(denoised, "denoised")
    if region.n_pixels == 0:
        raise ParameterError("cannot fit an empty region")
    rate = max(float(arr[region.ys, region.xs].mean()), RATE_FLOOR)
    return replace(region, fitted_intensity=rate)


def poisson_loglik(noisy, region, rate):
    """Sum over the region of log Poisson(y; rate) = y*log(rate) - rate - log(y!)."""
    arr = as_image_array(noisy, "noisy")
    check_positive(rate, "rate")
    if region.n_pixels == 0:
        raise ParameterError("cannot score an empty region")
    y = check_counts(arr[region.ys, region.xs], "noisy counts in region")
    return float(np.sum(y * np.log(rate) - rate - gammaln(y + 1.0)))


def llr_per_pixel(noisy, region, fit_rate, vacuum_rate):
    """(loglik at the fitted rate - loglik at the vacuum rate) / region size."""
    return ((poisson_loglik(noisy, region, fit_rate)
             - poisson_loglik(noisy, region, vacuum_rate)) / region.n_pixels)


def estimate_vacuum(noisy, detections, dilation=16.0, alpha=None):
    """Estimate the vacuum rate from pixels away from all structure.

    Excludes a disk of radius scale*sqrt(2) + dilation around every detection
    and everything inside the detections' alpha complex, then averages the
    remaining counts. Returns (rate, vacuum Region).
    """
    arr = as_image_array(noisy, "noisy")
    check_counts(arr, "noisy")
    if dilation < 0:
        raise ParameterError(f"dilation must be >= 0, got {dilation!r}")
    h, w = arr.shape
    keep = np.ones(arr.shape, dtype=bool)
    dets = list(detections)
    if dets:
        yy, xx = np.mgrid[0:h, 0:w]
        for d in dets:
            r = d.scale * REGION_RADIUS_FACTOR + dilation
            cx, cy = d.center
            keep &= (xx - cx) ** 2 + (yy - cy) ** 2 > r * r
        if len(dets) >= 3:
            pts = np.array([d.center for d in dets])
            a = alpha if alpha is not None else 1.5 * median_nn_distance(pts)
            tri, kept_tris = _alpha_complex(pts, a)
            if tri is not None and kept_tris.any():
                simplex = tri.find_simplex(np.column_stack([xx.ravel(), yy.ravel()]))
                inside = (simplex >= 0) & kept_tris[np.maximum(simplex, 0)]
                keep &= ~inside.reshape(arr.shape)
    if not keep.any():
        raise CalibrationError("no vacuum pixels left after exclusion")
    ys, xs = np.nonzero(keep)
    region = Region(xs.astype(np.int64), ys.astype(np.int64), "vacuum")
    rate = max(float(arr[keep].mean()), RATE_FLOOR)
    return rate, region


@dataclass(frozen=True)
class LikelihoodMap:
    """Per-region LLR evidence plus a rasterized view."""

    per_region: tuple   # ((region_id, llr_per_pixel), ...)
    raster: np.ndarray
    details: tuple      # ((region_id, cx, cy, radius, n_pixels, fit_rate, vacuum_rate, llr), ...)


def llr_map(noisy, denoised, detections, vacuum_rate) -> LikelihoodMap:
    """Score every detection's disk region against the vacuum explanation."""
    arr = as_image_array(noisy, "noisy")
    den = as_image_array(denoised, "denoised")
    if arr.shape != den.shape:
        raise DomainError(f"shape mismatch {arr.shape} vs {den.shape}")
    check_positive(vacuum_rate, "vacuum_rate")
    dets = list(detections)
    if not dets:
        raise ParameterError("llr_map requires at least one detection")
    raster = np.zeros_like(arr)
    per_region = []
    details = []
    for rid, d in enumerate(dets):
        radius = REGION_RADIUS_FACTOR * d.scale
        region = disk_region(d.center, radius, arr.shape)
        if region.n_pixels == 0:
            continue
        fitted = fit_region(den, region)
        llr = llr_per_pixel(arr, region, fitted.fitted_intensity, vacuum_rate)
        per_region.append((rid, llr))
        details.append((rid, d.center[0], d.center[1], radius, region.n_pixels,
                        fitted.fitted_intensity, float(vacuum_rate), llr))
        raster[region.ys, region.xs] = llr
    return LikelihoodMap(tuple(per_region), raster, tuple(details))


REGION_FIELDS = ("region_id", "cx", "cy", "radius", "n_pixels",
                 "fit_rate", "vacuum_rate", "llr_per_pixel")


def write_region_report(path, lmap):
    """CSV report, one row per scored region."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REGION_FIELDS)
        for rid, cx, cy, radius, n, fit, vac, llr in lmap.details:
            writer.writerow([rid, repr(float(cx)), repr(float(cy)),
                             repr(float(radius)), n, repr(float(fit)),
                             repr(float(vac)), repr(float(llr))])


def export_signed_colormap(arr, path):
    """Render a signed map as a binary PPM: blue negative, red positive."""
    data = as_image_array(arr, "map")
    peak = float(np.max(np.abs(data)))
    unit = data / peak if peak > 0 else np.zeros_like(data)
    pos = np.clip(unit, 0.0, 1.0)
    neg = np.clip(-unit, 0.0, 1.0)
    rgb = np.empty(data.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = np.floor(255.0 * (1.0 - neg) + 0.5)
    rgb[..., 1] = np.floor(255.0 * (1.0 - np.maximum(pos, neg)) + 0.5)
    rgb[..., 2] = np.floor(255.0 * (1.0 - pos) + 0.5)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes(order="C"))
