"""Dose calibration, Poisson corruption, and noise-model diagnostics.

Corruption draws per-pixel independent Poisson counts with the Philox
counter-based generator keyed by the seed, so outputs are reproducible across
platforms. The sampler uses an exact sequential method below rate 10 and
transformed rejection above it; both are free of normal approximations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import CalibrationError, ParameterError, ValidationError
from .validation import (as_image_array, check_counts, check_in,
                         check_nonnegative, check_positive)

VACUUM_TARGET = 0.45  # calibrated counts per pixel in the vacuum region


def vacuum_heuristic(clean, mode="white", rel_window=0.02):
    """Boolean mask of probable vacuum pixels.

    white: within ``rel_window`` of the intensity range above the minimum;
    black: the mirrored rule below the maximum; intermediate: within
    ``rel_window`` of the densest 64-bin histogram bin (vacuum is the modal
    level when bright and dark columns coexist). Constant images are all vacuum.
    """
    check_in(mode, ("white", "black", "intermediate"), "mode")
    arr = as_image_array(clean)
    lo, hi = float(arr.min()), float(arr.max())
    span = hi - lo
    if span == 0.0:
        return np.ones_like(arr, dtype=bool)
    if mode == "white":
        return arr <= lo + rel_window * span
    if mode == "black":
        return arr >= hi - rel_window * span
    counts, edges = np.histogram(arr, bins=64)
    i = int(np.argmax(counts))
    center = 0.5 * (edges[i] + edges[i + 1])
    return np.abs(arr - center) <= rel_window * span


def scale_to_dose(clean, vacuum_target=VACUUM_TARGET, vacuum_mask=None, mode="white"):
    """Multiply ``clean`` so its mean over the vacuum region equals ``vacuum_target``.

    The vacuum region is ``vacuum_mask`` when given, otherwise the
    :func:`vacuum_heuristic` for ``mode``.
    """
    arr = as_image_array(clean)
    check_nonnegative(arr, "clean")
    check_positive(vacuum_target, "vacuum_target")
    mask = vacuum_heuristic(arr, mode) if vacuum_mask is None else np.asarray(vacuum_mask, bool)
    if mask.shape != arr.shape:
        raise ValidationError(f"vacuum mask shape {mask.shape} != image shape {arr.shape}")
    if not mask.any():
        raise CalibrationError("vacuum region is empty")
    level = float(arr[mask].mean())
    if level <= 0.0:
        raise CalibrationError(f"vacuum region mean is {level}; cannot calibrate")
    return arr * (vacuum_target / level)


def poisson_corrupt(clean, seed):
    """Per-pixel independent Poisson counts with expectation ``clean``.

    Deterministic for a fixed seed; returns integer-valued float64.
    """
    arr = as_image_array(clean)
    check_nonnegative(arr, "clean")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    return rng.poisson(arr).astype(np.float64)


@dataclass(frozen=True)
class NoiseStatsReport:
    """Variance-vs-mean diagnostics over a frame stack."""

    slope: float
    intercept: float
    histogram_divergence: float  # Pearson chi-square of pooled vacuum counts
    histogram_p: float
    histogram_dof: int
    n_frames: int
    n_pixels: int


def _poisson_chi_square(values, min_expected=5.0):
    """Pearson chi-square of integer samples against Poisson(sample mean).

    Bins are integer counts with the right tail merged until every bin expects
    at least ``min_expected``. The rate is the pooled mean; dof = nbins - 1
    (treating the rate as given, which is slightly conservative when it is
    estimated from the same data).
    """
    n = values.size
    lam = float(values.mean())
    kmax = int(values.max())
    observed = np.bincount(values.astype(np.int64), minlength=kmax + 1).astype(float)
    pmf = stats.poisson.pmf(np.arange(kmax + 1), lam)
    expected = n * pmf
    tail = n * float(stats.poisson.sf(kmax, lam))
    obs = list(observed)
    exp = list(expected)
    exp[-1] += tail
    while len(exp) > 1 and exp[-1] < min_expected:
        exp[-2] += exp[-1]
        obs[-2] += obs[-1]
        exp.pop()
        obs.pop()
    obs_arr = np.array(obs)
    exp_arr = np.array(exp)
    stat = float(np.sum((obs_arr - exp_arr) ** 2 / exp_arr))
    dof = max(len(exp) - 1, 1)
    p = float(stats.chi2.sf(stat, dof))
    return stat, p, dof


def poisson_calibration(values, min_expected=5.0):
    """Chi-square calibration of pooled count samples against a Poisson law.

    ``values`` is any array of integer counts (for example the pooled vacuum
    pixels of a frame stack). Returns (statistic, p_value, dof) against
    Poisson(pooled mean).
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValidationError("poisson_calibration needs at least one sample")
    arr = check_counts(arr, "values")
    return _poisson_chi_square(arr, min_expected)


def noise_stats(frames, vacuum_mask) -> NoiseStatsReport:
    """Fit per-pixel temporal variance against mean and test the vacuum histogram.

    ``frames`` is a sequence of >= 2 equal-shape count images of the same scene;
    ``vacuum_mask`` selects the pixels pooled for the chi-square test.
    """
    stack = [check_counts(as_image_array(f, "frame"), "frame") for f in frames]
    if len(stack) < 2:
        raise ParameterError(f"need at least 2 frames, got {len(stack)}")
    shapes = {a.shape for a in stack}
    if len(shapes) != 1:
        raise ValidationError(f"frames disagree on shape: {sorted(shapes)}")
    cube = np.stack(stack)
    mask = np.asarray(vacuum_mask, bool)
    if mask.shape != cube.shape[1:]:
        raise ValidationError(f"vacuum mask shape {mask.shape} != frame shape {cube.shape[1:]}")
    if not mask.any():
        raise ValidationError("vacuum mask is empty")

    means = cube.mean(axis=0).ravel()
    variances = cube.var(axis=0, ddof=1).ravel()
    slope, intercept = np.polyfit(means, variances, 1)

    pooled = cube[:, mask].ravel()
    stat, p, dof = _poisson_chi_square(pooled)
    return NoiseStatsReport(float(slope), float(intercept), stat, p, dof,
                            len(stack), int(means.size))
