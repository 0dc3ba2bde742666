"""Classical denoising baselines and the tiling / external-process plumbing.

Estimator classes follow the scikit-learn convention (parameters stored
verbatim in ``__init__``, stateless ``fit`` returning ``self``, the work in
``transform``); the module-level functions are the underlying primitives.
"""

from __future__ import annotations

import math
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.fft import irfft2, rfft2
from sklearn.base import BaseEstimator

from . import image as imageio
from .errors import (ExternalDenoiserError, ExternalTimeoutError, ParameterError,
                     ProtocolError, ValidationError)
from .validation import as_image_array, check_nonnegative, check_odd, check_positive

_EPS = 1e-12
_ROLLOFF = 0.1  # relative half-width of the lowpass raised-cosine edge


def lowpass(img, cutoff=0.25):
    """Isotropic FFT lowpass with a raised-cosine edge.

    The radial mask is 1 up to ``cutoff * r_N * (1 - 0.1)`` and rolls off to 0
    at ``cutoff * r_N * (1 + 0.1)``, with r_N = 0.5 cycles/px. ``cutoff`` is a
    fraction of Nyquist in (0, 1]; cutoff = 1 is an exact all-pass (the corners
    of the square frequency grid lie beyond the radial Nyquist, so the literal
    mask would touch them). Odd dimensions are edge-padded to even for the FFT
    and cropped back.
    """
    arr = as_image_array(img)
    if not 0.0 < cutoff <= 1.0:
        raise ParameterError(f"cutoff must be in (0, 1], got {cutoff!r}")
    if cutoff == 1.0:
        return arr.copy()
    h, w = arr.shape
    pad_h, pad_w = h % 2, w % 2
    work = np.pad(arr, ((0, pad_h), (0, pad_w)), mode="edge") if pad_h or pad_w else arr
    hh, ww = work.shape
    fy = np.fft.fftfreq(hh)[:, None]
    fx = np.fft.rfftfreq(ww)[None, :]
    r = np.hypot(fy, fx)
    inner = cutoff * 0.5 * (1.0 - _ROLLOFF)
    outer = cutoff * 0.5 * (1.0 + _ROLLOFF)
    mask = np.zeros_like(r)
    mask[r <= inner] = 1.0
    band = (r > inner) & (r < outer)
    mask[band] = 0.5 * (1.0 + np.cos(np.pi * (r[band] - inner) / (outer - inner)))
    out = irfft2(rfft2(work) * mask, s=work.shape)
    return out[:h, :w]


def wiener_adaptive(img, radius=13):
    """Adaptive Wiener filter with a Poisson noise model (variance = mean).

    Local mean and variance come from a (2*radius+1)^2 window with replicated
    borders; the per-pixel noise variance estimate is max(mean, eps) and the
    gain is max(var - noise, 0) / max(var, eps).
    """
    arr = as_image_array(img)
    r = int(radius)
    if r < 1:
        raise ParameterError(f"radius must be >= 1, got {radius!r}")
    size = 2 * r + 1
    mu = ndimage.uniform_filter(arr, size=size, mode="nearest")
    ex2 = ndimage.uniform_filter(arr * arr, size=size, mode="nearest")
    var = np.maximum(ex2 - mu * mu, 0.0)
    noise = np.maximum(mu, _EPS)
    gain = np.maximum(var - noise, 0.0) / np.maximum(var, _EPS)
    return mu + gain * (arr - mu)


def anscombe(img):
    """Variance-stabilizing transform z = 2*sqrt(v + 3/8) for Poisson counts."""
    arr = as_image_array(img)
    check_nonnegative(arr, "counts")
    return 2.0 * np.sqrt(arr + 0.375)


_SQ32 = math.sqrt(1.5)


def inv_anscombe(img):
    """Closed-form unbiased inverse of :func:`anscombe`, clamped at 0.

    v = z^2/4 - 1/8 + (sqrt(3/2)/4) z^-1 - (11/8) z^-2 + (5/8) sqrt(3/2) z^-3.
    Unbiased in the distribution sense: applied to the expectation of the
    transformed counts it recovers the rate (not an algebraic inverse).
    Inputs below the forward transform's floor 2*sqrt(3/8) (where the series
    diverges and which no count can produce) are clamped to the floor, so a
    denoiser undershooting in the stabilized domain maps to rate 0.
    """
    z = np.maximum(as_image_array(img), 2.0 * math.sqrt(0.375))
    v = (z * z / 4.0 - 0.125 + (_SQ32 / 4.0) / z
         - 1.375 / (z * z) + 0.625 * _SQ32 / (z * z * z))
    return np.maximum(v, 0.0)


def nlm(img, patch=7, window=21, strength=0.4, noise_sigma=1.0):
    """Non-local means with noise-compensated patch distances.

    For each candidate offset within the search window, the squared patch
    distance d2 is the patch-mean squared pixel difference; the weight is
    exp(-max(d2 - 2*noise_sigma^2, 0) / strength^2). The self weight is the
    maximum non-self weight and weights are normalized to sum to 1. Borders
    are handled by symmetric reflection.
    """
    arr = as_image_array(img)
    patch = check_odd(patch, "patch")
    window = check_odd(window, "window")
    check_positive(strength, "strength")
    if window < 3:
        raise ParameterError("window must be >= 3")
    if window < patch:
        raise ParameterError(
            f"search window {window} must be >= patch {patch}")
    half = window // 2
    h2 = strength * strength
    bias = 2.0 * noise_sigma * noise_sigma

    padded = np.pad(arr, half, mode="symmetric")
    acc = np.zeros_like(arr)
    wsum = np.zeros_like(arr)
    wmax = np.zeros_like(arr)
    height, width = arr.shape
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            if dy == 0 and dx == 0:
                continue
            shifted = padded[half + dy:half + dy + height, half + dx:half + dx + width]
            diff2 = (arr - shifted) ** 2
            d2 = ndimage.uniform_filter(diff2, size=patch, mode="reflect")
            w = np.exp(-np.maximum(d2 - bias, 0.0) / h2)
            acc += w * shifted
            wsum += w
            np.maximum(wmax, w, out=wmax)
    acc += wmax * arr
    wsum += wmax
    return acc / wsum


def vst_nlm(img, patch=7, window=21, strength=0.4):
    """Anscombe -> non-local means (unit noise sigma) -> unbiased inverse."""
    z = anscombe(img)
    den = nlm(z, patch=patch, window=window, strength=strength, noise_sigma=1.0)
    return inv_anscombe(den)


@dataclass(frozen=True)
class TilingSpec:
    """Overlapping-tile schedule: square tiles, stride = tile - overlap."""

    tile: int = 400
    overlap: int = 200

    def __post_init__(self):
        if self.tile < 1:
            raise ParameterError(f"tile must be >= 1, got {self.tile}")
        if not 0 <= self.overlap < self.tile:
            raise ParameterError(
                f"overlap must satisfy 0 <= overlap < tile, got {self.overlap}")

    def starts(self, extent):
        """Tile start offsets covering ``extent``, last tile snapped to the edge."""
        if extent <= self.tile:
            return [0]
        stride = self.tile - self.overlap
        out = list(range(0, extent - self.tile + 1, stride))
        if out[-1] != extent - self.tile:
            out.append(extent - self.tile)
        return out


def _apply(denoiser, arr):
    fn = getattr(denoiser, "transform", denoiser)
    out = as_image_array(fn(arr), "denoised tile")
    if out.shape != arr.shape:
        raise ValidationError(
            f"denoiser changed tile shape {arr.shape} -> {out.shape}")
    return out


def denoise_tiled(img, denoiser, tiling=None):
    """Apply ``denoiser`` per overlapping tile and merge by unweighted mean.

    Each tile's output is trusted only on its core: a band of overlap // 2
    pixels is discarded along every tile side that lies strictly inside the
    image, which keeps tile-boundary artifacts out of the merged result while
    the cores still cover every pixel. The merge keeps a running mean per
    pixel, so a denoiser that returns its input exactly yields a bit-exact
    copy regardless of the tile schedule. Images smaller than the tile are
    processed in a single pass.
    """
    arr = as_image_array(img)
    tiling = tiling or TilingSpec()
    h, w = arr.shape
    margin = tiling.overlap // 2
    mean = np.zeros_like(arr)
    count = np.zeros(arr.shape)
    for y0 in tiling.starts(h):
        th = min(tiling.tile, h)
        for x0 in tiling.starts(w):
            tw = min(tiling.tile, w)
            tile_out = _apply(denoiser, arr[y0:y0 + th, x0:x0 + tw])
            ya = margin if y0 > 0 else 0
            yb = th - margin if y0 + th < h else th
            xa = margin if x0 > 0 else 0
            xb = tw - margin if x0 + tw < w else tw
            region = (slice(y0 + ya, y0 + yb), slice(x0 + xa, x0 + xb))
            count[region] += 1.0
            mean[region] += (tile_out[ya:yb, xa:xb] - mean[region]) / count[region]
    return mean


def external_denoise(img, command, timeout=300.0):
    """Run an external denoiser process over F32IMG temp files.

    ``command`` is a template whose tokens may contain the placeholders
    ``{in}`` and ``{out}`` (both required). The process must exit 0 and write
    an image of unchanged dimensions to the output path.
    """
    arr = as_image_array(img)
    tokens = shlex.split(command)
    if not any("{in}" in t for t in tokens) or not any("{out}" in t for t in tokens):
        raise ParameterError(f"command must contain {{in}} and {{out}}: {command!r}")
    with tempfile.TemporaryDirectory(prefix="sbd-ext-") as tmp:
        in_path = os.path.join(tmp, "in.f32img")
        out_path = os.path.join(tmp, "out.f32img")
        imageio.write_image(arr, in_path)
        argv = [t.replace("{in}", in_path).replace("{out}", out_path) for t in tokens]
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=timeout)
        except subprocess.TimeoutExpired as exc:
            raise ExternalTimeoutError(
                f"external denoiser exceeded {timeout} s: {command!r}") from exc
        except OSError as exc:
            raise ExternalDenoiserError(f"could not launch {argv[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            stderr = proc.stderr.decode(errors="replace")
            raise ExternalDenoiserError(
                f"external denoiser exited {proc.returncode}", stderr=stderr)
        if not os.path.exists(out_path):
            raise ProtocolError("external denoiser wrote no output image")
        out = imageio.read_image(out_path).data
    if out.shape != arr.shape:
        raise ProtocolError(
            f"external denoiser changed dimensions {arr.shape} -> {out.shape}")
    return out


class _Denoiser(BaseEstimator):
    """Stateless transformer base: fit is a no-op."""

    def fit(self, X=None, y=None):
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)


class IdentityDenoiser(_Denoiser):
    def transform(self, X):
        return as_image_array(X).copy()


class LowPassFilter(_Denoiser):
    def __init__(self, cutoff=0.25):
        self.cutoff = cutoff

    def transform(self, X):
        return lowpass(X, self.cutoff)


class AdaptiveWienerFilter(_Denoiser):
    def __init__(self, radius=13):
        self.radius = radius

    def transform(self, X):
        return wiener_adaptive(X, self.radius)


class VstNlmDenoiser(_Denoiser):
    def __init__(self, patch=7, window=21, strength=0.4):
        self.patch = patch
        self.window = window
        self.strength = strength

    def transform(self, X):
        return vst_nlm(X, self.patch, self.window, self.strength)


class ExternalDenoiser(_Denoiser):
    def __init__(self, command="", timeout=300.0):
        self.command = command
        self.timeout = timeout

    def transform(self, X):
        return external_denoise(X, self.command, self.timeout)


_REGISTRY = {
    "identity": IdentityDenoiser,
    "lowpass": LowPassFilter,
    "wiener": AdaptiveWienerFilter,
    "vst_nlm": VstNlmDenoiser,
    "external": ExternalDenoiser,
}
_ALIASES = {"vstnlm": "vst_nlm", "nlm": "vst_nlm", "raw": "identity"}


def make_denoiser(kind, **params):
    """Instantiate a denoiser estimator by registry name."""
    key = _ALIASES.get(kind, kind)
    if key not in _REGISTRY:
        raise ParameterError(f"unknown denoiser {kind!r}; known: {sorted(_REGISTRY)}")
    try:
        return _REGISTRY[key](**params)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for {kind!r}: {exc}") from exc
