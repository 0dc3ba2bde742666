"""Atom-column detection, alpha-shape surface partition, and set matching."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from scipy.spatial import Delaunay, QhullError, cKDTree
from sklearn.base import BaseEstimator

from .errors import FormatError, ParameterError
from .validation import as_image_array, check_in, check_positive

# Defaults tied to the nominal rendering geometry (sigma 9 px, amplitude 4):
# scale ladder 0.6..1.6 x sigma and threshold 0.1 x the peak response A/2 that
# a unit-occupancy column produces at the matched scale.
DEFAULT_SIGMA_MIN = 5.4
DEFAULT_SIGMA_MAX = 14.4
DEFAULT_N_SCALES = 6
DEFAULT_THRESHOLD = 0.2


def blob_defaults(sigma=9.0, amplitude=4.0):
    """Detection parameters matched to a rendering geometry."""
    return {
        "sigma_min": 0.6 * sigma,
        "sigma_max": 1.6 * sigma,
        "n_scales": DEFAULT_N_SCALES,
        "threshold": 0.1 * amplitude / 2.0,
    }


@dataclass(frozen=True)
class AtomDetection:
    """One detected column: sub-pixel center (x, y), blob scale, peak response."""

    center: tuple[float, float]
    scale: float
    response: float
    is_surface: bool = False


def _quadratic_offset(left, mid, right):
    denom = left - 2.0 * mid + right
    if denom == 0.0:
        return 0.0
    off = 0.5 * (left - right) / denom
    return float(np.clip(off, -0.5, 0.5))


def _log_stack(arr, sigmas, sign):
    stack = np.empty((len(sigmas),) + arr.shape)
    for i, s in enumerate(sigmas):
        stack[i] = sign * (s * s) * ndimage.gaussian_laplace(arr, s)
    return stack


def _detect_single_polarity(arr, sigmas, threshold, sign):
    stack = _log_stack(arr, sigmas, sign)
    local_max = ndimage.maximum_filter(stack, size=3, mode="nearest")
    mask = (stack == local_max) & (stack > threshold)
    found = []
    for si, yi, xi in zip(*np.nonzero(mask)):
        resp = stack[si, yi, xi]
        dx = dy = 0.0
        if 0 < xi < arr.shape[1] - 1:
            dx = _quadratic_offset(stack[si, yi, xi - 1], resp, stack[si, yi, xi + 1])
        if 0 < yi < arr.shape[0] - 1:
            dy = _quadratic_offset(stack[si, yi - 1, xi], resp, stack[si, yi + 1, xi])
        found.append(AtomDetection((xi + dx, yi + dy), float(sigmas[si]), float(resp)))
    return found


def _suppress_overlaps(found):
    """Greedy suppression: keep the stronger of any pair closer than the
    smaller of their scales. Ties break deterministically by position."""
    found.sort(key=lambda d: (-d.response, d.center[1], d.center[0]))
    kept = []
    for det in found:
        ok = True
        for other in kept:
            limit = min(det.scale, other.scale)
            if math.hypot(det.center[0] - other.center[0],
                          det.center[1] - other.center[1]) < limit:
                ok = False
                break
        if ok:
            kept.append(det)
    kept.sort(key=lambda d: (d.center[1], d.center[0]))
    return kept


def detect_blobs(img, sigma_min=DEFAULT_SIGMA_MIN, sigma_max=DEFAULT_SIGMA_MAX,
                 n_scales=DEFAULT_N_SCALES, threshold=DEFAULT_THRESHOLD,
                 polarity="bright"):
    """Scale-normalized Laplacian-of-Gaussian blob detection.

    Responses are sigma^2 * (LoG_sigma * img), negated so bright blobs are
    maxima (and negated again for dark polarity); sigma levels are spaced
    geometrically. Candidates are strict 3x3x3 local maxima above ``threshold``
    in (x, y, scale), refined by a quadratic fit in x and y, then filtered by
    overlap suppression. ``polarity`` is "bright", "dark", or "both".
    """
    arr = as_image_array(img)
    check_positive(sigma_min, "sigma_min")
    check_in(polarity, ("bright", "dark", "both"), "polarity")
    if not sigma_max > sigma_min:
        raise ParameterError(f"need sigma_max > sigma_min, got {sigma_min}..{sigma_max}")
    n_scales = int(n_scales)
    if n_scales < 2:
        raise ParameterError(f"n_scales must be >= 2, got {n_scales}")
    if not np.isfinite(threshold) or threshold <= 0:
        raise ParameterError(f"threshold must be positive, got {threshold!r}")

    sigmas = np.geomspace(sigma_min, sigma_max, n_scales)
    found = []
    if polarity in ("bright", "both"):
        found += _detect_single_polarity(arr, sigmas, threshold, -1.0)
    if polarity in ("dark", "both"):
        found += _detect_single_polarity(arr, sigmas, threshold, +1.0)
    return _suppress_overlaps(found)


def _alpha_complex(points, alpha):
    """Delaunay triangles with circumradius <= alpha.

    Returns (tri, kept_simplex_mask) or (None, None) when the cloud has no
    triangulation (fewer than 3 points, or degenerate).
    """
    if len(points) < 3:
        return None, None
    try:
        tri = Delaunay(points)
    except QhullError:
        return None, None
    p = points[tri.simplices]
    a = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    b = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    c = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    s = 0.5 * (a + b + c)
    area_sq = np.maximum(s * (s - a) * (s - b) * (s - c), 0.0)
    area = np.sqrt(area_sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        circumradius = np.where(area > 0, a * b * c / (4.0 * area), np.inf)
    return tri, circumradius <= alpha


def median_nn_distance(points):
    """Median nearest-neighbour distance of a point cloud (needs >= 2 points)."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 2:
        raise ParameterError("need at least 2 points for a neighbour distance")
    dist, _ = cKDTree(pts).query(pts, k=2)
    return float(np.median(dist[:, 1]))


def surface_partition(detections, alpha=None):
    """Split detections into surface and interior via a 2-D alpha shape.

    Triangles of the Delaunay triangulation with circumradius <= alpha form the
    alpha complex; vertices on its boundary edges (edges used by exactly one
    kept triangle) and vertices in no kept triangle are surface, the rest are
    interior. Fewer than 3 points, or a degenerate cloud, are all surface.
    ``alpha`` defaults to 1.5 x the median nearest-neighbour distance.
    Duplicate centers (within 1e-6) are deduplicated with a warning.
    """
    dets = list(detections)
    if not dets:
        return []
    unique = []
    seen = []
    dropped = 0
    for d in dets:
        if any(abs(d.center[0] - x) < 1e-6 and abs(d.center[1] - y) < 1e-6
               for x, y in seen):
            dropped += 1
            continue
        seen.append(d.center)
        unique.append(d)
    if dropped:
        warnings.warn(f"surface_partition: dropped {dropped} duplicate centers",
                      RuntimeWarning, stacklevel=2)
    pts = np.array([d.center for d in unique], dtype=np.float64)

    if alpha is None:
        alpha = 1.5 * median_nn_distance(pts) if len(pts) >= 2 else 1.0
    check_positive(alpha, "alpha")

    tri, kept = _alpha_complex(pts, alpha)
    if tri is None or not kept.any():
        return [replace(d, is_surface=True) for d in unique]

    edge_count = {}
    in_complex = np.zeros(len(pts), dtype=bool)
    for simplex in tri.simplices[kept]:
        in_complex[simplex] = True
        for i in range(3):
            edge = tuple(sorted((simplex[i], simplex[(i + 1) % 3])))
            edge_count[edge] = edge_count.get(edge, 0) + 1
    surface = ~in_complex
    for (i, j), n in edge_count.items():
        if n == 1:
            surface[i] = surface[j] = True
    return [replace(d, is_surface=bool(s)) for d, s in zip(unique, surface)]


@dataclass(frozen=True)
class Matching:
    """Greedy one-to-one assignment between two point sets."""

    pairs: tuple            # ((index_a, index_b, distance), ...)
    unmatched_a: tuple
    unmatched_b: tuple
    threshold: float


def match_atoms(a, b, threshold):
    """Greedy globally-shortest-pair matching within ``threshold``.

    Repeatedly pairs the closest unmatched cross pair; ties on distance break
    by the lower A index, then the lower B index. ``a`` and ``b`` are sequences
    of (x, y) centers or objects with a ``center`` attribute.
    """
    check_positive(threshold, "threshold")
    pa = np.array([getattr(p, "center", p) for p in a], dtype=np.float64).reshape(-1, 2)
    pb = np.array([getattr(p, "center", p) for p in b], dtype=np.float64).reshape(-1, 2)
    candidates = []
    if len(pa) and len(pb):
        dists = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
        ia, ib = np.nonzero(dists <= threshold)
        candidates = sorted(zip(dists[ia, ib], ia, ib),
                            key=lambda t: (t[0], t[1], t[2]))
    used_a = set()
    used_b = set()
    pairs = []
    for dist, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((int(i), int(j), float(dist)))
    unmatched_a = tuple(i for i in range(len(pa)) if i not in used_a)
    unmatched_b = tuple(j for j in range(len(pb)) if j not in used_b)
    return Matching(tuple(pairs), unmatched_a, unmatched_b, float(threshold))


class BlobDetector(BaseEstimator):
    """Estimator wrapper around :func:`detect_blobs` + :func:`surface_partition`."""

    def __init__(self, sigma_min=DEFAULT_SIGMA_MIN, sigma_max=DEFAULT_SIGMA_MAX,
                 n_scales=DEFAULT_N_SCALES, threshold=DEFAULT_THRESHOLD,
                 polarity="bright", alpha=None):
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        self.n_scales = n_scales
        self.threshold = threshold
        self.polarity = polarity
        self.alpha = alpha

    def fit(self, X=None, y=None):
        return self

    def detect(self, X):
        found = detect_blobs(X, self.sigma_min, self.sigma_max, self.n_scales,
                             self.threshold, self.polarity)
        if len(found) >= 2:
            found = surface_partition(found, self.alpha)
        elif found:
            found = [replace(d, is_surface=True) for d in found]
        return found

    predict = detect


ATOM_FIELDS = ("x", "y", "scale", "response", "is_surface")


def write_atoms(path, detections):
    """Write detections as CSV with the one-line header x,y,scale,response,is_surface."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ATOM_FIELDS)
        for d in detections:
            writer.writerow([repr(float(d.center[0])), repr(float(d.center[1])),
                             repr(float(d.scale)), repr(float(d.response)),
                             int(d.is_surface)])


def read_atoms(path):
    """Inverse of :func:`write_atoms`."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != ATOM_FIELDS:
            raise FormatError(f"{path}: expected header {','.join(ATOM_FIELDS)}")
        for row in reader:
            try:
                x, y, scale, response, is_surface = row
                out.append(AtomDetection((float(x), float(y)), float(scale),
                                         float(response), bool(int(is_surface))))
            except ValueError as exc:
                raise FormatError(f"{path}: bad atom row {row!r}") from exc
    return out
