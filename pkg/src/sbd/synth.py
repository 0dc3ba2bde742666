"""Synthetic ground truth: lattice structure models rendered as Gaussian columns.

A structure model is a list of atomic columns on two 2-D lattices: a triangular
support lattice below a horizontal interface line and an FCC-[110]-projection-like
particle lattice (centered rectangular cells, aspect ratio sqrt(2)) above it, the
particle clipped to a truncated-disk envelope resting on the interface gap. Lattice
constants default to 60 px (support) and 52 px (particle), which puts the smallest
nearest-neighbour distance at hypot(26, 26*sqrt(2)) ~= 45 px = 5 sigma for the
default column width sigma = 9 px, so detection and matching are unambiguous.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .validation import as_image_array, check_in, check_positive

PARTICLE_CLASSES = ("PtNp1", "PtNp2", "PtNp3", "PtNp4")
DEFECT_CLASSES = ("D0", "D1", "D2", "Dh", "Ds", "Da")
CONTRAST_CLASSES = ("white", "intermediate", "black")

# Projected particle envelope diameters in nanometers. PtNp1 and PtNp2 share a
# diameter and differ by the presence (PtNp1) / absence (PtNp2) of one extra
# column between the particle body and the support.
PARTICLE_DIAMETER_NM = {"PtNp1": 2.0, "PtNp2": 2.0, "PtNp3": 1.0, "PtNp4": 3.0}


@dataclass(frozen=True)
class AtomColumn:
    """One projected atomic column: a Gaussian peak at ``center`` (x, y)."""

    center: tuple[float, float]
    species: str  # "support" | "particle"
    occupancy: float = 1.0
    sigma: float = 9.0


@dataclass(frozen=True)
class GeometryConfig:
    """Lattice and rendering geometry. Lengths are in pixels."""

    width: int = 1024
    height: int = 1024
    support_spacing: float = 60.0
    particle_spacing: float = 52.0
    sigma: float = 9.0
    vacuum_level: float = 0.45
    amplitude: float = 4.0
    interface_frac: float = 0.60  # interface line at interface_frac * height
    interface_gap: float = 92.0   # vertical gap between particle bottom row and support
    px_per_nm: float = 205.0
    column_height: int = 8        # atoms per full column; sets the Ds occupancy 1/n
    margin: float = 27.0          # columns closer than this to a border are dropped

    def scaled(self, factor, width=None, height=None) -> "GeometryConfig":
        """Return a copy with all spatial lengths multiplied by ``factor``.

        Intensity fields (vacuum level, amplitude) and the column height are
        unchanged; image dimensions default to scaling as well.
        """
        check_positive(factor, "factor")
        return replace(
            self,
            width=int(round(self.width * factor)) if width is None else int(width),
            height=int(round(self.height * factor)) if height is None else int(height),
            support_spacing=self.support_spacing * factor,
            particle_spacing=self.particle_spacing * factor,
            sigma=self.sigma * factor,
            interface_gap=self.interface_gap * factor,
            px_per_nm=self.px_per_nm * factor,
            margin=self.margin * factor,
        )


@dataclass(frozen=True)
class ImagingParams:
    """Rendering-time view parameters applied to column positions."""

    width: int = 1024
    height: int = 1024
    rotation: float = 0.0  # degrees
    scale: float = 1.0
    seed: int = 0


@dataclass
class StructureModel:
    """A buildable, renderable arrangement of atomic columns."""

    columns: list[AtomColumn]
    contrast: str
    vacuum_level: float
    amplitude: float
    particle_class: str
    defect_class: str
    shear: tuple[float, float] = (0.0, 0.0)


def _particle_row(cx, y, parity, spacing, half_width):
    """x positions of one particle-lattice row clipped to ``|x - cx| <= half_width``."""
    offset = 0.5 * spacing if parity else 0.0
    n = int(math.floor((half_width + spacing) / spacing)) + 1
    xs = cx + offset + spacing * np.arange(-n, n + 1)
    return xs[np.abs(xs - cx) <= half_width + 1e-9]


def build_structure(particle_class, defect_class, contrast, geometry=None,
                    shear=(0.0, 0.0)) -> StructureModel:
    """Assemble a support + particle structure model.

    Parameters
    ----------
    particle_class : one of PtNp1..PtNp4 (projected diameters 2/2/1/3 nm).
    defect_class : D0 (pristine), D1/D2 (one / two adjacent columns removed),
        Dh (half occupancy), Ds (single-atom occupancy 1/column_height), or the
        Da extension (one adatom column at the adjacent free-surface site). The
        designated defect site is the top-left corner column of the particle.
    contrast : "white", "intermediate", or "black".
    shear : (sx, sy) dimensionless tilt proxy; applied as a positional shear
        and an anisotropic widening of sigma at render time.
    """
    geom = geometry or GeometryConfig()
    check_in(particle_class, PARTICLE_CLASSES, "particle_class")
    check_in(defect_class, DEFECT_CLASSES, "defect_class")
    check_in(contrast, CONTRAST_CLASSES, "contrast")

    diameter = PARTICLE_DIAMETER_NM[particle_class] * geom.px_per_nm
    if diameter > min(geom.width, geom.height):
        raise ParameterError(
            f"{particle_class} diameter {diameter:.0f} px exceeds the "
            f"{geom.width}x{geom.height} image extent"
        )

    margin = geom.margin
    interface_y = geom.interface_frac * geom.height
    cx = geom.width / 2.0

    def in_frame(x, y):
        return (margin <= x <= geom.width - margin) and (margin <= y <= geom.height - margin)

    # Support: triangular lattice from the interface line down.
    support = []
    row_h = geom.support_spacing * math.sqrt(3.0) / 2.0
    j = 0
    while True:
        y = interface_y + j * row_h
        if y > geom.height - margin:
            break
        offset = 0.5 * geom.support_spacing if j % 2 else 0.0
        n = int(geom.width / geom.support_spacing) + 2
        for m in range(-n, n + 1):
            x = cx + offset + m * geom.support_spacing
            if in_frame(x, y):
                support.append((x, y))
        j += 1

    # Particle: centered-rectangular lattice rows going up from the bottom row,
    # clipped to a truncated-disk envelope resting ``interface_gap`` above the
    # support.
    rh = geom.particle_spacing * math.sqrt(2.0) / 2.0
    y_bottom = interface_y - geom.interface_gap
    env_cy = y_bottom - 0.35 * diameter
    radius = diameter / 2.0
    particle = []
    k = 0
    while True:
        y = y_bottom - k * rh
        dy = y - env_cy
        if y < margin or abs(dy) > radius:
            if y < margin or dy < -radius:
                break
            k += 1
            continue
        half_width = math.sqrt(max(radius**2 - dy**2, 0.0))
        for x in _particle_row(cx, y, k % 2, geom.particle_spacing, half_width):
            if in_frame(x, y):
                particle.append((float(x), y))
        k += 1
    if not particle:
        raise ParameterError(f"{particle_class} envelope produced no columns; "
                             f"geometry too small")

    particle.sort(key=lambda p: (p[1], p[0]))
    occupancy = {i: 1.0 for i in range(len(particle))}
    removed = set()

    # Defect site: the top-left corner of the particle envelope.
    top_y = min(p[1] for p in particle)
    site = min(i for i, p in enumerate(particle) if abs(p[1] - top_y) < 1e-9)
    added = []
    if defect_class == "D1":
        removed.add(site)
    elif defect_class == "D2":
        sx, sy = particle[site]
        others = [(math.hypot(p[0] - sx, p[1] - sy), i)
                  for i, p in enumerate(particle) if i != site]
        removed.update({site, min(others)[1]})
    elif defect_class == "Dh":
        occupancy[site] = 0.5
    elif defect_class == "Ds":
        occupancy[site] = 1.0 / geom.column_height
    elif defect_class == "Da":
        sx, sy = particle[site]
        added.append((sx + 0.5 * geom.particle_spacing, sy - rh))

    columns = [AtomColumn((x, y), "support", 1.0, geom.sigma) for x, y in support]
    for i, (x, y) in enumerate(particle):
        if i not in removed:
            columns.append(AtomColumn((x, y), "particle", occupancy[i], geom.sigma))
    for x, y in added:
        columns.append(AtomColumn((x, y), "particle", 1.0, geom.sigma))
    if particle_class == "PtNp1":
        # Interface column: one lattice row below the particle bottom row.
        columns.append(AtomColumn((cx + 0.5 * geom.particle_spacing, y_bottom + rh),
                                  "particle", 1.0, geom.sigma))

    shear = (float(shear[0]), float(shear[1]))
    return StructureModel(columns, contrast, geom.vacuum_level, geom.amplitude,
                          particle_class, defect_class, shear)


def _position_transform(points, shear, rotation, scale, width, height):
    """shear -> rotation -> scale about the pixel-center of the image."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    c = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    v = pts - c
    sx, sy = shear
    v = v @ np.array([[1.0, sy], [sx, 1.0]])  # x' = x + sx*y, y' = y + sy*x
    th = math.radians(rotation)
    rot = np.array([[math.cos(th), math.sin(th)], [-math.sin(th), math.cos(th)]])
    v = v @ rot
    return c + scale * v


def transform_points(points, rotation, scale, width, height, shear=(0.0, 0.0)):
    """Map points the way :func:`transform` maps image content.

    ``shear`` prepends the model's rendering shear so ground-truth centers of
    a sheared structure can be produced in one call.
    """
    return _position_transform(points, shear, rotation, scale, width, height)


def render(model, params=None) -> np.ndarray:
    """Render a structure model onto a flat vacuum background.

    Column positions go through shear (from the model), then rotation, then
    scale (from ``params``) about the image center; column widths scale with
    the same resize factor. Each column adds a unit-peak Gaussian scaled by
    occupancy and a signed effective amplitude: +A for every column at white
    contrast, -A for black (A clipped so the vacuum stays >= 0), and +A
    particle / -A/2 support for intermediate (the support dip clipped the
    same way). Tilt widens sigma anisotropically by (1 + 0.05 *
    |tilt_degrees|) per axis.
    """
    params = params or ImagingParams()
    check_positive(params.scale, "scale")
    w, h = int(params.width), int(params.height)
    out = np.full((h, w), float(model.vacuum_level))
    if not model.columns:
        return out

    centers = np.array([c.center for c in model.columns])
    centers = _position_transform(centers, model.shear, params.rotation, params.scale, w, h)

    tilt_x = math.degrees(math.atan(model.shear[0]))
    tilt_y = math.degrees(math.atan(model.shear[1]))
    stretch_x = 1.0 + 0.05 * abs(tilt_x)
    stretch_y = 1.0 + 0.05 * abs(tilt_y)

    amp = float(model.amplitude)
    vac = float(model.vacuum_level)
    for col, (x, y) in zip(model.columns, centers):
        if model.contrast == "white":
            eff = amp
        elif model.contrast == "black":
            eff = -min(amp, vac)
        else:  # intermediate
            eff = amp if col.species == "particle" else -min(0.5 * amp, vac)
        eff *= col.occupancy
        sx = col.sigma * stretch_x * params.scale
        sy = col.sigma * stretch_y * params.scale
        reach = 5.0 * max(sx, sy)
        x0, x1 = int(max(math.floor(x - reach), 0)), int(min(math.ceil(x + reach), w - 1))
        y0, y1 = int(max(math.floor(y - reach), 0)), int(min(math.ceil(y + reach), h - 1))
        if x0 > x1 or y0 > y1:
            continue
        xs = np.arange(x0, x1 + 1) - x
        ys = np.arange(y0, y1 + 1) - y
        gauss = np.exp(-0.5 * (ys[:, None] / sy) ** 2 - 0.5 * (xs[None, :] / sx) ** 2)
        out[y0:y1 + 1, x0:x1 + 1] += eff * gauss
    return np.maximum(out, 0.0)


def transform(img, rotation, scale) -> np.ndarray:
    """Rotate and scale image content about the center (bilinear, replicate border).

    ``scale`` must lie in [0.5, 2]. rotation = 0 and scale = 1 return the input
    unchanged (bitwise). Output dimensions equal input dimensions.
    """
    arr = as_image_array(img)
    if not 0.5 <= scale <= 2.0:
        raise ParameterError(f"scale must be within [0.5, 2], got {scale!r}")
    if rotation % 360.0 == 0.0 and scale == 1.0:
        return arr.copy()
    h, w = arr.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    u = xx - cx
    v = yy - cy
    th = math.radians(rotation)
    src_x = cx + (math.cos(th) * u + math.sin(th) * v) / scale
    src_y = cy + (-math.sin(th) * u + math.cos(th) * v) / scale
    return ndimage.map_coordinates(arr, [src_y, src_x], order=1, mode="nearest")


def model_to_json(model, path=None):
    """Serialize a structure model; returns the JSON string (and writes if asked)."""
    doc = {
        "columns": [
            {"x": c.center[0], "y": c.center[1], "species": c.species,
             "occupancy": c.occupancy, "sigma": c.sigma}
            for c in model.columns
        ],
        "contrast": model.contrast,
        "vacuum_level": model.vacuum_level,
        "amplitude": model.amplitude,
        "particle_class": model.particle_class,
        "defect_class": model.defect_class,
        "shear": list(model.shear),
    }
    text = json.dumps(doc, indent=1, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def model_from_json(source) -> StructureModel:
    """Inverse of :func:`model_to_json`; ``source`` is a JSON string or a path."""
    text = source if isinstance(source, str) else os.fspath(source)
    if "\n" not in text and not text.lstrip().startswith("{"):
        with open(text) as fh:
            text = fh.read()
    doc = json.loads(text)
    columns = [AtomColumn((c["x"], c["y"]), c["species"], c["occupancy"], c["sigma"])
               for c in doc["columns"]]
    return StructureModel(columns, doc["contrast"], doc["vacuum_level"],
                          doc["amplitude"], doc["particle_class"],
                          doc["defect_class"], tuple(doc["shear"]))
