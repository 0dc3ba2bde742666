"""End-to-end benchmark harness: dataset generation, scoring, sweeps, LLR studies.

Everything here is deterministic given a config: seeds come from the config,
report files carry no timestamps (per-row runtimes stay in memory unless a
timing sidecar is requested), and floats are written with shortest-round-trip
repr, so rerunning a benchmark reproduces its report files byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
import time
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import denoise as dn
from . import detect as dt
from . import likelihood as lk
from . import metrics as mt
from . import noise as ns
from . import synth
from .errors import ParameterError, SbdError
from .image import read_image, write_image
from .validation import check_in

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class GenerationConfig:
    """Grid description for synthetic dataset generation.

    Every sequence field is a grid axis; generate_dataset emits one entry per
    element of their cartesian product. ``counts`` is the vacuum dose axis in
    counts/pixel; ``shears`` holds (sx, sy) dimensionless shear pairs.
    """

    out_dir: str = "dataset"
    particle_classes: tuple = ("PtNp3",)
    defect_classes: tuple = ("D0",)
    contrasts: tuple = ("white",)
    rotations: tuple = (0.0,)
    scales: tuple = (1.0,)
    shears: tuple = ((0.0, 0.0),)
    seeds: tuple = (0,)
    counts: tuple = (ns.VACUUM_TARGET,)
    geometry: synth.GeometryConfig = field(default_factory=synth.GeometryConfig)

    def to_dict(self):
        doc = {
            "out_dir": self.out_dir,
            "particle_classes": list(self.particle_classes),
            "defect_classes": list(self.defect_classes),
            "contrasts": list(self.contrasts),
            "rotations": list(self.rotations),
            "scales": list(self.scales),
            "shears": [list(t) for t in self.shears],
            "seeds": list(self.seeds),
            "counts": list(self.counts),
            "geometry": vars(self.geometry).copy(),
        }
        return doc

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        geometry = doc.pop("geometry", None) or {}
        if not isinstance(geometry, synth.GeometryConfig):
            geometry = synth.GeometryConfig(**geometry)
        shears = tuple(tuple(t) for t in doc.pop("shears", ((0.0, 0.0),)))
        listy = {k: tuple(v) for k, v in doc.items() if isinstance(v, list)}
        doc.update(listy)
        return cls(geometry=geometry, shears=shears, **doc)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def config_hash(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    clean: str
    noisy: str
    atoms: str
    model: str
    seed: int
    split: str
    rotation: float
    scale: float
    shear: tuple
    counts: float
    contrast: str
    particle_class: str
    defect_class: str


@dataclass
class DatasetManifest:
    entries: list
    config_hash: str
    root: str = "."

    def path(self, rel):
        return os.path.join(self.root, rel)

    def save(self, path):
        doc = {
            "config_hash": self.config_hash,
            "entries": [
                {**vars(e), "shear": list(e.shear)} for e in self.entries
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        entries = [ManifestEntry(**{**e, "shear": tuple(e["shear"])})
                   for e in doc["entries"]]
        return cls(entries, doc["config_hash"], os.path.dirname(os.path.abspath(path)))


def _assign_splits(n):
    """90% train; the remainder split evenly between val and test."""
    n_train = int(math.floor(0.9 * n))
    rest = n - n_train
    n_val = (rest + 1) // 2
    out = ["train"] * n_train + ["val"] * n_val + ["test"] * (rest - n_val)
    return out


def _fmt(x):
    return f"{x:g}".replace("-", "m").replace(".", "p")


def generate_dataset(config, out_dir=None) -> DatasetManifest:
    """Render, transform, dose-calibrate, and corrupt the full config grid.

    Writes per entry: dosed clean and noisy F32IMG images, a ground-truth atom
    CSV (post-transform centers of columns with occupancy > 0, scale = column
    sigma, response = occupancy, surface flags from the alpha shape), and the
    model JSON. Any write failure removes the files written so far.
    """
    root = out_dir or config.out_dir
    os.makedirs(root, exist_ok=True)
    geom = config.geometry
    params = synth.ImagingParams(width=geom.width, height=geom.height)
    combos = list(itertools.product(
        config.particle_classes, config.defect_classes, config.contrasts,
        config.rotations, config.scales, config.shears, config.counts,
        config.seeds))
    splits = _assign_splits(len(combos))
    entries = []
    written = []
    try:
        for (pc, dc, contrast, rot, sc, shear, cnt, seed), split in zip(combos, splits):
            model = synth.build_structure(pc, dc, contrast, geom, shear)
            rendered = synth.render(model, params)
            moved = synth.transform(rendered, rot, sc)
            dosed = ns.scale_to_dose(moved, cnt, mode=contrast)
            noisy = ns.poisson_corrupt(dosed, seed)

            live = [c for c in model.columns if c.occupancy > 0]
            centers = np.array([c.center for c in live]).reshape(-1, 2)
            centers = synth._position_transform(
                centers, model.shear, rot, sc, geom.width, geom.height)
            keep = ((centers[:, 0] >= 0) & (centers[:, 0] <= geom.width - 1)
                    & (centers[:, 1] >= 0) & (centers[:, 1] <= geom.height - 1))
            truth = [dt.AtomDetection((float(x), float(y)), c.sigma * sc, c.occupancy)
                     for c, (x, y), ok in zip(live, centers, keep) if ok]
            if len(truth) >= 3:
                truth = dt.surface_partition(truth)

            eid = (f"{pc}-{dc}-{contrast}-r{_fmt(rot)}-s{_fmt(sc)}"
                   f"-sh{_fmt(shear[0])}x{_fmt(shear[1])}-c{_fmt(cnt)}-seed{seed}")
            rel = {
                "clean": f"{eid}.clean.f32img",
                "noisy": f"{eid}.noisy.f32img",
                "atoms": f"{eid}.atoms.csv",
                "model": f"{eid}.model.json",
            }
            for key, fn in rel.items():
                written.append(os.path.join(root, fn))
            write_image(dosed, os.path.join(root, rel["clean"]))
            write_image(noisy, os.path.join(root, rel["noisy"]))
            dt.write_atoms(os.path.join(root, rel["atoms"]), truth)
            synth.model_to_json(model, os.path.join(root, rel["model"]))
            entries.append(ManifestEntry(
                eid, rel["clean"], rel["noisy"], rel["atoms"], rel["model"],
                int(seed), split, float(rot), float(sc), tuple(shear),
                float(cnt), contrast, pc, dc))
        manifest = DatasetManifest(entries, config.config_hash(), root)
        manifest.save(os.path.join(root, "manifest.json"))
        return manifest
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.unlink(path)
        raise


def detection_params_for(model, view_scale=1.0):
    """Detection defaults matched to a model: sigma ladder around the rendered
    column width and a threshold at 10% of the weakest full-occupancy peak
    response."""
    sigma = float(np.median([c.sigma for c in model.columns])) * view_scale
    amp = model.amplitude
    vac = model.vacuum_level
    if model.contrast == "white":
        eff, polarity = amp, "bright"
    elif model.contrast == "black":
        eff, polarity = min(amp, vac), "dark"
    else:
        eff, polarity = min(0.5 * amp, vac), "both"
    cfg = dt.blob_defaults(sigma, eff)
    cfg["polarity"] = polarity
    return cfg


def default_matching_threshold(truth, fallback=30.0):
    """Half the minimum nearest-neighbour distance of the ground truth."""
    pts = np.array([t.center for t in truth], dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        return fallback
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    return 0.5 * float(d.min())


_SCOPES = (("surface", True), ("bulk", False))

ROW_COLUMNS = ("image_id", "method", "status", "psnr", "ssim",
               "n_detected", "n_truth",
               "surface_precision", "surface_recall", "surface_f1",
               "surface_jaccard", "surface_tp", "surface_fp", "surface_fn",
               "bulk_precision", "bulk_recall", "bulk_f1",
               "bulk_jaccard", "bulk_tp", "bulk_fp", "bulk_fn", "error")

AGGREGATE_COLUMNS = tuple(c for c in ROW_COLUMNS
                          if c not in ("image_id", "method", "status", "error"))


@dataclass
class BenchmarkReport:
    rows: list          # dicts keyed by ROW_COLUMNS plus in-memory runtime_ms
    aggregates: dict    # method -> column -> {"mean": .., "sd": .., "n": ..}
    n_failed: int


def _score_entry(manifest, entry, name, denoiser, tiling, matching_threshold):
    clean = read_image(manifest.path(entry.clean)).data
    noisy = read_image(manifest.path(entry.noisy)).data
    truth = dt.read_atoms(manifest.path(entry.atoms))
    model = synth.model_from_json(manifest.path(entry.model))

    denoised = dn.denoise_tiled(noisy, denoiser, tiling)
    row = {
        "image_id": entry.id, "method": name, "status": "ok",
        "psnr": mt.psnr(clean, denoised), "ssim": mt.ssim(clean, denoised),
        "error": "",
    }
    found = dt.detect_blobs(denoised, **detection_params_for(model, entry.scale))
    if len(found) >= 3:
        found = dt.surface_partition(found)
    else:
        found = [replace(d, is_surface=True) for d in found]
    row["n_detected"] = len(found)
    row["n_truth"] = len(truth)
    threshold = matching_threshold or default_matching_threshold(truth)
    for scope, flag in _SCOPES:
        a = [d for d in found if d.is_surface == flag]
        b = [t for t in truth if t.is_surface == flag]
        m = dt.match_atoms(a, b, threshold)
        rep = mt.detection_metrics(m, len(a), len(b), scope)
        row[f"{scope}_precision"] = rep.precision
        row[f"{scope}_recall"] = rep.recall
        row[f"{scope}_f1"] = rep.f1
        row[f"{scope}_jaccard"] = rep.jaccard
        row[f"{scope}_tp"], row[f"{scope}_fp"], row[f"{scope}_fn"] = rep.counts
    return row


def run_benchmark(manifest, methods, tiling=None, matching_threshold=None,
                  out_dir=None) -> BenchmarkReport:
    """Score every (entry, method) pair; failures are recorded, not fatal.

    ``methods`` is a sequence of (name, denoiser estimator/callable) pairs.
    When ``out_dir`` is given the report files are written there. Each row
    carries its wall-clock runtime_ms, which never reaches the report files:
    identical runs must produce byte-identical reports.
    """
    rows = []
    n_failed = 0
    for entry in manifest.entries:
        for name, denoiser in methods:
            t0 = time.perf_counter()
            try:
                row = _score_entry(manifest, entry, name, denoiser, tiling,
                                   matching_threshold)
            except (SbdError, OSError) as exc:
                n_failed += 1
                row = {c: "" for c in ROW_COLUMNS}
                row.update({"image_id": entry.id, "method": name,
                            "status": "failed", "error": str(exc)})
            row["runtime_ms"] = (time.perf_counter() - t0) * 1e3
            rows.append(row)
    aggregates = _aggregate(rows)
    report = BenchmarkReport(rows, aggregates, n_failed)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def _aggregate(rows):
    out = {}
    for method in sorted({r["method"] for r in rows}):
        ok = [r for r in rows if r["method"] == method and r["status"] == "ok"]
        cols = {}
        for col in AGGREGATE_COLUMNS:
            vals = np.array([float(r[col]) for r in ok]) if ok else np.array([])
            if vals.size:
                cols[col] = {"mean": float(vals.mean()),
                             "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                             "n": int(vals.size)}
            else:
                cols[col] = {"mean": None, "sd": None, "n": 0}
        out[method] = cols
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v
                             for v in row])


def write_report(report, out_dir, timings=False):
    """report.csv + aggregates.json, both deterministic.

    runtime_ms is excluded from report.csv so identical runs stay
    byte-identical; pass timings=True to emit a timings.csv sidecar.
    """
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "report.csv"), ROW_COLUMNS,
               [[r[c] for c in ROW_COLUMNS] for r in report.rows])
    with open(os.path.join(out_dir, "aggregates.json"), "w") as fh:
        json.dump(report.aggregates, fh, indent=1, sort_keys=True)
    if timings:
        _write_csv(os.path.join(out_dir, "timings.csv"),
                   ("image_id", "method", "runtime_ms"),
                   [(r["image_id"], r["method"], r.get("runtime_ms", ""))
                    for r in report.rows])


def load_report(out_dir):
    """Read report.csv back and recompute aggregates (consistency helper)."""
    rows = []
    with open(os.path.join(out_dir, "report.csv"), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != ROW_COLUMNS:
            raise ParameterError(f"unexpected report header {header}")
        for raw in reader:
            rows.append(dict(zip(ROW_COLUMNS, raw)))
    return rows, _aggregate(rows)


@dataclass
class SweepReport:
    rows: list            # (axis, value, image_id, seed, psnr)
    rotation_table: list  # (rotation, mean, sd, n)
    scale_table: list     # (scale, mean, sd, n)


def _sweep_seed(entry, rotation, scale):
    if rotation == 0.0 and scale == 1.0:
        return entry.seed
    key = f"{entry.id}:{rotation:g}:{scale:g}".encode()
    return zlib.crc32(key) & 0x7FFFFFFF


def sweep_geometry(method, manifest, scales=(), rotations=(), tiling=None,
                   out_dir=None) -> SweepReport:
    """Re-corrupt transformed clean images over scale and rotation axes.

    Each axis is swept independently (rotations at scale 1, scales at rotation
    0), at each entry's own dose. The nominal grid point reuses the entry's
    own seed, reproducing the benchmark pipeline; other points derive their
    seed from (entry, point).
    """
    name, denoiser = method
    points = [("rotation", float(r)) for r in rotations]
    points += [("scale", float(s)) for s in scales]
    if not points:
        raise ParameterError("sweep needs at least one rotation or scale")
    rows = []
    for entry in manifest.entries:
        base = read_image(manifest.path(entry.clean)).data
        for axis, value in points:
            rot, sc = (value, 1.0) if axis == "rotation" else (0.0, value)
            seed = _sweep_seed(entry, rot, sc)
            if rot == 0.0 and sc == 1.0:
                # Nominal point IS the benchmark configuration; reuse its
                # exact artifacts rather than re-dosing (which would differ
                # by one rounding step and reseed the corruption).
                dosed = base
                noisy = read_image(manifest.path(entry.noisy)).data
            else:
                moved = synth.transform(base, rot, sc)
                dosed = ns.scale_to_dose(moved, entry.counts, mode=entry.contrast)
                noisy = ns.poisson_corrupt(dosed, seed)
            denoised = dn.denoise_tiled(noisy, denoiser, tiling)
            rows.append((axis, value, entry.id, seed, mt.psnr(dosed, denoised)))

    def table(axis):
        out = []
        for value in sorted({v for a, v, *_ in rows if a == axis}):
            vals = np.array([r[4] for r in rows if r[0] == axis and r[1] == value])
            out.append((value, float(vals.mean()),
                        float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                        int(vals.size)))
        return out

    report = SweepReport(rows, table("rotation"), table("scale"))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, f"sweep_{name}.csv"),
                   ("axis", "value", "image_id", "seed", "psnr"), rows)
        _write_csv(os.path.join(out_dir, f"psnr_vs_rotation_{name}.csv"),
                   ("rotation", "mean_psnr", "sd", "n"), report.rotation_table)
        _write_csv(os.path.join(out_dir, f"psnr_vs_scale_{name}.csv"),
                   ("scale", "mean_psnr", "sd", "n"), report.scale_table)
    return report


@dataclass
class LlrReport:
    rows: list      # (image_id, klass, cx, cy, scale, llr)
    summary: dict   # klass -> {count, min, q1, median, q3, max}


def _quartiles(values):
    arr = np.array(values, dtype=np.float64)
    if arr.size == 0:
        return {"count": 0, "min": None, "q1": None, "median": None,
                "q3": None, "max": None}
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return {"count": int(arr.size), "min": float(arr.min()), "q1": float(q1),
            "median": float(med), "q3": float(q3), "max": float(arr.max())}


def evaluate_llr_distribution(manifest, method, tiling=None,
                              matching_threshold=None, out_dir=None) -> LlrReport:
    """Classify surface regions as TP / FP / FN and score each by LLR.

    TP: detected surface atoms matched to ground truth; FP: unmatched surface
    detections; FN: unmatched ground-truth surface atoms (scored at the truth
    position with the nominal column scale). Box-plot quartiles per class.
    """
    name, denoiser = method
    rows = []
    for entry in manifest.entries:
        noisy = read_image(manifest.path(entry.noisy)).data
        truth = dt.read_atoms(manifest.path(entry.atoms))
        model = synth.model_from_json(manifest.path(entry.model))
        denoised = dn.denoise_tiled(noisy, denoiser, tiling)
        found = dt.detect_blobs(denoised, **detection_params_for(model, entry.scale))
        if len(found) >= 3:
            found = dt.surface_partition(found)
        else:
            found = [replace(d, is_surface=True) for d in found]
        vacuum_rate, _ = lk.estimate_vacuum(noisy, found)
        threshold = matching_threshold or default_matching_threshold(truth)
        a = [d for d in found if d.is_surface]
        b = [t for t in truth if t.is_surface]
        m = dt.match_atoms(a, b, threshold)
        matched_a = {i for i, _, _ in m.pairs}
        regions = []
        for i, d in enumerate(a):
            regions.append(("TP" if i in matched_a else "FP", d.center, d.scale))
        for j in m.unmatched_b:
            regions.append(("FN", b[j].center, b[j].scale))
        for klass, center, scale in regions:
            region = lk.disk_region(center, lk.REGION_RADIUS_FACTOR * scale,
                                    noisy.shape)
            if region.n_pixels == 0:
                continue
            fitted = lk.fit_region(denoised, region)
            llr = lk.llr_per_pixel(noisy, region, fitted.fitted_intensity,
                                   vacuum_rate)
            rows.append((entry.id, klass, float(center[0]), float(center[1]),
                         float(scale), llr))
    summary = {k: _quartiles([r[5] for r in rows if r[1] == k])
               for k in ("TP", "FP", "FN")}
    report = LlrReport(rows, summary)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, f"llr_regions_{name}.csv"),
                   ("image_id", "class", "cx", "cy", "scale", "llr_per_pixel"),
                   rows)
        with open(os.path.join(out_dir, f"llr_summary_{name}.json"), "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
    return report


def grid_search(manifest, kind, param_grid, split="val", tiling=None):
    """Pick the parameter combination maximizing mean PSNR on a split.

    ``param_grid`` maps parameter names to candidate lists. Returns
    (best_params, results) where results is a list of (params, mean_psnr).
    """
    check_in(split, SPLITS, "split")
    entries = [e for e in manifest.entries if e.split == split]
    if not entries:
        raise ParameterError(f"manifest has no entries in split {split!r}")
    names = sorted(param_grid)
    results = []
    for combo in itertools.product(*(param_grid[n] for n in names)):
        params = dict(zip(names, combo))
        denoiser = dn.make_denoiser(kind, **params)
        scores = []
        for entry in entries:
            clean = read_image(manifest.path(entry.clean)).data
            noisy = read_image(manifest.path(entry.noisy)).data
            scores.append(mt.psnr(clean, dn.denoise_tiled(noisy, denoiser, tiling)))
        results.append((params, float(np.mean(scores))))
    best = max(results, key=lambda t: t[1])
    return best[0], results
