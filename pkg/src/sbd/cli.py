"""Command-line interface.

Exit codes: 0 success, 2 bad configuration or input, 3 partial failure
(a benchmark finished but some rows failed).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import denoise as dn
from . import detect as dt
from . import harness as hn
from . import likelihood as lk
from . import noise as ns
from . import probe as pb
from .errors import SbdError
from .image import read_image, write_image


def _parse_value(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _parse_params(items):
    params = {}
    for item in items or ():
        if "=" not in item:
            raise SbdError(f"--param expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        params[key.strip()] = _parse_value(value)
    return params


def split_method_spec(text):
    """Split a methods string on commas that sit outside quotes.

    ``lowpass,external:"cp {in} {out}"`` -> ["lowpass", 'external:"cp {in} {out}"']
    """
    parts = []
    buf = []
    quote = None
    for ch in text:
        if quote:
            if ch == quote:
                quote = None
            buf.append(ch)
        elif ch in "\"'":
            quote = ch
            buf.append(ch)
        elif ch == ",":
            parts.append("".join(buf).strip())
            buf = []
        else:
            buf.append(ch)
    if quote:
        raise SbdError(f"unbalanced quote in methods spec {text!r}")
    if buf:
        parts.append("".join(buf).strip())
    return [p for p in parts if p]


def _method_pair(spec, params):
    name, _, rest = spec.partition(":")
    name = name.strip()
    kwargs = dict(params)
    if name == "external":
        command = rest.strip()
        if command[:1] in "\"'" and command[:1] == command[-1:]:
            command = command[1:-1]
        if not command:
            raise SbdError("external method needs a command: external:\"cmd {in} {out}\"")
        kwargs["command"] = command
    elif rest:
        raise SbdError(f"method {name!r} does not take a ':' argument")
    return name, dn.make_denoiser(name, **kwargs)


def _tiling(args):
    if getattr(args, "no_tiling", False):
        return None
    return dn.TilingSpec(tile=args.tile, overlap=args.overlap)


def _add_tiling_args(p):
    p.add_argument("--tile", type=int, default=400)
    p.add_argument("--overlap", type=int, default=200)
    p.add_argument("--no-tiling", action="store_true",
                   help="run the denoiser on the full frame")


def _cmd_corrupt(args):
    img = read_image(args.infile)
    dosed = ns.scale_to_dose(img.data, args.vacuum_target, mode=args.contrast)
    noisy = ns.poisson_corrupt(dosed, args.seed)
    write_image(noisy, args.outfile, pixel_size=img.pixel_size)
    return 0


def _cmd_denoise(args):
    name, denoiser = _method_pair(args.method, _parse_params(args.param))
    img = read_image(args.infile)
    out = dn.denoise_tiled(img.data, denoiser, _tiling(args))
    write_image(out, args.outfile, pixel_size=img.pixel_size)
    return 0


def _cmd_detect(args):
    img = read_image(args.infile)
    dets = dt.detect_blobs(
        img.data, sigma_min=args.sigma_min, sigma_max=args.sigma_max,
        n_scales=args.n_scales, threshold=args.threshold,
        polarity=args.polarity)
    if len(dets) >= 3 and not args.no_surface:
        dets = dt.surface_partition(dets, alpha=args.alpha)
    dt.write_atoms(args.outfile, dets)
    print(f"{len(dets)} atoms -> {args.outfile}")
    return 0


def _cmd_generate(args):
    config = hn.GenerationConfig.from_json(args.config)
    manifest = hn.generate_dataset(config, args.out)
    print(f"{len(manifest.entries)} entries -> {manifest.root}")
    return 0


def _methods_from_args(args):
    params = _parse_params(getattr(args, "param", None))
    return [_method_pair(spec, params)
            for spec in split_method_spec(args.methods)]


def _cmd_bench(args):
    manifest = hn.DatasetManifest.load(args.manifest)
    methods = _methods_from_args(args)
    report = hn.run_benchmark(manifest, methods, tiling=_tiling(args),
                              matching_threshold=args.matching_threshold)
    hn.write_report(report, args.out, timings=args.timings)
    print(f"{len(report.rows)} rows ({report.n_failed} failed) -> {args.out}")
    return 3 if report.n_failed else 0


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _cmd_sweep(args):
    manifest = hn.DatasetManifest.load(args.manifest)
    methods = _methods_from_args(args)
    for method in methods:
        hn.sweep_geometry(method, manifest, scales=_floats(args.scales),
                          rotations=_floats(args.rotations),
                          tiling=_tiling(args), out_dir=args.out)
    print(f"swept {len(methods)} methods -> {args.out}")
    return 0


def _cmd_llr(args):
    manifest = hn.DatasetManifest.load(args.manifest)
    methods = _methods_from_args(args)
    for method in methods:
        report = hn.evaluate_llr_distribution(
            manifest, method, tiling=_tiling(args),
            matching_threshold=args.matching_threshold, out_dir=args.out)
        counts = {k: v["count"] for k, v in report.summary.items()}
        print(f"{method[0]}: {counts} -> {args.out}")
    return 0


def _cmd_llr_map(args):
    noisy = read_image(args.noisy)
    denoised = read_image(args.denoised)
    dets = dt.read_atoms(args.atoms)
    if not dets:
        raise SbdError(f"no detections in {args.atoms}")
    vacuum_rate, _ = lk.estimate_vacuum(noisy.data, dets)
    lmap = lk.llr_map(noisy.data, denoised.data, dets, vacuum_rate)
    lk.write_region_report(args.out, lmap)
    if args.raster:
        write_image(lmap.raster, args.raster)
    if args.colormap:
        lk.export_signed_colormap(lmap.raster, args.colormap)
    print(f"{len(lmap.per_region)} regions, vacuum rate {vacuum_rate:.6g}")
    return 0


def _cmd_probe(args):
    name, denoiser = _method_pair(args.method, _parse_params(args.param))
    img = read_image(args.infile)
    x, y = (int(v) for v in args.pixel.split(","))
    gmap = pb.gradient_map(denoiser, img.data, (x, y), window=args.window,
                           step=args.step)
    write_image(gmap.values, args.outfile)
    summary = pb.gradient_summary(gmap)
    if args.summary:
        with open(args.summary, "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
    print(json.dumps({k: summary[k] for k in
                      ("target", "total_mass", "abs_mass", "n_flagged")}))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sbd",
        description="Synthetic-benchmark denoising tools for shot-noise-limited "
                    "atomic-resolution images.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corrupt", help="dose-calibrate and Poisson-corrupt an image")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--vacuum-target", type=float, default=ns.VACUUM_TARGET)
    p.add_argument("--contrast", default="white",
                   choices=("white", "black", "intermediate"))
    p.set_defaults(func=_cmd_corrupt)

    p = sub.add_parser("denoise", help="denoise an image with one method")
    p.add_argument("--method", required=True,
                   help="identity|lowpass|wiener|vstnlm|external:\"cmd {in} {out}\"")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    _add_tiling_args(p)
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("detect", help="detect atom columns and label surface sites")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--sigma-min", type=float, default=dt.DEFAULT_SIGMA_MIN)
    p.add_argument("--sigma-max", type=float, default=dt.DEFAULT_SIGMA_MAX)
    p.add_argument("--n-scales", type=int, default=dt.DEFAULT_N_SCALES)
    p.add_argument("--threshold", type=float, default=dt.DEFAULT_THRESHOLD)
    p.add_argument("--polarity", default="bright",
                   choices=("bright", "dark", "both"))
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--no-surface", action="store_true",
                   help="skip the alpha-shape surface partition")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("generate", help="generate a synthetic dataset from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("bench", help="run the denoising benchmark on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", required=True,
                   help="comma-separated, e.g. lowpass,wiener,vstnlm")
    p.add_argument("--out", required=True)
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.add_argument("--matching-threshold", type=float, default=None)
    p.add_argument("--timings", action="store_true",
                   help="also write a timings.csv sidecar (not reproducible)")
    _add_tiling_args(p)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("sweep", help="PSNR vs rotation and scale sweeps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", required=True)
    p.add_argument("--rotations", default="")
    p.add_argument("--scales", default="")
    p.add_argument("--out", required=True)
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    _add_tiling_args(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("llr", help="LLR distribution over TP/FP/FN regions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.add_argument("--matching-threshold", type=float, default=None)
    _add_tiling_args(p)
    p.set_defaults(func=_cmd_llr)

    p = sub.add_parser("llr-map", help="per-region LLR report for one image")
    p.add_argument("--noisy", required=True)
    p.add_argument("--denoised", required=True)
    p.add_argument("--atoms", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--raster", default=None)
    p.add_argument("--colormap", default=None, help="signed-colormap PPM path")
    p.set_defaults(func=_cmd_llr_map)

    p = sub.add_parser("probe", help="finite-difference receptive-field probe")
    p.add_argument("--method", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--pixel", required=True, metavar="X,Y")
    p.add_argument("--window", type=int, default=pb.DEFAULT_WINDOW)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--summary", default=None)
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_probe)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        return args.func(args)
    except (SbdError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
