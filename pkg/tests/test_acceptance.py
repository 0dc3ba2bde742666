"""End-to-end acceptance checks, one test per shipped guarantee.

Run with ``pytest tests/test_acceptance.py -v`` for one pass/fail line per
criterion; each test also enforces its own wall-clock budget and prints a
one-line summary (visible with ``-s``). The long-running entries are the
30-image benchmark (criterion 3) and its byte-identity rerun (criterion 10),
which share one generated dataset.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from sbd import cli
from sbd import denoise as dn
from sbd import detect as dt
from sbd import harness as hn
from sbd import likelihood as lh
from sbd import metrics as mt
from sbd import noise as ns
from sbd import probe as pb
from sbd import synth


def _pass(num, label, elapsed, budget, detail):
    print(f"criterion {num:02d} [{label}]: PASS in {elapsed:.1f}s "
          f"(budget {budget:.0f}s) -- {detail}")


def _check_budget(num, t0, budget):
    elapsed = time.perf_counter() - t0
    assert elapsed < budget, (
        f"criterion {num} exceeded its runtime budget: "
        f"{elapsed:.1f}s >= {budget}s")
    return elapsed


@pytest.fixture(scope="module")
def white_testset(tmp_path_factory):
    """30-entry seeded white-contrast benchmark set at half scale."""
    root = tmp_path_factory.mktemp("white30")
    config = hn.GenerationConfig(
        out_dir=str(root),
        particle_classes=("PtNp3",),
        defect_classes=("D0", "D1", "D2", "Dh", "Ds"),
        seeds=tuple(range(6)),
        geometry=synth.GeometryConfig().scaled(0.5),
    )
    return hn.generate_dataset(config)


def test_criterion_01_noise_model():
    t0 = time.perf_counter()
    geom = synth.GeometryConfig().scaled(0.25)
    model = synth.build_structure("PtNp3", "D0", "white", geom)
    clean = synth.render(model, synth.ImagingParams(width=geom.width,
                                                    height=geom.height))
    dosed = ns.scale_to_dose(clean)
    frames = [ns.poisson_corrupt(dosed, seed=s) for s in range(40)]
    stats = ns.noise_stats(frames, ns.vacuum_heuristic(dosed))
    assert 0.9 <= stats.slope <= 1.1
    assert abs(stats.intercept) < 0.05

    # Pooled-vacuum calibration: for each seed, redraw the 40-frame vacuum
    # ensemble and chi-square it against a single pooled-mean Poisson law.
    vacuum_rates = np.tile(dosed[ns.vacuum_heuristic(dosed)], (40, 1))
    n_ok = 0
    for seed in range(100):
        counts = ns.poisson_corrupt(vacuum_rates, seed=seed)
        _, p_value, _ = ns.poisson_calibration(counts)
        n_ok += p_value > 0.01
    assert n_ok >= 99

    elapsed = _check_budget(1, t0, 10.0)
    _pass(1, "noise model", elapsed, 10,
          f"slope={stats.slope:.4f} intercept={stats.intercept:+.4f} "
          f"pooled-vacuum p>0.01 in {n_ok}/100 seeds")


def test_criterion_02_vst_stabilization():
    t0 = time.perf_counter()
    details = []
    for lam, seed in ((4.0, 42), (8.0, 43), (20.0, 44)):
        draws = ns.poisson_corrupt(np.full((1000, 1000), lam), seed=seed)
        var = float(np.var(dn.anscombe(draws)))
        assert 0.95 <= var <= 1.05, f"var at rate {lam}: {var}"
        details.append(f"var[{lam:g}]={var:.4f}")

    # The unbiased inverse recovers the rate from the expected transformed
    # count; inverting noisy draws pointwise would carry an irreducible +1/4
    # convexity offset that no unbiased inverse can remove.
    for lam, seed in ((10.0, 45), (20.0, 46), (50.0, 47)):
        draws = ns.poisson_corrupt(np.full((1000, 1000), lam), seed=seed)
        mean_transformed = float(np.mean(dn.anscombe(draws)))
        recovered = float(dn.inv_anscombe(np.full((1, 1), mean_transformed))[0, 0])
        rel_err = abs(recovered - lam) / lam
        assert rel_err < 0.005, f"inverse at rate {lam}: rel err {rel_err}"
        details.append(f"inv[{lam:g}]={100 * rel_err:.3f}%")

    elapsed = _check_budget(2, t0, 5.0)
    _pass(2, "VST stabilization", elapsed, 5, " ".join(details))


def test_criterion_03_baseline_ordering(white_testset):
    t0 = time.perf_counter()
    names = ("raw", "lowpass", "wiener", "vst_nlm")
    methods = [(name, dn.make_denoiser(name)) for name in names]
    report = hn.run_benchmark(white_testset, methods)
    assert report.n_failed == 0
    mean_psnr = {name: report.aggregates[name]["psnr"]["mean"]
                 for name in names}

    assert mean_psnr["raw"] < mean_psnr["lowpass"]
    assert mean_psnr["raw"] < mean_psnr["wiener"]
    assert mean_psnr["vst_nlm"] > mean_psnr["wiener"]
    gap = max(mean_psnr.values()) - mean_psnr["raw"]
    assert gap >= 10.0, f"raw-to-best PSNR gap {gap:.2f} dB < 10 dB"

    elapsed = _check_budget(3, t0, 600.0)
    _pass(3, "baseline ordering", elapsed, 600,
          " ".join(f"{k}={v:.2f}dB" for k, v in mean_psnr.items())
          + f" gap={gap:.2f}dB")


def test_criterion_04_detection_fidelity():
    t0 = time.perf_counter()
    # Half-scale view: neighbour-tail bias on peak positions is a fixed
    # fraction of sigma, and the 1 px bound here is absolute.
    geom = synth.GeometryConfig().scaled(0.5)
    assert geom.particle_spacing >= 5.0 * geom.sigma

    worst = 0.0
    n_configs = 0
    for particle in synth.PARTICLE_CLASSES:
        for defect in ("D0", "D1", "D2", "Dh", "Ds"):
            model = synth.build_structure(particle, defect, "white", geom)
            img = synth.render(model, synth.ImagingParams(width=geom.width,
                                                          height=geom.height))
            found = dt.detect_blobs(img, **hn.detection_params_for(model))
            truth = [c.center for c in model.columns]
            assert len(found) == len(truth), (
                f"{particle}/{defect}: {len(found)} detections "
                f"vs {len(truth)} columns")
            matching = dt.match_atoms(found, truth, threshold=1.0)
            assert len(matching.pairs) == len(truth), (
                f"{particle}/{defect}: some center off by more than 1 px")
            worst = max(worst, max(d for _, _, d in matching.pairs))
            n_configs += 1
    assert n_configs == 20

    elapsed = _check_budget(4, t0, 60.0)
    _pass(4, "detection fidelity", elapsed, 60,
          f"20/20 configs exact, worst center error {worst:.3f} px")


def test_criterion_05_metric_sensitivity():
    t0 = time.perf_counter()
    size = 1024
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    def bump(cx, cy):
        return 4.0 * np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 81.0)))

    truth = [(212.0 + 150.0 * i, 312.0 + 200.0 * j)
             for i in range(5) for j in range(3)]
    clean = np.full((size, size), 0.45)
    for cx, cy in truth:
        clean += bump(cx, cy)
    rng = np.random.Generator(np.random.Philox(key=99))
    denoised = clean + rng.normal(0.0, 0.3, clean.shape)
    spoiled = denoised + bump(512.0, 212.0)  # one spurious nominal-amplitude atom

    params = dt.blob_defaults(9.0, 4.0)
    found_before = dt.detect_blobs(denoised, **params)
    found_after = dt.detect_blobs(spoiled, **params)
    assert len(found_before) == 15
    assert len(found_after) == 16

    threshold = 22.5
    before = mt.detection_metrics(
        dt.match_atoms(found_before, truth, threshold), len(found_before), len(truth))
    after = mt.detection_metrics(
        dt.match_atoms(found_after, truth, threshold), len(found_after), len(truth))
    assert before.precision == 1.0
    assert after.precision == 0.9375
    assert after.jaccard == 0.9375

    delta_psnr = abs(mt.psnr(clean, denoised) - mt.psnr(clean, spoiled))
    delta_ssim = abs(mt.ssim(clean, denoised) - mt.ssim(clean, spoiled))
    assert delta_psnr < 0.5
    assert delta_ssim < 0.01

    elapsed = _check_budget(5, t0, 10.0)
    _pass(5, "metric sensitivity", elapsed, 10,
          f"dPSNR={delta_psnr:.4f}dB dSSIM={delta_ssim:.6f} "
          f"precision 1.0->{after.precision} jaccard {before.jaccard}->{after.jaccard}")


def test_criterion_06_llr_separation():
    t0 = time.perf_counter()
    shape = (32, 32)
    vacuum_rate, atom_rate = 0.45, 4.45
    region = lh.disk_region((15.5, 15.5), 12.0, shape)
    tp_rates = np.full(shape, vacuum_rate)
    tp_rates[region.ys, region.xs] = atom_rate
    fp_rates = np.full(shape, vacuum_rate)

    def llr_per_pixel(noisy):
        llr = (lh.poisson_loglik(noisy, region, atom_rate)
               - lh.poisson_loglik(noisy, region, vacuum_rate))
        return llr / region.n_pixels

    tp_llrs, fp_llrs = [], []
    for k in range(500):
        tp_llrs.append(llr_per_pixel(ns.poisson_corrupt(tp_rates, seed=2 * k)))
        fp_llrs.append(llr_per_pixel(ns.poisson_corrupt(fp_rates, seed=2 * k + 1)))
    assert len(tp_llrs) + len(fp_llrs) >= 1000

    tp_median = float(np.median(tp_llrs))
    fp_median = float(np.median(fp_llrs))
    frac_positive = float(np.mean(np.asarray(tp_llrs) > 0.0))
    assert tp_median > 0.0
    assert fp_median < tp_median
    assert frac_positive >= 0.95

    elapsed = _check_budget(6, t0, 120.0)
    _pass(6, "LLR separation", elapsed, 120,
          f"median TP={tp_median:.3f} FP={fp_median:.3f} "
          f"TP>0 in {100 * frac_positive:.1f}% of trials")


def test_criterion_07_tiling_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    img = rng.uniform(0.0, 8.0, (1024, 1024))
    identity = dn.make_denoiser("identity")
    grid = ((400, 200), (256, 128), (300, 60), (128, 0), (512, 256), (333, 111))
    for tile, overlap in grid:
        out = dn.denoise_tiled(img, identity, dn.TilingSpec(tile=tile,
                                                            overlap=overlap))
        assert np.array_equal(out, img), f"tile={tile} overlap={overlap}"

    size = 600
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    blobs = np.full((size, size), 0.45)
    for cx, cy in ((150, 150), (450, 150), (150, 450), (450, 450)):
        blobs += 4.0 * np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 81.0)))
    overlap = 200
    tiled = dn.denoise_tiled(blobs, dn.make_denoiser("lowpass"),
                             dn.TilingSpec(tile=400, overlap=overlap))
    full = dn.lowpass(blobs)
    # Interior excludes a half-overlap frame margin, where a tile's periodic
    # spectrum legitimately differs from the full frame's.
    margin = overlap // 2
    interior = np.abs(tiled - full)[margin:-margin, margin:-margin]
    deviation = float(interior.max())
    assert deviation <= 1e-6

    elapsed = _check_budget(7, t0, 60.0)
    _pass(7, "tiling correctness", elapsed, 60,
          f"identity bitwise on {len(grid)} grids, "
          f"lowpass interior deviation {deviation:.2e}")


def test_criterion_08_probe_linearity():
    t0 = time.perf_counter()
    size, window = 96, 20
    tx, ty = 48, 48
    cutoff = 0.25

    delta = np.zeros((size, size))
    delta[ty, tx] = 1.0
    delta_response = dn.lowpass(delta, cutoff=cutoff)
    box = (slice(ty - window, ty + window + 1),
           slice(tx - window, tx + window + 1))

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    structured = 0.45 + 4.0 * np.exp(-(((xx - 30.0) ** 2 + (yy - 60.0) ** 2)
                                       / (2 * 81.0)))
    bases = (np.full((size, size), 0.45), structured)
    lowpass_filter = dn.LowPassFilter(cutoff=cutoff)
    worst = 0.0
    maps = []
    for base in bases:
        gmap = pb.gradient_map(lowpass_filter, base, (tx, ty), window=window)
        worst = max(worst, float(np.max(np.abs(gmap.values[box]
                                               - delta_response[box]))))
        maps.append(gmap.values)
    assert worst <= 1e-6
    # A linear denoiser's gradient cannot depend on the base image.
    assert float(np.max(np.abs(maps[0] - maps[1]))) <= 1e-6

    # Zero base keeps the identity forward difference exactly h/h in floats.
    gmap = pb.gradient_map(dn.IdentityDenoiser(), np.zeros((size, size)),
                           (tx, ty), window=window)
    assert np.array_equal(gmap.values, delta)

    elapsed = _check_budget(8, t0, 120.0)
    _pass(8, "probe linearity", elapsed, 120,
          f"lowpass worst deviation {worst:.2e} at 2 bases, identity exact")


def test_criterion_09_matching_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    n_checked = 0
    for _ in range(500):
        n_a = int(rng.integers(0, 40))
        n_b = int(rng.integers(0, 40))
        a = rng.uniform(0.0, 200.0, (n_a, 2))
        b = rng.uniform(0.0, 200.0, (n_b, 2))
        threshold = float(rng.uniform(1.0, 50.0))

        matching = dt.match_atoms(a, b, threshold)
        ia = [i for i, _, _ in matching.pairs]
        ib = [j for _, j, _ in matching.pairs]
        assert len(set(ia)) == len(ia)
        assert len(set(ib)) == len(ib)
        assert all(d <= threshold for _, _, d in matching.pairs)
        assert len(matching.pairs) + len(matching.unmatched_a) == n_a
        assert len(matching.pairs) + len(matching.unmatched_b) == n_b

        swapped = dt.match_atoms(b, a, threshold)
        assert ({(j, i) for i, j, _ in matching.pairs}
                == {(i, j) for i, j, _ in swapped.pairs})

        report = mt.detection_metrics(matching, n_a, n_b)
        values = (report.precision, report.recall, report.f1, report.jaccard)
        for value in values:
            assert np.isnan(value) or 0.0 <= value <= 1.0
        if not (np.isnan(report.f1) or np.isnan(report.jaccard)):
            assert report.jaccard <= report.f1 + 1e-12
        n_checked += 1
    assert n_checked == 500

    elapsed = _check_budget(9, t0, 30.0)
    _pass(9, "matching properties", elapsed, 30,
          f"{n_checked} randomized instances, all invariants hold")


def test_criterion_10_reproducibility(white_testset, tmp_path):
    t0 = time.perf_counter()
    manifest_path = Path(white_testset.root) / "manifest.json"
    methods = 'raw,lowpass,wiener,vstnlm,external:"cp {in} {out}"'
    out_dirs = []
    for run in ("first", "second"):
        out_dir = tmp_path / run
        rc = cli.main(["bench", "--manifest", str(manifest_path),
                       "--methods", methods, "--out", str(out_dir)])
        assert rc == 0
        out_dirs.append(out_dir)

    identical = []
    for name in ("report.csv", "aggregates.json"):
        first = (out_dirs[0] / name).read_bytes()
        second = (out_dirs[1] / name).read_bytes()
        assert first == second, f"{name} differs between identical runs"
        identical.append(f"{name} ({len(first)} bytes)")

    elapsed = _check_budget(10, t0, 1200.0)
    _pass(10, "reproducibility", elapsed, 1200,
          "byte-identical: " + ", ".join(identical))
