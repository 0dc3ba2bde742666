import json
import math

import numpy as np
import pytest

from conftest import make_single_column
from sbd import synth
from sbd.errors import ParameterError

PARTICLE_CLASSES = ("PtNp1", "PtNp2", "PtNp3", "PtNp4")


def _count(model):
    return len(model.columns)


class TestBuildStructure:
    def test_defect_column_deltas(self):
        base = {dc: synth.build_structure("PtNp2", dc, "white")
                for dc in ("D0", "D1", "D2", "Dh", "Ds", "Da")}
        n0 = _count(base["D0"])
        assert _count(base["D1"]) == n0 - 1
        assert _count(base["D2"]) == n0 - 2
        assert _count(base["Dh"]) == n0
        assert _count(base["Ds"]) == n0
        assert _count(base["Da"]) == n0 + 1

    def test_dh_single_half_occupancy(self):
        model = synth.build_structure("PtNp2", "Dh", "white")
        occ = sorted(c.occupancy for c in model.columns)
        assert occ.count(0.5) == 1
        assert occ.count(1.0) == len(occ) - 1

    def test_ds_single_atom_occupancy(self):
        geom = synth.GeometryConfig()
        model = synth.build_structure("PtNp2", "Ds", "white", geom)
        occ = sorted(c.occupancy for c in model.columns)
        assert occ[0] == pytest.approx(1.0 / geom.column_height)
        assert all(o == 1.0 for o in occ[1:])

    def test_d2_removes_adjacent_pair(self):
        full = synth.build_structure("PtNp2", "D0", "white")
        d2 = synth.build_structure("PtNp2", "D2", "white")
        kept = {c.center for c in d2.columns}
        removed = [c.center for c in full.columns if c.center not in kept]
        assert len(removed) == 2
        d = math.dist(removed[0], removed[1])
        assert d <= synth.GeometryConfig().particle_spacing * 1.01

    def test_min_spacing_at_least_five_sigma(self):
        geom = synth.GeometryConfig()
        for pc in PARTICLE_CLASSES:
            model = synth.build_structure(pc, "D0", "white", geom)
            pts = np.array([c.center for c in model.columns])
            d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
            np.fill_diagonal(d, np.inf)
            assert d.min() >= 5.0 * geom.sigma, pc

    def test_class_and_contrast_validation(self):
        with pytest.raises(ParameterError):
            synth.build_structure("PtNp9", "D0", "white")
        with pytest.raises(ParameterError):
            synth.build_structure("PtNp1", "D7", "white")
        with pytest.raises(ParameterError):
            synth.build_structure("PtNp1", "D0", "sepia")

    def test_particle_must_fit_in_frame(self):
        geom = synth.GeometryConfig(width=512, height=512)
        with pytest.raises(ParameterError):
            synth.build_structure("PtNp4", "D0", "white", geom)

    def test_shear_stored_on_model(self):
        model = synth.build_structure("PtNp3", "D0", "white", shear=(0.1, -0.05))
        assert model.shear == (0.1, -0.05)

    def test_geometry_scaled(self):
        geom = synth.GeometryConfig().scaled(0.5)
        ref = synth.GeometryConfig()
        assert geom.width == ref.width // 2
        assert geom.sigma == ref.sigma * 0.5
        assert geom.particle_spacing == ref.particle_spacing * 0.5
        assert geom.px_per_nm == ref.px_per_nm * 0.5


class TestRender:
    def test_single_column_peak_oracle(self):
        img, model = make_single_column(center=(64.0, 64.0))
        assert img[64, 64] == pytest.approx(0.45 + 4.0, abs=1e-12)
        assert img[0, 0] == 0.45
        assert img.min() == 0.45

    def test_occupancy_linearity(self):
        full, _ = make_single_column()
        half, _ = make_single_column(occupancy=0.5)
        assert np.max(np.abs((half - 0.45) * 2.0 - (full - 0.45))) < 1e-12

    def test_black_contrast_clipped_dip(self):
        img, _ = make_single_column(contrast="black", center=(64.0, 64.0))
        assert img[64, 64] == 0.0
        assert img.max() == 0.45
        assert img.min() == 0.0

    def test_intermediate_contrast_signs(self):
        particle, _ = make_single_column(contrast="intermediate",
                                         species="particle", center=(64.0, 64.0))
        support, _ = make_single_column(contrast="intermediate",
                                        species="support", center=(64.0, 64.0))
        assert particle[64, 64] == pytest.approx(0.45 + 4.0, abs=1e-12)
        assert support[64, 64] == 0.0  # 0.45 - 0.5*4.0 clipped at zero
        assert support.min() == 0.0

    def test_white_min_is_vacuum(self, np3_clean, small_geom):
        assert np3_clean.min() == small_geom.vacuum_level
        assert np3_clean.shape == (small_geom.height, small_geom.width)

    def test_nonnegative_everywhere(self, np3_clean):
        for contrast in ("black", "intermediate"):
            img, _ = make_single_column(contrast=contrast)
            assert img.min() >= 0.0
        assert np3_clean.min() >= 0.0

    def test_sigma_scales_with_view_scale(self):
        model = synth.StructureModel(
            [synth.AtomColumn((63.5, 63.5), "particle", 1.0, 8.0)],
            "white", 0.45, 4.0, "PtNp3", "D0", (0.0, 0.0))
        img = synth.render(model, synth.ImagingParams(width=128, height=128,
                                                      scale=0.5))
        ex = img[63, :] - 0.45
        t = np.arange(128) - 63.5
        var = float((t ** 2 * ex).sum() / ex.sum())
        assert var == pytest.approx((8.0 * 0.5) ** 2, abs=1e-3)

    def test_shear_widens_along_x(self):
        plain, _ = make_single_column(center=(63.5, 63.5))
        sheared, _ = make_single_column(center=(63.5, 63.5), shear=(0.1, 0.0))

        def var_along(img, axis):
            ex = (img - 0.45)[63, :] if axis == "x" else (img - 0.45)[:, 63]
            t = np.arange(128) - 63.5
            return float((t ** 2 * ex).sum() / ex.sum())

        stretch = 1.0 + 0.05 * math.degrees(math.atan(0.1))
        assert var_along(sheared, "x") / var_along(plain, "x") == pytest.approx(
            stretch ** 2, abs=1e-3)
        assert var_along(sheared, "y") / var_along(plain, "y") == pytest.approx(
            1.0, abs=1e-3)


class TestTransform:
    def test_identity_is_bitwise_copy(self, np3_clean):
        out = synth.transform(np3_clean, 0.0, 1.0)
        assert np.array_equal(out, np3_clean)

    def test_rot90_matches_index_rotation(self):
        img, _ = make_single_column(center=(40.0, 70.0))
        out = synth.transform(img, 90.0, 1.0)
        assert np.max(np.abs(out - np.rot90(img, -1))) < 1e-9

    def test_scale_range_enforced(self, np3_clean):
        for bad in (0.49, 2.01, 0.0, -1.0):
            with pytest.raises(ParameterError):
                synth.transform(np3_clean, 0.0, bad)
        synth.transform(np3_clean, 0.0, 0.5)
        synth.transform(np3_clean, 0.0, 2.0)

    def test_roundtrip_within_gradient_tolerance(self, np3_clean):
        base = np3_clean
        fwd = synth.transform(base, 17.0, 1.3)
        back = synth.transform(fwd, -17.0, 1.0 / 1.3)
        gy, gx = np.gradient(base)
        tol = 2.0 * np.hypot(gx, gy) + 0.1
        h, w = base.shape
        yy, xx = np.mgrid[0:h, 0:w]
        c = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
        th = math.radians(17.0)
        rot = np.array([[math.cos(th), -math.sin(th)],
                        [math.sin(th), math.cos(th)]])
        pts = np.stack([xx.ravel() - c[0], yy.ravel() - c[1]], axis=1)
        q = (pts @ rot.T) * 1.3 + c
        margin = 3.0
        stays = ((q[:, 0] >= margin) & (q[:, 0] <= w - 1 - margin)
                 & (q[:, 1] >= margin)
                 & (q[:, 1] <= h - 1 - margin)).reshape(h, w)
        assert stays.mean() > 0.4
        err = np.abs(back - base)
        assert np.all(err[stays] <= tol[stays])

    def test_transform_points_tracks_image_peak(self):
        img, model = make_single_column(center=(50.0, 58.0))
        moved = synth.transform(img, 30.0, 0.8)
        (px, py), = synth.transform_points([(50.0, 58.0)], 30.0, 0.8, 128, 128)
        iy, ix = np.unravel_index(np.argmax(moved), moved.shape)
        assert math.hypot(ix - px, iy - py) < 0.75

    def test_transform_points_shear_matches_builder(self):
        pts = synth.transform_points([(10.0, 20.0)], 0.0, 1.0, 128, 128,
                                     shear=(0.1, 0.0))
        c = (128 - 1) / 2.0
        expected_x = c + (10.0 - c) + 0.1 * (20.0 - c)
        assert pts[0][0] == pytest.approx(expected_x, abs=1e-12)
        assert pts[0][1] == pytest.approx(20.0, abs=1e-12)


class TestModelJson:
    def test_roundtrip(self, tmp_path):
        model = synth.build_structure("PtNp2", "Dh", "intermediate",
                                      shear=(0.1, -0.05))
        path = tmp_path / "model.json"
        synth.model_to_json(model, path)
        back = synth.model_from_json(path)
        assert back.contrast == model.contrast
        assert back.particle_class == model.particle_class
        assert back.defect_class == model.defect_class
        assert back.shear == model.shear
        assert back.vacuum_level == model.vacuum_level
        assert back.amplitude == model.amplitude
        assert len(back.columns) == len(model.columns)
        for a, b in zip(back.columns, model.columns):
            assert a.center == b.center
            assert a.species == b.species
            assert a.occupancy == b.occupancy
            assert a.sigma == b.sigma

    def test_to_json_returns_text_without_path(self):
        model = synth.build_structure("PtNp3", "D0", "white")
        doc = json.loads(synth.model_to_json(model))
        assert doc["particle_class"] == "PtNp3"
        assert len(doc["columns"]) == len(model.columns)
