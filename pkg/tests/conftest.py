import numpy as np
import pytest

from sbd import synth


@pytest.fixture(scope="session")
def small_geom():
    return synth.GeometryConfig().scaled(0.25)


@pytest.fixture(scope="session")
def np3_model(small_geom):
    return synth.build_structure("PtNp3", "D0", "white", small_geom)


@pytest.fixture(scope="session")
def np3_clean(np3_model, small_geom):
    params = synth.ImagingParams(width=small_geom.width, height=small_geom.height)
    return synth.render(np3_model, params)


def make_single_column(center=(64.0, 64.0), sigma=9.0, amplitude=4.0,
                       vacuum=0.45, size=128, contrast="white", occupancy=1.0,
                       species="particle", shear=(0.0, 0.0)):
    """One isolated Gaussian column on a constant background."""
    model = synth.StructureModel(
        columns=[synth.AtomColumn(center, species, occupancy, sigma)],
        contrast=contrast, vacuum_level=vacuum, amplitude=amplitude,
        particle_class="PtNp3", defect_class="D0", shear=shear)
    params = synth.ImagingParams(width=size, height=size)
    return synth.render(model, params), model


@pytest.fixture(scope="session")
def single_column_image():
    img, _ = make_single_column()
    return img
