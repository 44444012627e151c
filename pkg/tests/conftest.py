import numpy as np
import pytest

from cloudcast.geo import GeoFrame


@pytest.fixture
def paper_frame():
    """The GOES-West frame used throughout: -140..-124 E, 39..51 N, 0.02 deg."""
    return GeoFrame.from_origin(
        r=6371.0, lon_min=-140.0, lat_min=39.0, dlon=0.02, dlat=0.02, nx=801, ny=601
    )


@pytest.fixture
def small_frame():
    return GeoFrame.from_origin(
        r=6371.0, lon_min=-140.0, lat_min=39.0, dlon=0.02, dlat=0.02, nx=8, ny=6
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)
