import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudcast import codio
from cloudcast.codio import FlowField, ScalarGrid, UNITS_KMH, UNITS_PX
from cloudcast.errors import DimensionError, FormatError
from cloudcast.geo import GeoFrame


def _grid(values, frame, t=0):
    return ScalarGrid(values=np.asarray(values, dtype=float), timestamp=t, frame=frame)


def test_zero_grid_roundtrip_bit_exact(tmp_path, small_frame):
    frame = small_frame.with_shape(2, 2)
    grid = _grid(np.zeros((2, 2)), frame, t=42)
    path = tmp_path / "zero.codg"
    codio.write_grid(grid, path)
    first = path.read_bytes()
    back = codio.read_grid(path)
    codio.write_grid(back, tmp_path / "zero2.codg")
    assert (tmp_path / "zero2.codg").read_bytes() == first
    assert back.timestamp == 42
    assert np.array_equal(back.values, grid.values)


def test_nan_preserved(tmp_path, small_frame):
    vals = np.arange(48, dtype=float).reshape(6, 8)
    vals[2, 3] = np.nan
    grid = _grid(vals, small_frame)
    path = tmp_path / "nan.codg"
    codio.write_grid(grid, path)
    back = codio.read_grid(path)
    assert np.isnan(back.values[2, 3])
    assert np.array_equal(np.nan_to_num(back.values), np.nan_to_num(vals))


def test_header_payload_mismatch(tmp_path, small_frame):
    grid = _grid(np.ones((6, 8)), small_frame)
    path = tmp_path / "grid.codg"
    codio.write_grid(grid, path)
    raw = path.read_bytes()
    # Shrink the declared raster: payload is now longer than the header says.
    bad = raw.replace(b"nx 8\nny 6", b"nx 8\nny 5")
    bad_path = tmp_path / "bad.codg"
    bad_path.write_bytes(bad)
    with pytest.raises(DimensionError):
        codio.read_grid(bad_path)


def test_truncated_flow_is_ioerror(tmp_path, small_frame):
    flow = FlowField(
        u=np.ones((6, 8)), v=np.zeros((6, 8)), units=UNITS_PX,
        t_prev=0, t_cur=15, frame=small_frame,
    )
    path = tmp_path / "flow.codg"
    codio.write_flow(flow, path)
    raw = path.read_bytes()
    (tmp_path / "trunc.codg").write_bytes(raw[:-13])
    with pytest.raises(IOError):
        codio.read_flow(tmp_path / "trunc.codg")


def test_unknown_version_rejected(tmp_path, small_frame):
    grid = _grid(np.ones((6, 8)), small_frame)
    path = tmp_path / "grid.codg"
    codio.write_grid(grid, path)
    raw = path.read_bytes().replace(b"CODG 1", b"CODG 9")
    (tmp_path / "v9.codg").write_bytes(raw)
    with pytest.raises(FormatError):
        codio.read_grid(tmp_path / "v9.codg")
    (tmp_path / "junk.codg").write_bytes(b"PNG\x0a" + raw)
    with pytest.raises(FormatError):
        codio.read_grid(tmp_path / "junk.codg")


def test_flow_roundtrip_units_and_times(tmp_path, small_frame, rng):
    for units in (UNITS_PX, UNITS_KMH):
        flow = FlowField(
            u=rng.normal(size=(6, 8)), v=rng.normal(size=(6, 8)),
            units=units, t_prev=30, t_cur=45, frame=small_frame,
        )
        path = tmp_path / f"{units}.codg"
        codio.write_flow(flow, path)
        back = codio.read_flow(path)
        assert back.units == units
        assert (back.t_prev, back.t_cur) == (30, 45)
        assert np.array_equal(back.u, flow.u)
        assert np.array_equal(back.v, flow.v)
        assert back.frame == small_frame


finite_or_nan = st.one_of(
    st.floats(min_value=0, max_value=1e12, allow_nan=False),
    st.just(float("nan")),
)


@settings(max_examples=25, deadline=None)
@given(
    nx=st.integers(min_value=1, max_value=7),
    ny=st.integers(min_value=1, max_value=7),
    data=st.data(),
)
def test_grid_roundtrip_property(tmp_path_factory, nx, ny, data):
    vals = np.array(
        data.draw(
            st.lists(finite_or_nan, min_size=nx * ny, max_size=nx * ny)
        )
    ).reshape(ny, nx)
    frame = GeoFrame.from_origin(6371.0, 0.0, 0.0, 0.02, 0.02, nx, ny)
    grid = ScalarGrid(values=vals, timestamp=7, frame=frame)
    path = tmp_path_factory.mktemp("codg") / "g.codg"
    codio.write_grid(grid, path)
    back = codio.read_grid(path)
    # Bit-exact: compare the raw payload bytes.
    assert back.values.tobytes() == vals.astype("<f8").tobytes()


def test_csv_import(tmp_path):
    path = tmp_path / "fixture.csv"
    path.write_text("3,2\n1,2,3\n4,5,6\n")
    grid = codio.import_csv(path)
    assert grid.values.shape == (2, 3)
    assert grid.values[1, 2] == 6.0
    with pytest.raises(DimensionError):
        (tmp_path / "short.csv").write_text("3,2\n1,2,3\n")
        codio.import_csv(tmp_path / "short.csv")
