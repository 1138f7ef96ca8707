import numpy as np
import pytest

h5py = pytest.importorskip("h5py")

from oceankg.data import LAND_SENTINEL, ingest_sst
from oceankg.ingest_hdf5 import main, read_grid


@pytest.fixture
def product(tmp_path):
    path = tmp_path / "sst.h5"
    raw = np.arange(3 * 2 * 4, dtype=np.int16).reshape(3, 2, 4) * 10 + 2000
    raw[:, 0, 1] = -32768              # land point, masked in every step
    raw[1, 1, 2] = -32768              # single gap
    with h5py.File(path, "w") as fh:
        fh["lat"] = np.array([-2.5, 2.5])
        fh["lon"] = np.array([2.5, 92.5, 182.5, 272.5])
        v = fh.create_dataset("sst", data=raw)
        v.attrs["_FillValue"] = np.int16(-32768)
        v.attrs["scale_factor"] = np.float32(0.01)
        v.attrs["add_offset"] = np.float32(0.0)
    return path, raw


def test_read_grid(product):
    path, raw = product
    values, coords = read_grid(path)
    assert values.shape == (8, 3)
    assert coords[:4] == [(-2.5, 2.5), (-2.5, 92.5), (-2.5, -177.5), (-2.5, -87.5)]
    assert np.allclose(values[0], raw[:, 0, 0] * 0.01)
    assert np.all(values[1] == LAND_SENTINEL) and values[6, 1] == LAND_SENTINEL


def test_stride_and_steps(product):
    path, _ = product
    values, coords = read_grid(path, stride=2, steps=2)
    assert values.shape == (2, 2) and coords == [(-2.5, 2.5), (-2.5, -177.5)]


def test_cli_roundtrip_through_ingest(product, tmp_path):
    path, raw = product
    out = tmp_path / "grid.txt"
    main([str(path), str(out)])
    data = ingest_sst(out, min_coverage=0.6)
    assert data.n_regions == 7 and "-2.5_92.5" not in data.region_ids
    i = data.region_ids.index("2.5_-177.5")
    assert np.allclose(data.values[i], [raw[0, 1, 2] * 0.01, (raw[0, 1, 2] + raw[2, 1, 2]) * 0.005, raw[2, 1, 2] * 0.01])
