import numpy as np
import numpy.testing as npt
import pytest

from lpvuq.data import (Dataset, NormRecord, apply_record, bfr, denormalize,
                        normalize, read_dataset, write_dataset)
from lpvuq.exceptions import DataFormatError, DimensionMismatchError


def _dataset(rng, n=100, n_u=2, n_y=2, with_w=False):
    u = rng.standard_normal((n, n_u)) * np.array([2.0, 0.5]) + 1.0
    y = rng.standard_normal((n, n_y)) * 3.0 - 2.0
    w = y + 0.01 * rng.standard_normal((n, n_y)) if with_w else None
    return Dataset(u, y, ts=0.05, w=w)


def test_dataset_validation():
    with pytest.raises(DimensionMismatchError):
        Dataset(np.zeros((5, 1)), np.zeros((4, 1)), ts=1.0)
    with pytest.raises(DimensionMismatchError):
        Dataset(np.zeros((5, 1)), np.zeros((5, 1)), ts=1.0, w=np.zeros((5, 2)))
    with pytest.raises(ValueError):
        Dataset(np.zeros((5, 1)), np.zeros((5, 1)), ts=0.0)
    ds = Dataset(np.zeros((3, 2)), np.zeros((3, 1)), ts=0.5)
    npt.assert_allclose(ds.t, [0.0, 0.5, 1.0])


def test_normalize_round_trip(rng):
    ds = _dataset(rng, with_w=True)
    norm, rec = normalize(ds)
    npt.assert_allclose(norm.u.mean(axis=0), 0.0, atol=1e-12)
    npt.assert_allclose(norm.u.std(axis=0), 1.0, rtol=1e-12)
    npt.assert_allclose(norm.y.mean(axis=0), 0.0, atol=1e-12)
    npt.assert_allclose(norm.y.std(axis=0), 1.0, rtol=1e-12)
    back = denormalize(norm)
    npt.assert_allclose(back.u, ds.u, rtol=1e-12, atol=1e-12)
    npt.assert_allclose(back.y, ds.y, rtol=1e-12, atol=1e-12)
    npt.assert_allclose(back.w, ds.w, rtol=1e-12, atol=1e-12)
    # records transfer: applying train statistics to other data
    other = _dataset(np.random.default_rng(5))
    moved = apply_record(other, rec)
    npt.assert_allclose(denormalize(moved).u, other.u, rtol=1e-12)


def test_normalize_rejects_constant_channel():
    ds = Dataset(np.ones((10, 1)), np.arange(10.0)[:, None], ts=1.0)
    with pytest.raises(ValueError):
        normalize(ds)


def test_norm_record_validation():
    with pytest.raises(ValueError):
        NormRecord([0.0], [0.0], [0.0], [1.0])
    rec = NormRecord([1.0], [2.0], [3.0], [4.0])
    back = NormRecord.from_dict(rec.to_dict())
    npt.assert_array_equal(back.u_mean, rec.u_mean)


def test_bfr_reference_values(rng):
    y = rng.standard_normal((50, 2))
    assert bfr(y, y) == 100.0
    # predicting the per-channel mean scores exactly zero
    npt.assert_allclose(bfr(y, np.tile(y.mean(axis=0), (50, 1))), 0.0, atol=1e-12)
    # hand value: y = [0,2], prediction [1,1]: num = 2, den = 2
    assert abs(bfr([[0.0], [2.0]], [[1.0], [1.0]]) - 0.0) < 1e-12
    # and a worse-than-mean prediction goes negative
    assert bfr(y, -5.0 * y) < 0.0
    with pytest.raises(ValueError):
        bfr(np.ones((5, 1)), np.zeros((5, 1)))
    with pytest.raises(ValueError):
        bfr(np.zeros((1, 1)), np.zeros((1, 1)))


def test_csv_round_trip(tmp_path, rng):
    ds = _dataset(rng, n=37, with_w=True)
    norm, rec = normalize(ds)
    path = tmp_path / "data.csv"
    write_dataset(norm, path, meta={"seed": 3})
    back, meta = read_dataset(path)
    npt.assert_array_equal(back.u, norm.u)  # %.17g round-trips exactly
    npt.assert_array_equal(back.y, norm.y)
    npt.assert_array_equal(back.w, norm.w)
    assert back.ts == 0.05
    assert meta["seed"] == 3
    npt.assert_array_equal(back.norm.u_mean, rec.u_mean)
    # identical rewrite is byte-identical
    blob = path.read_bytes()
    write_dataset(norm, path, meta={"seed": 3})
    assert path.read_bytes() == blob


def test_read_dataset_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x,u1,y1\n0,1,2\n")
    with pytest.raises(DataFormatError):
        read_dataset(p)
    p.write_text("t,u1,y1\n0,1\n")
    with pytest.raises(DataFormatError) as err:
        read_dataset(p)
    assert err.value.line_number == 2
    p.write_text("t,u1,y1\n0,1,abc\n")
    with pytest.raises(DataFormatError):
        read_dataset(p)
    p.write_text("t,u1,y1\n")
    with pytest.raises(DataFormatError):
        read_dataset(p)
    p.write_text("")
    with pytest.raises(DataFormatError):
        read_dataset(p)


def test_read_dataset_without_sidecar(tmp_path):
    p = tmp_path / "plain.csv"
    p.write_text("t,u1,y1\n0,1,2\n0.5,3,4\n")
    ds, meta = read_dataset(p)
    assert meta == {}
    assert ds.ts == 0.5
    assert ds.w is None
