import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepjdot.data import (
    MOONS_CENTER,
    Dataset,
    blob_centers,
    load_csv,
    load_idx,
    make_blobs_shift,
    make_moons_rotated,
    standardize,
    write_csv,
)
from deepjdot.errors import DataFormatError, InvalidInputError, ShapeError


def rot(deg):
    t = np.deg2rad(deg)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


class TestDataset:
    def test_needs_two_classes(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.zeros((2, 1)), np.array([0, 0]), "", 1)

    def test_label_length(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros((2, 1)), np.array([0, 1, 1]))

    def test_nonfinite(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.array([[np.nan]]))

    def test_label_range(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.zeros((2, 1)), np.array([0, 3]), "", 2)


class TestBlobs:
    def test_zero_shift_same_distribution(self):
        s, t = make_blobs_shift(2000, 3, seed=1)
        for c in range(3):
            np.testing.assert_allclose(s.features[s.labels == c].mean(0), t.features[t.labels == c].mean(0), atol=0.15)

    def test_sizes_balanced(self):
        s, t = make_blobs_shift(100, 3)
        assert s.n == t.n == 300
        np.testing.assert_array_equal(np.bincount(s.labels), 100)
        np.testing.assert_array_equal(np.bincount(t.labels), 100)

    def test_target_means_rotated_then_shifted(self):
        n, sd = 400, 0.8
        s, t = make_blobs_shift(n, 4, class_sep=3.0, shift_vector=(1.0, -2.0), rotation_deg=60, noise_sd=sd, seed=3)
        expected = blob_centers(4, 3.0) @ rot(60).T + np.array([1.0, -2.0])
        for c in range(4):
            # Each coordinate within 3 standard errors.
            assert np.all(np.abs(t.features[t.labels == c].mean(0) - expected[c]) <= 3 * sd / np.sqrt(n))

    def test_higher_dimension(self):
        s, _ = make_blobs_shift(5, 2, shift_vector=(0, 0, 0, 1))
        assert s.dim == 4

    @pytest.mark.parametrize("kwargs", [{"k": 1}, {"noise_sd": 0.0}, {"n_per_class": 0}, {"shift_vector": (1.0,)}])
    def test_invalid(self, kwargs):
        args = {"n_per_class": 5, "k": 2} | kwargs
        with pytest.raises(InvalidInputError):
            make_blobs_shift(**args)


class TestMoons:
    def test_zero_angle_same_distribution(self):
        s, t = make_moons_rotated(4000, 0.0, seed=2)
        for c in (0, 1):
            np.testing.assert_allclose(s.features[s.labels == c].mean(0), t.features[t.labels == c].mean(0), atol=0.05)

    def test_half_turn_reflects_arcs(self):
        n, noise = 4000, 0.1
        s, t = make_moons_rotated(n, 180.0, noise, seed=5)
        m_src = s.features[s.labels == 0].mean(0)
        m_tgt = t.features[t.labels == 0].mean(0)
        # The arc's mean sd is about 0.5 per coordinate; 3 standard errors of that.
        np.testing.assert_allclose(m_tgt, 2 * MOONS_CENTER - m_src, atol=3 * 0.75 / np.sqrt(n / 2) * 2)

    def test_shape_and_labels(self):
        s, t = make_moons_rotated(200, 40.0)
        assert s.n == t.n == 200 and s.dim == 2
        assert set(np.unique(s.labels)) == {0, 1}

    @pytest.mark.parametrize("kwargs", [{"n": 201}, {"n": 0}, {"noise_sd": -1.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidInputError):
            make_moons_rotated(**({"n": 200} | kwargs))

    def test_deterministic(self):
        a, b = make_moons_rotated(50, seed=7), make_moons_rotated(50, seed=7)
        np.testing.assert_array_equal(a[0].features, b[0].features)
        np.testing.assert_array_equal(a[1].features, b[1].features)


class TestCsv:
    def test_two_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("f0,f1,label\n1.5,2,0\n-3,4e-1,1\n")
        ds = load_csv(p)
        np.testing.assert_array_equal(ds.features, [[1.5, 2.0], [-3.0, 0.4]])
        np.testing.assert_array_equal(ds.labels, [0, 1])

    def test_label_column_anywhere(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("label,a,b\n1,1,2\n0,3,4\n")
        ds = load_csv(p)
        np.testing.assert_array_equal(ds.features, [[1, 2], [3, 4]])
        np.testing.assert_array_equal(ds.labels, [1, 0])

    def test_non_numeric_names_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("f0,label\n1,0\nabc,1\n")
        with pytest.raises(DataFormatError, match=":3:"):
            load_csv(p)

    def test_ragged_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("f0,label\n1,0,5\n")
        with pytest.raises(DataFormatError, match=":2:"):
            load_csv(p)

    def test_missing_label_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("f0,f1\n1,2\n")
        with pytest.raises(DataFormatError):
            load_csv(p)
        assert not load_csv(p, labeled=False).labeled

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "nope.csv")

    def test_round_trip_byte_identical(self, tmp_path, rng):
        ds = Dataset(rng.normal(size=(20, 3)), rng.integers(0, 3, size=20), "", 3)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(a, ds)
        write_csv(b, load_csv(a))
        assert a.read_bytes() == b.read_bytes()
        np.testing.assert_array_equal(load_csv(a).features, ds.features)


def write_idx(path, magic, dims, payload):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{len(dims)}I", *dims))
        fh.write(bytes(payload))


class TestIdx:
    def fixture(self, tmp_path):
        img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
        pixels = [255, 0, 0, 0, 255, 0, 0, 0, 255] + [0] * 8 + [51]
        write_idx(img, 2051, (2, 3, 3), pixels)
        write_idx(lab, 2049, (2,), [7, 1])
        return img, lab

    def test_loads_and_scales(self, tmp_path):
        ds = load_idx(*self.fixture(tmp_path))
        assert ds.features.shape == (2, 9)
        np.testing.assert_array_equal(ds.features[0], [1, 0, 0, 0, 1, 0, 0, 0, 1])
        assert ds.features[1, 8] == pytest.approx(0.2)
        np.testing.assert_array_equal(ds.labels, [7, 1])

    def test_bad_magic(self, tmp_path):
        img, lab = self.fixture(tmp_path)
        write_idx(img, 0, (2, 3, 3), [0] * 18)
        with pytest.raises(DataFormatError, match="magic"):
            load_idx(img, lab)

    def test_swapped_files(self, tmp_path):
        img, lab = self.fixture(tmp_path)
        with pytest.raises(DataFormatError):
            load_idx(lab, img)

    def test_truncated(self, tmp_path):
        img, lab = self.fixture(tmp_path)
        img.write_bytes(img.read_bytes()[:-1])
        with pytest.raises(DataFormatError, match="truncated"):
            load_idx(img, lab)
        img.write_bytes(b"\x00\x00")
        with pytest.raises(DataFormatError):
            load_idx(img, lab)

    def test_count_mismatch(self, tmp_path):
        img, lab = self.fixture(tmp_path)
        write_idx(lab, 2049, (3,), [0, 1, 2])
        with pytest.raises(DataFormatError, match="count"):
            load_idx(img, lab)


class TestStandardize:
    def test_constant_feature_floored(self):
        s = Dataset(np.array([[1.0, 5.0], [3.0, 5.0]]))
        s2, _, stats = standardize(s, s)
        assert stats.sd[1] == 1e-8
        np.testing.assert_array_equal(s2.features[:, 1], 0.0)

    def test_source_moments(self, rng):
        s = Dataset(rng.normal(3, 2, size=(100, 3)))
        s2, _, _ = standardize(s, Dataset(rng.normal(size=(5, 3))))
        np.testing.assert_allclose(s2.features.mean(0), 0, atol=1e-9)
        np.testing.assert_allclose(s2.features.std(0), 1, atol=1e-9)

    def test_target_uses_source_stats(self, rng):
        s = Dataset(rng.normal(size=(30, 2)))
        t = Dataset(rng.normal(5, 3, size=(10, 2)), np.arange(10) % 2, "target")
        _, t2, _ = standardize(s, t)
        mean = [sum(s.features[i, k] for i in range(30)) / 30 for k in range(2)]
        sd = [np.sqrt(sum((s.features[i, k] - mean[k]) ** 2 for i in range(30)) / 30) for k in range(2)]
        for i in range(10):
            for k in range(2):
                assert t2.features[i, k] == pytest.approx((t.features[i, k] - mean[k]) / sd[k], rel=1e-12)
        np.testing.assert_array_equal(t2.labels, t.labels)
        assert t2.domain_tag == "target"

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            standardize(Dataset(np.zeros((2, 2))), Dataset(np.zeros((2, 3))))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["moons", "blobs"]))
def test_property_generators_deterministic_and_valid(seed, name):
    gen = (lambda: make_moons_rotated(40, 30.0, seed=seed)) if name == "moons" else \
          (lambda: make_blobs_shift(10, 3, rotation_deg=45, seed=seed))
    (s1, t1), (s2, t2) = gen(), gen()
    np.testing.assert_array_equal(s1.features, s2.features)
    np.testing.assert_array_equal(t1.features, t2.features)
    for ds in (s1, t1):
        assert np.all(np.isfinite(ds.features)) and ds.labels.min() >= 0 and ds.labels.max() < ds.class_count
