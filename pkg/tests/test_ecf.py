import numpy as np
import pytest

from transmix.ecf import (EcfGrid, InsufficientDataError, Series, ecf_at,
                          ecf_grid, load_series_csv, save_series_csv)


class TestSeries:
    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            Series(np.array([1.0]))

    def test_non_finite(self):
        with pytest.raises(InsufficientDataError):
            Series(np.array([0.0, np.nan, 1.0]))

    def test_wrong_ndim(self):
        with pytest.raises(InsufficientDataError):
            Series(np.zeros((3, 2)))

    def test_n(self):
        assert Series(np.arange(5.0)).n == 5


class TestEcfAt:
    def test_origin_value(self):
        s = Series(np.arange(10.0))
        assert ecf_at(s, 0.0, 0.0) == pytest.approx(0.9 + 0j, abs=1e-15)

    def test_three_point_oracle(self):
        # y = (1, -1, 2), t = (1, 1): pairs give exp(i*0) + exp(i*1)
        s = Series(np.array([1.0, -1.0, 2.0]))
        expected = (1.0 + np.exp(1j)) / 3.0
        assert ecf_at(s, 1.0, 1.0) == pytest.approx(expected, abs=1e-15)

    def test_constant_series(self):
        s = Series(np.zeros(7))
        assert ecf_at(s, 3.0, -2.0) == pytest.approx(6.0 / 7.0, abs=1e-15)

    def test_modulus_bound(self):
        rng = np.random.default_rng(0)
        s = Series(rng.normal(size=50))
        for t1, t2 in rng.uniform(-10, 10, size=(30, 2)):
            v = ecf_at(s, t1, t2)
            assert abs(v) <= (s.n - 1) / s.n + 1e-12

    def test_conjugate_symmetry(self):
        rng = np.random.default_rng(1)
        s = Series(rng.normal(size=40))
        for t1, t2 in rng.uniform(-5, 5, size=(20, 2)):
            assert ecf_at(s, -t1, -t2) == pytest.approx(
                np.conj(ecf_at(s, t1, t2)), abs=1e-14)


class TestEcfGrid:
    def test_matches_pointwise(self):
        rng = np.random.default_rng(2)
        s = Series(rng.normal(size=60))
        nodes1 = np.linspace(-2, 2, 7)
        nodes2 = np.linspace(-1, 3, 5)
        g = ecf_grid(s, nodes1, nodes2)
        assert g.values.shape == (7, 5)
        for a in range(7):
            for b in range(5):
                assert g.values[a, b] == pytest.approx(
                    ecf_at(s, nodes1[a], nodes2[b]), abs=1e-12)

    def test_axis_caches(self):
        rng = np.random.default_rng(3)
        s = Series(rng.normal(size=30))
        nodes = np.linspace(-2, 2, 9)
        g = ecf_grid(s, nodes, nodes)
        for a, t in enumerate(nodes):
            first = np.sum(np.exp(1j * t * s.y[:-1])) / s.n
            second = np.sum(np.exp(1j * t * s.y[1:])) / s.n
            assert g.axis1[a] == pytest.approx(first, abs=1e-13)
            assert g.axis2[a] == pytest.approx(second, abs=1e-13)

    def test_empty_nodes_rejected(self):
        s = Series(np.arange(4.0))
        with pytest.raises(ValueError):
            ecf_grid(s, np.array([]), np.array([0.0]))

    def test_read_only(self):
        s = Series(np.arange(4.0))
        g = ecf_grid(s, np.array([0.0, 1.0]), np.array([0.0]))
        with pytest.raises(ValueError):
            g.values[0, 0] = 0.0


class TestCsvRoundTrip:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        s = Series(rng.normal(size=25))
        path = tmp_path / "series.csv"
        save_series_csv(path, s)
        back = load_series_csv(path)
        np.testing.assert_array_equal(back.y, s.y)

    def test_header_skip(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("y\n1.5\n-2.25\n0.0\n")
        s = load_series_csv(path, has_header=True)
        np.testing.assert_array_equal(s.y, [1.5, -2.25, 0.0])

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_series_csv(tmp_path / "nope.csv")

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0\nhello\n")
        with pytest.raises(ValueError):
            load_series_csv(path)
