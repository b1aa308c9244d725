import numpy as np
import pytest

from delgrad.data import (SPLIT_SIZES, EncodingConfig, Region, encode, from_csv, generate,
                          in_disc, make_splits, region, rescale_span, splits_from_csv,
                          splits_to_csv, to_csv)


class TestGeometry:
    @pytest.mark.parametrize("xy,label", [
        ((0.75, 0.5), Region.YIN),
        ((0.25, 0.5), Region.YANG),
        ((0.5, 0.1), Region.YIN),
        ((0.5, 0.9), Region.YANG),
        ((0.5, 0.25), Region.DOT),
        ((0.52, 0.74), Region.DOT),
    ])
    def test_known_points(self, xy, label):
        assert region(*xy) == label

    def test_point_symmetry_swaps_yin_and_yang(self):
        rng = np.random.default_rng(0)
        p = rng.random((5000, 2))
        p = p[in_disc(p[:, 0], p[:, 1])]
        a = region(p[:, 0], p[:, 1])
        b = region(1 - p[:, 0], 1 - p[:, 1])
        swap = np.array([Region.YANG, Region.YIN, Region.DOT])
        # points exactly on a boundary are measure zero for random draws
        np.testing.assert_array_equal(b, swap[a])

    def test_area_fractions(self):
        rng = np.random.default_rng(1)
        p = rng.random((400000, 2))
        p = p[in_disc(p[:, 0], p[:, 1])]
        frac = np.bincount(region(p[:, 0], p[:, 1]), minlength=3) / len(p)
        # two dots of radius R/4 cover 2/16 of the disc, the rest splits evenly
        np.testing.assert_allclose(frac, [7 / 16, 7 / 16, 1 / 8], atol=0.005)


class TestGenerate:
    def test_balanced_and_consistent(self):
        d = generate(0, 300)
        np.testing.assert_array_equal(np.bincount(d.labels), [100, 100, 100])
        np.testing.assert_array_equal(region(d.xy[:, 0], d.xy[:, 1]), d.labels)
        assert np.all(in_disc(d.xy[:, 0], d.xy[:, 1]))

    def test_deterministic(self):
        np.testing.assert_array_equal(generate(5, 50).xy, generate(5, 50).xy)
        assert not np.array_equal(generate(5, 50).xy, generate(6, 50).xy)

    def test_splits_are_disjoint_draws(self):
        s = make_splits(0, {"train": 60, "validation": 30, "test": 30})
        assert [len(v) for v in s.values()] == [60, 30, 30]
        assert not np.isin(s["train"].xy[:, 0], s["test"].xy[:, 0]).any()
        assert sum(SPLIT_SIZES.values()) == 7000

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            generate(0, 0)


class TestEncoding:
    def test_feature_order_and_range(self):
        cfg = EncodingConfig(0.15, 2.0)
        t = encode(np.array([0.0, 1.0]), cfg)
        np.testing.assert_allclose(t, [0.15, 2.0, 2.0, 0.15])
        t = encode(np.array([[0.25, 0.5]]), cfg)
        np.testing.assert_allclose(t, [[0.15 + 0.25 * 1.85, 0.15 + 0.5 * 1.85,
                                         0.15 + 0.75 * 1.85, 0.15 + 0.5 * 1.85]])

    def test_span(self):
        cfg = rescale_span(EncodingConfig(), 0.5)
        assert cfg.t_late == pytest.approx(0.65)
        with pytest.raises(ValueError):
            rescale_span(cfg, 0.0)
        with pytest.raises(ValueError):
            EncodingConfig(1.0, 0.5)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            encode(np.array([1.2, 0.5]))


class TestFiles:
    def test_csv_round_trip(self, tmp_path):
        d = generate(1, 30)
        to_csv(d, tmp_path / "a.csv", seed=1)
        back = from_csv(tmp_path / "a.csv")
        np.testing.assert_array_equal(back.xy, d.xy)
        np.testing.assert_array_equal(back.labels, d.labels)

    def test_split_file(self, tmp_path):
        s = make_splits(2, {"train": 12, "validation": 6, "test": 6})
        splits_to_csv(s, tmp_path / "s.csv", header="hello")
        text = (tmp_path / "s.csv").read_text()
        assert text.startswith("# hello\n")
        back = splits_from_csv(tmp_path / "s.csv")
        for k in s:
            np.testing.assert_array_equal(back[k].xy, s[k].xy)
