import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import write_shape_pool
from semisr import metrics
from semisr.errors import DomainError, FormatError, ShapeError
from semisr.metrics import (
    GaussianStats,
    MosResult,
    RatingRecord,
    frechet_distance,
    gaussian_stats,
    mos,
    mos_table,
    sqrtm_product,
)


def random_psd(rng, d, jitter=0.1):
    w = rng.normal(size=(d, d))
    return w @ w.T + jitter * np.eye(d)


class TestGaussianStats:
    def test_hand_computed_two_points(self):
        st_ = gaussian_stats(np.array([[0.0, 0.0], [2.0, 2.0]]))
        np.testing.assert_allclose(st_.mean, [1.0, 1.0])
        np.testing.assert_allclose(st_.cov, [[2.0, 2.0], [2.0, 2.0]])  # divisor n-1

    def test_identical_rows_zero_cov(self):
        x = np.tile([1.5, -0.5, 3.0], (7, 1))
        st_ = gaussian_stats(x)
        np.testing.assert_allclose(st_.cov, 0.0, atol=1e-12)

    def test_row_permutation_invariant(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(20, 4))
        a = gaussian_stats(x)
        b = gaussian_stats(x[rng.permutation(20)])
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
        np.testing.assert_allclose(a.cov, b.cov, atol=1e-12)

    def test_insufficient_samples(self):
        with pytest.raises(DomainError):
            gaussian_stats(np.zeros((1, 3)))

    def test_asymmetric_cov_rejected(self):
        with pytest.raises(ShapeError):
            GaussianStats(mean=np.zeros(2), cov=np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestFrechetDistance:
    def scalar_stats(self, mu, var):
        return GaussianStats(mean=np.array([mu]), cov=np.array([[var]]))

    def test_identical_stats_exactly_zero(self):
        rng = np.random.default_rng(1)
        st_ = gaussian_stats(rng.normal(size=(40, 6)))
        assert frechet_distance(st_, st_) == 0.0

    def test_one_dim_mean_shift(self):
        # closed form: (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2
        assert abs(frechet_distance(self.scalar_stats(0, 1), self.scalar_stats(2, 1)) - 4.0) < 1e-9

    def test_one_dim_variance_gap(self):
        assert abs(frechet_distance(self.scalar_stats(0, 1), self.scalar_stats(0, 4)) - 1.0) < 1e-9

    @given(
        mu_a=st.floats(-5, 5), mu_b=st.floats(-5, 5),
        sd_a=st.floats(0.1, 3), sd_b=st.floats(0.1, 3),
    )
    @settings(max_examples=200, deadline=None)
    def test_one_dim_closed_form_property(self, mu_a, mu_b, sd_a, sd_b):
        a = self.scalar_stats(mu_a, sd_a**2)
        b = self.scalar_stats(mu_b, sd_b**2)
        expected = (mu_a - mu_b) ** 2 + (sd_a - sd_b) ** 2
        assert abs(frechet_distance(a, b) - expected) < 1e-9

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for d in (1, 3, 8):
            a = GaussianStats(rng.normal(size=d), random_psd(rng, d))
            b = GaussianStats(rng.normal(size=d), random_psd(rng, d))
            assert abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-9

    def test_nonnegative_on_random_pairs(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            d = int(rng.integers(1, 10))
            a = GaussianStats(rng.normal(size=d), random_psd(rng, d))
            b = GaussianStats(rng.normal(size=d), random_psd(rng, d))
            assert frechet_distance(a, b) >= 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            frechet_distance(self.scalar_stats(0, 1), GaussianStats(np.zeros(2), np.eye(2)))


class TestSqrtmProduct:
    @pytest.mark.parametrize("d", [1, 2, 5, 16])
    def test_square_reconstructs_product(self, d):
        rng = np.random.default_rng(d)
        for _ in range(5):
            a = random_psd(rng, d)
            b = random_psd(rng, d)
            x = sqrtm_product(a, b)
            err = np.linalg.norm(x @ x - a @ b) / np.linalg.norm(a @ b)
            assert err < 1e-6

    def test_agrees_with_scipy(self):
        import scipy.linalg

        rng = np.random.default_rng(9)
        a = random_psd(rng, 6)
        b = random_psd(rng, 6)
        ours = sqrtm_product(a, b)
        ref = np.real(scipy.linalg.sqrtm(a @ b))
        np.testing.assert_allclose(ours, ref, atol=1e-8)


class TestFid:
    def test_identical_directories_near_zero(self, tmp_path):
        write_shape_pool(tmp_path, n=64, size=32, seed=11)
        d = tmp_path / "hr"
        with pytest.warns(UserWarning, match="shrinkage"):
            value = metrics.fid(d, d, network="tiny")
        assert value <= 1e-6

    def test_disjoint_halves_shrink_with_n(self, tmp_path):
        # two halves of one homogeneous distribution: FID falls as n grows
        write_shape_pool(tmp_path / "a", n=256, size=32, seed=21)
        write_shape_pool(tmp_path / "b", n=256, size=32, seed=22)
        net = metrics.build_feature_network("tiny")
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            small = metrics.fid(tmp_path / "a" / "hr", tmp_path / "b" / "hr", network=net, n_max=64)
            large = metrics.fid(tmp_path / "a" / "hr", tmp_path / "b" / "hr", network=net, n_max=256)
        assert large < small

    def test_deterministic(self, tmp_path):
        write_shape_pool(tmp_path / "a", n=16, size=32, seed=31)
        write_shape_pool(tmp_path / "b", n=16, size=32, seed=32)
        net = metrics.build_feature_network("tiny")
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            v1 = metrics.fid(tmp_path / "a" / "hr", tmp_path / "b" / "hr", network=net)
            v2 = metrics.fid(tmp_path / "a" / "hr", tmp_path / "b" / "hr", network=net)
        assert v1 == v2

    def test_empty_directory_rejected(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(DomainError):
            metrics.fid(tmp_path / "empty", tmp_path / "empty")


class TestMos:
    def recs(self, scores, method="m1"):
        return [
            RatingRecord(rater_id=f"r{i}", image_id="img-0", method_id=method, score=s)
            for i, s in enumerate(scores)
        ]

    def test_mean_of_5_5_4(self):
        r = mos(self.recs([5, 5, 4]), "m1")
        assert round(r.mean, 3) == 4.667
        assert r.count == 3

    def test_constant_scores(self):
        r = mos(self.recs([3, 3, 3, 3]), "m1")
        assert r.mean == 3.0 and r.stddev == 0.0

    def test_order_invariant(self):
        a = mos(self.recs([1, 5, 3, 2]), "m1")
        b = mos(list(reversed(self.recs([1, 5, 3, 2]))), "m1")
        assert a == b

    def test_missing_method_rejected(self):
        with pytest.raises(DomainError):
            mos(self.recs([3]), "nope")

    def test_score_out_of_range_rejected(self):
        with pytest.raises(DomainError):
            RatingRecord(rater_id="r", image_id="i", method_id="m", score=6)
        with pytest.raises(DomainError):
            RatingRecord(rater_id="r", image_id="i", method_id="m", score=0)

    def test_table_sorted_by_mean(self):
        records = self.recs([5, 5], "good") + self.recs([1, 2], "bad")
        table = mos_table(records)
        assert [r.method_id for r in table] == ["good", "bad"]

    def test_load_ratings_duplicate_rejected(self, tmp_path):
        import json

        rec = {"rater_id": "r1", "image_id": "i1", "method_id": "m1", "score": 4}
        path = tmp_path / "r.jsonl"
        path.write_text(json.dumps(rec) + "\n" + json.dumps(rec) + "\n")
        with pytest.raises(FormatError, match="duplicate"):
            metrics.load_ratings(path)

    def test_load_ratings_roundtrip(self, tmp_path):
        import json

        recs = [
            {"rater_id": "r1", "image_id": "i1", "method_id": "m1", "score": 4, "presented_at": "t0"},
            {"rater_id": "r1", "image_id": "i2", "method_id": "m2", "score": 2, "presented_at": "t1"},
        ]
        path = tmp_path / "r.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in recs) + "\n")
        loaded = metrics.load_ratings(path)
        assert len(loaded) == 2
        assert loaded[0].score == 4 and loaded[1].method_id == "m2"
