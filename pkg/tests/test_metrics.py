import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.metrics import f1_score

from mird.metrics import FACTOR_KEYS, LATENT_KEYS, compute_metrics, probe_factors, ridge_r2, weighted_f1

values = arrays(np.float64, st.integers(2, 30), elements=st.floats(-3, 3))


class TestExamples:
    def test_perfect(self):
        y = np.array([-2.0, 0.5, 1.5, -0.1])
        r = compute_metrics(y, y)
        assert (r.mae, r.corr, r.acc, r.f1) == (0.0, 1.0, 100.0, 100.0)

    def test_anti_aligned(self):
        r = compute_metrics([1.0, -1.0], [-1.0, 1.0])
        assert (r.acc, r.corr, r.mae) == (0.0, -1.0, 2.0)

    def test_weighted_f1_hand_case(self):
        r = compute_metrics([1.0, 1.0, -1.0, -1.0], [1.0, -1.0, -1.0, -1.0])
        assert r.acc == 75.0
        # per class: F1(+) = 2/3 on support 1, F1(-) = 4/5 on support 3
        assert r.f1 == 100.0 * (0.25 * (2.0 / 3.0) + 0.75 * (4.0 / 5.0))
        sk = f1_score([1, 0, 0, 0], [1, 1, 0, 0], average="weighted")
        assert r.f1 == pytest.approx(100.0 * sk, rel=1e-15)

    def test_zero_labels_excluded_from_classification(self):
        r = compute_metrics([1.0, -1.0, 5.0], [1.0, -1.0, 0.0])
        assert r.acc == 100.0
        assert r.mae == pytest.approx(5.0 / 3.0)

    def test_constant_labels_flag_corr(self):
        r = compute_metrics([0.1, 0.2, 0.3], [1.0, 1.0, 1.0])
        assert np.isnan(r.corr) and "constant" in r.corr_error
        assert r.acc == 100.0 and r.mae == pytest.approx(0.8)
        assert "corr_error" in r.to_json()

    def test_json_keys(self):
        import json
        d = json.loads(compute_metrics([1.0, -1.0], [0.5, -0.5]).to_json())
        assert set(d) == {"acc", "f1", "mae", "corr"}

    @pytest.mark.parametrize("p, l", [([1.0], [1.0]), ([1.0, 2.0], [1.0])])
    def test_bad_lengths(self, p, l):
        with pytest.raises(ValueError):
            compute_metrics(p, l)


class TestSklearnOracle:
    def test_random_cases(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 40))
            t, p = rng.random(n) < rng.random(), rng.random(n) < rng.random()
            ours = weighted_f1(t, p)
            ref = f1_score(t, p, average="weighted", zero_division=0)
            assert ours == pytest.approx(ref, abs=1e-12)


class TestProperties:
    @settings(max_examples=100, deadline=None)
    @given(values, st.randoms(use_true_random=False))
    def test_joint_permutation_invariant(self, y, rnd):
        rng = np.random.default_rng(rnd.randint(0, 10 ** 6))
        p = y + rng.normal(size=y.size)
        perm = rng.permutation(y.size)
        a, b = compute_metrics(p, y), compute_metrics(p[perm], y[perm])
        np.testing.assert_allclose([a.acc, a.f1, a.mae, a.corr], [b.acc, b.f1, b.mae, b.corr],
                                   rtol=0, atol=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(values, st.randoms(use_true_random=False))
    def test_ranges_and_triangle(self, y, rnd):
        rng = np.random.default_rng(rnd.randint(0, 10 ** 6))
        p, q = y + rng.normal(size=y.size), y + rng.normal(size=y.size)
        r = compute_metrics(p, y)
        assert 0 <= r.mae
        assert np.isnan(r.acc) or 0 <= r.acc <= 100
        assert np.isnan(r.f1) or 0 <= r.f1 <= 100
        assert np.isnan(r.corr) or -1 <= r.corr <= 1
        assert r.mae <= compute_metrics(p, q).mae + compute_metrics(q, y).mae + 1e-12


class TestProbes:
    def test_identity_latent(self, rng):
        f = rng.normal(size=(400, 3))
        assert ridge_r2(f, f, ridge=1e-9) == pytest.approx(1.0, abs=1e-9)

    def test_noise_latent(self, rng):
        assert ridge_r2(rng.normal(size=(400, 8)), rng.normal(size=(400, 3))) < 0.1

    def test_too_few_samples(self, rng):
        with pytest.raises(ValueError, match="too few"):
            ridge_r2(rng.normal(size=(20, 16)), rng.normal(size=20))

    def test_report_shape(self, rng):
        lat = {k: rng.normal(size=(100, 4)) for k in LATENT_KEYS}
        fac = {k: rng.normal(size=(100, 2)) for k in FACTOR_KEYS}
        lat["s"] = fac["shared"] @ rng.normal(size=(2, 4))
        rep = probe_factors(lat, fac)
        assert rep.r2.shape == (4, 4)
        assert rep.get("s", "shared") > 0.95 and rep.get("v", "a") < 0.1
        assert len(rep.as_dict()) == 16

    def test_misaligned(self, rng):
        lat = {k: rng.normal(size=(100, 4)) for k in LATENT_KEYS}
        fac = {k: rng.normal(size=(90, 2)) for k in FACTOR_KEYS}
        with pytest.raises(ValueError, match="aligned"):
            probe_factors(lat, fac)
