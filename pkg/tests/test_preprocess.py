import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vicnet.errors import DataError, WindowError
from vicnet.preprocess import (ChargeDomainProfile, ChargingProfile, NormStats, check_window, compute_increment,
                               coulomb_count, destandardize, downsample, fit_norm_stats, pad_symmetric, prepare_raw,
                               preprocess, standardize, standardize_input)


def reflect_oracle(x, n):
    """Index-arithmetic mirror: position k reads x[k mod 2N] folded back."""
    m = len(x)
    out = []
    for k in range(n):
        j = k % (2 * m)
        out.append(x[j] if j < m else x[2 * m - 1 - j])
    return np.array(out)


def cc_profile(current, seconds, v0=3.5, slope=1e-4):
    t = np.arange(seconds + 1, dtype=float)
    return ChargingProfile(t, np.full_like(t, current), v0 + slope * t)


class TestCoulombCount:
    def test_constant(self):
        assert np.isclose(coulomb_count(cc_profile(86.0, 3600)).total, 86.0)

    def test_piecewise(self):
        t = np.arange(3601.0)
        i = np.where(t < 1800, 208.0, 104.0)
        i[1800] = 208.0  # step lands on a sample; trapezoid sees it as a ramp of one second
        q = coulomb_count(ChargingProfile(t, i, np.full_like(t, 3.7))).total
        assert np.isclose(q, 156.0, atol=0.1 / 3.6)
        t2 = np.concatenate([np.arange(1801.0), np.arange(1800.0, 3601.0)])
        i2 = np.concatenate([np.full(1801, 208.0), np.full(1801, 104.0)])
        assert np.isclose(coulomb_count(ChargingProfile(t2, i2, np.full_like(t2, 3.7))).total, 156.0)

    def test_two_samples(self):
        p = ChargingProfile([0.0, 10.0], [2.0, 4.0], [3.6, 3.7])
        assert np.isclose(coulomb_count(p).total, 0.5 * (2 + 4) * 10 / 3600)

    def test_errors(self):
        with pytest.raises(DataError):
            coulomb_count(ChargingProfile([0.0, 2.0, 1.0], [1, 1, 1], [3, 3, 3]))
        with pytest.raises(DataError):
            coulomb_count(ChargingProfile([0.0, 1.0], [1.0, 0.0], [3, 3]))
        with pytest.raises(DataError):
            ChargingProfile([0.0], [1.0], [3.0])
        with pytest.raises(DataError):
            ChargingProfile([0.0, 1.0], [1.0], [3.0, 3.1])

    def test_cc_reparameterization(self):
        p = cc_profile(100.0, 600)
        cd = coulomb_count(p)
        assert np.allclose(cd.current, 100.0)
        q_fine = np.linspace(0, cd.total, 5000)
        t_of_q = q_fine * 3600 / 100.0
        assert np.max(np.abs(np.interp(q_fine, cd.dq, cd.voltage) - (3.5 + 1e-4 * t_of_q))) <= 1e-6


class TestIncrement:
    def test_values(self):
        assert np.isclose(compute_increment(0.78, 208, 128), 1.2675)
        assert np.isclose(0.78 * 208, 162.24)
        assert compute_increment(1.0, 128, 128) == 1.0
        assert np.isclose(compute_increment(0.78, 208, 256), 1.2675 / 2)


class TestDownsample:
    def _cd(self, total, slope=0.01):
        q = np.linspace(0, total, 1001)
        return ChargeDomainProfile(q, np.full_like(q, 50.0), 3.4 + slope * q)

    def test_exact_divisibility(self):
        i, v = downsample(self._cd(10.0), 2.5)
        assert len(i) == 5 and np.allclose(v, 3.4 + 0.01 * np.array([0, 2.5, 5, 7.5, 10]))

    def test_residual_dropped(self):
        i, v = downsample(self._cd(11.0), 2.5)
        assert len(v) == 5 and np.isclose(v[-1], 3.4 + 0.01 * 10.0)

    def test_linear_exact(self):
        _, v = downsample(self._cd(9.3, slope=0.3), 0.7)
        assert np.allclose(v, 3.4 + 0.3 * 0.7 * np.arange(len(v)), atol=1e-12)

    def test_too_small(self):
        with pytest.raises(WindowError):
            downsample(self._cd(1.0), 2.5)


class TestPad:
    def test_paper_example(self):
        assert list(pad_symmetric(np.array(["a", "b", "c"]), 8)) == list("abccbaab")

    def test_identity_and_singleton(self):
        x = np.arange(5.0)
        assert np.array_equal(pad_symmetric(x, 5), x)
        assert np.array_equal(pad_symmetric(np.array([7.0]), 4), [7.0] * 4)

    def test_too_long(self):
        with pytest.raises(WindowError):
            pad_symmetric(np.arange(9.0), 8)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.integers(40, 200))
    @settings(max_examples=60, deadline=None)
    def test_matches_oracle(self, values, n):
        x = np.array(values)
        y = pad_symmetric(x, n)
        assert np.array_equal(y, reflect_oracle(x, n))
        assert np.array_equal(y[:len(x)], x)
        assert y.min() == x.min() and y.max() == x.max()


class TestNorm:
    def test_two_samples(self):
        assert fit_norm_stats([np.zeros(2), np.full(2, 2.0)]) == (1.0, 1.0)

    def test_constant(self):
        with pytest.raises(DataError):
            fit_norm_stats([np.ones(3), np.ones(3)])
        with pytest.raises(DataError):
            fit_norm_stats([np.arange(3.0)])

    def test_pool_standardized(self):
        rng = np.random.default_rng(0)
        samples = [rng.normal(5, 2, 30) for _ in range(7)]
        mu, sigma = fit_norm_stats(samples)
        z = standardize(np.concatenate(samples), mu, sigma)
        assert abs(z.mean()) < 1e-12 and abs(z.std() - 1) < 1e-12

    def test_formula(self):
        assert np.array_equal(standardize([1.0, 3.0], 2.0, 1.0), [-1.0, 1.0])
        assert standardize(4.0, 4.0, 2.0) == 0.0
        x = np.array([0.3, -2.0])
        assert np.array_equal(standardize(x, 0.0, 1.0), x)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.floats(-1e3, 1e3),
           st.floats(1e-3, 1e3))
    @settings(max_examples=100, deadline=None)
    def test_round_trip(self, values, mu, sigma):
        x = np.array(values)
        back = destandardize(standardize(x, mu, sigma), mu, sigma)
        assert np.all(np.abs(back - x) <= 1e-12 * np.maximum(1.0, np.abs(x)) + 1e-12 * abs(mu))

    def test_stats_serialization(self):
        s = NormStats({"current": 1.0, "voltage": 2.0}, {"current": 3.0, "voltage": 4.0})
        assert NormStats.from_dict(s.to_dict()) == s


class TestWindow:
    def test_threshold(self):
        assert np.isclose(0.2 * 208 * 0.8, 33.28)
        assert check_window(40.0, 0.2, 208)
        assert not check_window(0.0, 0.2, 208)
        assert check_window(0.2 * 208 * 0.8, 0.2, 208)
        assert not check_window(33.2, 0.2, 208)

    def test_profile_input(self):
        assert check_window(cc_profile(83.2, 1800), 0.2, 208)  # 41.6 Ah
        assert not check_window(cc_profile(83.2, 600), 0.2, 208)


class TestPrepare:
    def test_shape_and_prefix(self):
        p = cc_profile(83.2, 3000, slope=2e-5)
        raw, n = prepare_raw(p, 1.2675, 128)
        assert raw.shape == (2, 128)
        assert n == int(np.floor(83.2 * 3000 / 3600 / 1.2675)) + 1
        cd = coulomb_count(p)
        i_ds, v_ds = downsample(cd, 1.2675)
        assert np.array_equal(raw[0, :n], i_ds) and np.array_equal(raw[1, :n], v_ds)

    def test_full_span_trim(self):
        # exactly N_nn increments of charge produce N_nn + 1 points; the last one is dropped
        dq = 1.0
        t = np.linspace(0, 128 * 3600 / 100.0, 2000)
        p = ChargingProfile(t, np.full_like(t, 100.0), 3.5 + t * 1e-5)
        raw, n = prepare_raw(p, dq, 128)
        assert n == 128 and raw.shape == (2, 128)

    def test_standardized_round_trip(self):
        p = cc_profile(83.2, 3000, slope=2e-5)
        stats = NormStats({"current": 80.0, "voltage": 3.6}, {"current": 10.0, "voltage": 0.1})
        out = preprocess(p, 1.2675, 128, stats)
        raw, n = prepare_raw(p, 1.2675, 128)
        assert out.n_point == n and out.x.shape == (2, 128)
        back = np.stack([destandardize(out.x[0], 80.0, 10.0), destandardize(out.x[1], 3.6, 0.1)])
        assert np.allclose(back[:, :n], raw[:, :n], rtol=1e-12)
        batch = standardize_input(np.stack([raw, raw]), stats)
        assert np.array_equal(batch[0], out.x)
