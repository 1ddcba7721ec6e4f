import numpy as np
import pytest

from vicnet.battery import (OCV_PRESETS, PROTOCOLS, ModuleModel, NoiseConfig, Protocol, TruncationSampler,
                            analytic_ic, get_protocol, quantize, sample_truncation, simulate_charge, window_rows)
from vicnet.errors import ConfigError, DataError, SimError
from vicnet.ica import extract_features
from vicnet.preprocess import coulomb_count


def triangle_cdf(a, b, free):
    """P(left margin <= a, right margin <= b) for a uniform point of the
    triangle {u, w >= 0, u + w <= free}; area bookkeeping by hand."""
    a, b = np.minimum(a, free), np.minimum(b, free)
    area = a * b - np.where(a + b > free, (a + b - free) ** 2 / 2, 0.0)
    return area / (free ** 2 / 2)


class TestModel:
    def test_ocv_monotone(self):
        for preset in OCV_PRESETS.values():
            for soh in (0.8, 0.9, 1.0):
                m = ModuleModel(soh=soh, ocv=preset)
                soc = np.linspace(0, 1, 5001)
                assert np.all(np.diff(m.ocv_value(soc)) > 0)
                assert np.all(m.ocv_slope(soc) > 0)

    def test_slope_is_derivative(self):
        m = ModuleModel(soh=0.87)
        soc = np.linspace(0.01, 0.99, 200)
        h = 1e-6
        num = (m.ocv_value(soc + h) - m.ocv_value(soc - h)) / (2 * h)
        assert np.allclose(num, m.ocv_slope(soc), rtol=1e-6)

    def test_capacity_and_resistance(self):
        m = ModuleModel(soh=0.9)
        assert m.capacity == pytest.approx(187.2)
        assert m.r_internal > ModuleModel().r_internal
        assert np.isclose(m.terminal_voltage(0.5, 100.0), m.ocv_value(0.5) + 100.0 * m.r_internal)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            ModuleModel(soh=1.2)


class TestProtocols:
    def test_refcc(self):
        assert PROTOCOLS["RefCC"].stages == ((0.4, 1.0),)
        for p in PROTOCOLS.values():
            until = [u for _, u in p.stages]
            assert all(b > a for a, b in zip(until, until[1:]))
        assert len(PROTOCOLS["FastA"].stages) == 4 and len(PROTOCOLS["FastB"].stages) == 6
        assert len(PROTOCOLS["FastC"].stages) == 2

    def test_validation(self):
        with pytest.raises(ConfigError):
            Protocol("x", ((1.0, 0.5), (0.5, 0.4)))
        with pytest.raises(ConfigError):
            Protocol("x", ((0.0, 1.0),))
        with pytest.raises(ConfigError):
            get_protocol("nope")
        p = Protocol("custom", ((0.5, 1.0),))
        assert get_protocol(p.to_dict()) == p


class TestSimulate:
    def test_cc_duration(self):
        sim = simulate_charge(ModuleModel(r0=0.0), "RefCC", 0.0, 1.0, quantized=False, v_max=10)
        assert sim.profile.t[-1] == pytest.approx(9000.0, abs=1.0)

    def test_zero_span(self):
        with pytest.raises(DataError):
            simulate_charge(ModuleModel(), "RefCC", 0.3, 0.3)

    def test_zero_resistance_is_ocv(self):
        m = ModuleModel(r0=0.0, soh=0.85)
        sim = simulate_charge(m, "FastA", 0.1, 0.9, quantized=False)
        assert np.array_equal(sim.profile.voltage, m.ocv_value(sim.soc))

    def test_charge_bookkeeping(self):
        for soh in (0.8, 0.93, 1.0):
            m = ModuleModel(soh=soh)
            for name in ("FastA", "FastB", "FastC"):
                sim = simulate_charge(m, name, 0.13, 0.91)
                q = coulomb_count(sim.profile).total
                expected = (sim.soc[-1] - sim.soc[0]) * m.capacity
                assert abs(q - expected) <= 1e-3 * expected
                assert abs(sim.soc[-1] - 0.91) < 0.01 and sim.soc[0] == pytest.approx(0.13)

    def test_stage_currents(self):
        m = ModuleModel()
        sim = simulate_charge(m, "FastC", 0.1, 0.9, quantized=False)
        i = sim.profile.current
        assert np.isclose(i[0], 1.1 * 208) and np.isclose(i[-1], 0.4 * 208)
        switch = np.argmax(i < 1.1 * 208)
        # the stage changes on the first step after SOC reaches the breakpoint
        assert sim.soc[switch - 2] < 0.6 <= sim.soc[switch - 1]

    def test_voltage_limit(self):
        with pytest.raises(SimError):
            simulate_charge(ModuleModel(r0=5e-3), "FastB", 0.1, 0.95, v_max=4.2)

    def test_noise_and_determinism(self):
        m = ModuleModel()
        a = simulate_charge(m, "FastA", 0.2, 0.5, noise=NoiseConfig(1e-3, 0.1), rng=np.random.default_rng(5))
        b = simulate_charge(m, "FastA", 0.2, 0.5, noise=NoiseConfig(1e-3, 0.1), rng=np.random.default_rng(5))
        c = simulate_charge(m, "FastA", 0.2, 0.5)
        assert np.array_equal(a.profile.voltage, b.profile.voltage)
        resid = a.profile.voltage - c.profile.voltage
        assert 0.7e-3 < resid.std() < 1.3e-3
        with pytest.raises(ConfigError):
            simulate_charge(m, "FastA", 0.2, 0.5, noise=NoiseConfig(1e-3, 0))

    def test_quantize_round_trip(self):
        x = quantize(np.random.default_rng(0).uniform(0, 5, 1000), 5)
        assert np.array_equal(np.array([float("%.5f" % v) for v in x]), x)


class TestAnalyticIc:
    def test_single_sigmoid_extremum(self):
        # a logistic OCV step gives a DV peak (IC minimum) at its center, symmetric in SOC
        ocv = OCV_PRESETS["default"].__class__(3.4, 0.3, ((0.2, 0.40, 0.04),))
        m = ModuleModel(ocv=ocv, r0=0.0)
        c = analytic_ic(m, (0.2, 0.6), 401)
        soc = c.q / m.capacity
        k = np.argmax(c.dv)
        assert abs(soc[k] - 0.40) <= 0.5 * (soc[1] - soc[0]) + 1e-12
        left, right = np.interp(0.35, soc, c.ic), np.interp(0.45, soc, c.ic)
        assert np.isclose(left, right, rtol=1e-9)

    def test_capacity_scaling(self):
        kw = dict(r_growth=0, v_shift=0, center_drift=0, width_growth=0)
        fresh = analytic_ic(ModuleModel(soh=1.0, **kw))
        aged = analytic_ic(ModuleModel(soh=0.85, **kw))
        assert np.allclose(aged.ic, 0.85 * fresh.ic)
        assert fresh.v[np.argmax(fresh.ic)] == aged.v[np.argmax(aged.ic)]

    def test_two_peaks(self):
        c = analytic_ic(ModuleModel())
        ic = c.ic
        peaks = [k for k in range(1, len(ic) - 1) if ic[k] > ic[k - 1] and ic[k] > ic[k + 1]]
        assert len(peaks) == 2
        assert c.v[peaks[1]] - c.v[peaks[0]] < 0.4

    def test_feature_monotonicity(self):
        fresh = analytic_ic(ModuleModel())
        k = np.argmax(fresh.ic)
        win = (fresh.v[k] - 0.1, fresh.v[k] + 0.1)
        cutoff = 0.6 * fresh.ic[k]
        grid = np.round(np.arange(0.80, 1.0001, 0.01), 2)
        feats = np.array([extract_features(analytic_ic(ModuleModel(soh=s)), 0.05, cutoff, win).as_tuple()
                          for s in grid])
        assert np.all(np.diff(feats[:, 1]) > 0) and np.all(np.diff(feats[:, 2]) > 0)


class TestTruncation:
    def test_constraints_and_ccdf(self):
        s = TruncationSampler()
        si, sf = s.sample(np.random.default_rng(0), 100_000)
        assert np.all(si >= 0.13) and np.all(sf <= 0.91) and np.all(sf - si >= 0.2 - 1e-12)
        x = np.linspace(0.2, 0.78, 300)
        emp = np.array([(sf - si >= v).mean() for v in x])
        closed = ((0.78 - x) / 0.58) ** 2
        assert np.max(np.abs(emp - closed)) <= 0.02

    def test_joint_uniformity(self):
        s = TruncationSampler()
        n = 100_000
        si, sf = s.sample(np.random.default_rng(1), n)
        u, w = si - 0.13, 0.91 - sf
        free = 0.58
        edges = np.linspace(0, free, 41)
        h, _, _ = np.histogram2d(u, w, bins=[edges, edges])
        emp = np.cumsum(np.cumsum(h, 0), 1) / n
        a, b = np.meshgrid(edges[1:], edges[1:], indexing="ij")
        d = np.max(np.abs(emp - triangle_cdf(a, b, free)))
        # one-sample KS critical value at alpha = 0.01
        assert d < 1.628 / np.sqrt(n)

    def test_degenerate(self):
        s = TruncationSampler(0.13, 0.91, 0.78)
        si, sf = s.sample(np.random.default_rng(0), 10)
        assert np.allclose(si, 0.13) and np.allclose(sf, 0.91)
        a, b = sample_truncation(s, np.random.default_rng(0))
        assert isinstance(a, float) and np.isclose(b, 0.91)

    def test_infeasible(self):
        with pytest.raises(ConfigError):
            TruncationSampler(0.5, 0.6, 0.3)

    def test_window_rows(self):
        soc = np.linspace(0.1, 0.9, 81)
        start, stop = window_rows(soc, 0.2, 0.4)
        assert np.isclose(soc[start], 0.2) and np.isclose(soc[stop - 1], 0.4)
        assert np.all((soc[start:stop] >= 0.2 - 1e-12) & (soc[start:stop] <= 0.4 + 1e-12))
