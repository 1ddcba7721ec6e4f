import numpy as np
import pytest

from vicnet.errors import DataError, NumericError, ShapeError
from vicnet.soh import (FeatureRegressor, estimate_soh_direct, evaluate, fit_feature_regressor, span_bins)


def table(pa1, pa2):
    f = np.zeros((len(pa1), 4))
    f[:, 1], f[:, 2] = pa1, pa2
    return f


class TestRidge:
    def test_exact_linear(self):
        rng = np.random.default_rng(0)
        a, b = rng.uniform(5, 10, 50), rng.uniform(1, 3, 50)
        y = 0.3 + 0.04 * a + 0.05 * b
        reg = fit_feature_regressor(table(a, b), y, ridge=0.0)
        assert np.sqrt(np.mean((reg.predict(table(a, b)) - y) ** 2)) < 1e-10

    def test_infinite_ridge_gives_mean(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(5, 10, 40), rng.uniform(1, 3, 40)
        y = rng.uniform(0.8, 1.0, 40)
        reg = fit_feature_regressor(table(a, b), y, ridge=1e12)
        assert np.allclose(reg.predict(table(a, b)), y.mean(), atol=1e-9)

    def test_singular(self):
        a = np.linspace(1, 2, 10)
        with pytest.raises(NumericError):
            fit_feature_regressor(table(a, 2 * a), np.linspace(0.8, 1, 10), ridge=0.0)
        fit_feature_regressor(table(a, 2 * a), np.linspace(0.8, 1, 10), ridge=1e-3)

    def test_errors_and_clamp(self):
        with pytest.raises(DataError):
            fit_feature_regressor(table([1.0], [2.0]), [0.9])
        with pytest.raises(DataError):
            fit_feature_regressor(table([1.0, np.nan], [2.0, 1.0]), [0.9, 0.8])
        reg = fit_feature_regressor(table([1.0, 2.0, 3.0], [1.0, 1.5, 2.5]), [0.8, 0.9, 1.0])
        assert reg.predict(table([100.0], [100.0]))[0] == 1.0
        assert reg.predict(table([-100.0], [-100.0]))[0] == 0.0

    def test_serialization(self):
        reg = fit_feature_regressor(table([1.0, 2.0, 3.0], [1.0, 1.5, 2.5]), [0.8, 0.9, 1.0])
        back = FeatureRegressor.from_dict(reg.to_dict())
        x = table([1.5], [1.2])
        assert back.predict(x) == reg.predict(x)


class TestEvaluate:
    def test_values(self):
        r = evaluate([0.9, 0.8], [0.8, 0.8])
        assert np.isclose(r.rmse, np.sqrt(0.01 / 2))
        grid = np.linspace(0, 0.01, 1000)
        assert np.isclose(evaluate(grid, np.zeros(1000)).p997_abs_err, 0.00997, atol=1e-12)

    def test_groups(self):
        r = evaluate([1.0, 0.5, 0.5], [1.0, 0.5, 0.4], groups=["a", "a", "b"])
        assert r.by_range["a"]["rmse"] == 0.0 and np.isclose(r.by_range["b"]["rmse"], 0.1)

    def test_errors(self):
        with pytest.raises(ShapeError):
            evaluate([1.0], [1.0, 2.0])
        with pytest.raises(DataError):
            evaluate([], [])


def test_direct_clamp():
    out = np.array([1.2, 0.9, -0.1]).reshape(3, 1, 1)
    assert np.array_equal(estimate_soh_direct(out), [1.0, 0.9, 0.0])
    with pytest.raises(ShapeError):
        estimate_soh_direct(np.zeros((3, 2, 1)))


def test_span_bins():
    w = np.array([[0.1, 0.3], [0.13, 0.91], [0.3, 0.7]])
    assert list(span_bins(w)) == ["0.20-0.35", "0.65-0.79", "0.35-0.50"]
