"""SOH from curve features (ridge regression) or directly from a regression head."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError, ShapeError
from .ica import CurveTriple, IcFeatures, extract_features

FEATURE_INDEX = {"ic_ph": 0, "ic_pa1": 1, "ic_pa2": 2, "peak_voltage": 3}
DEFAULT_FEATURES = ("ic_pa1", "ic_pa2")


@dataclass
class FeatureRegressor:
    features: tuple[str, ...]
    weights: np.ndarray
    intercept: float
    ridge: float
    mean: np.ndarray
    std: np.ndarray

    def predict(self, feats: np.ndarray) -> np.ndarray:
        """Clamped SOH for an (n, 4) feature table (columns as in FEATURE_INDEX)."""
        z = (select_features(feats, self.features) - self.mean) / self.std
        return np.clip(z @ self.weights + self.intercept, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"features": list(self.features), "weights": self.weights.tolist(), "intercept": self.intercept,
                "ridge": self.ridge, "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureRegressor":
        return cls(tuple(d["features"]), np.asarray(d["weights"], dtype=np.float64), float(d["intercept"]),
                   float(d["ridge"]), np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def select_features(feats: np.ndarray, names) -> np.ndarray:
    feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    return feats[:, [FEATURE_INDEX[n] for n in names]]


def fit_feature_regressor(feats: np.ndarray, soh: np.ndarray, ridge: float = 1e-3,
                          names=DEFAULT_FEATURES) -> FeatureRegressor:
    """Closed-form ridge on standardized features; the intercept is not penalized."""
    x = select_features(feats, names)
    y = np.asarray(soh, dtype=np.float64).ravel()
    if len(y) < 2 or len(x) != len(y):
        raise DataError("need at least two labeled samples with matching features")
    if not np.all(np.isfinite(x)):
        raise DataError("features must be finite")
    mean, std = x.mean(axis=0), x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    z = (x - mean) / std
    gram = z.T @ z + ridge * np.eye(z.shape[1])
    if ridge == 0 and np.linalg.matrix_rank(z) < z.shape[1]:
        raise NumericError("singular feature design; use a positive ridge strength")
    w = np.linalg.solve(gram, z.T @ (y - y.mean()))
    return FeatureRegressor(tuple(names), w, float(y.mean()), float(ridge), mean, std)


def features_of_curves(curves: np.ndarray, feature_cfg, soc_range=(0.05, 0.56)) -> np.ndarray:
    """(n, 4) IC features of destandardized (n, 3, N) curves."""
    out = np.empty((len(curves), 4))
    for i, c in enumerate(curves):
        f = extract_features(CurveTriple.from_array(c, soc_range), feature_cfg.pa1_halfwidth,
                             feature_cfg.pa2_cutoff, tuple(feature_cfg.window))
        out[i] = f.as_tuple()
    return out


def estimate_soh_via_curves(curves: np.ndarray, regressor: FeatureRegressor, feature_cfg,
                            soc_range=(0.05, 0.56)) -> np.ndarray:
    """Feature route: destandardized virtual curves -> features -> SOH."""
    curves = np.asarray(curves)
    single = curves.ndim == 2
    est = regressor.predict(features_of_curves(curves[None] if single else curves, feature_cfg, soc_range))
    return est[0] if single else est


def estimate_soh_direct(outputs: np.ndarray) -> np.ndarray:
    """Direct route: a regression head's (batch, 1, 1) output clamped to [0, 1]."""
    outputs = np.asarray(outputs, dtype=np.float64)
    if outputs.ndim != 3 or outputs.shape[1:] != (1, 1):
        raise ShapeError(f"expected (batch, 1, 1) head outputs, got {outputs.shape}")
    return np.clip(outputs[:, 0, 0], 0.0, 1.0)


@dataclass
class EvalReport:
    rmse: float
    p997_abs_err: float
    residuals: np.ndarray
    by_range: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "p997_abs_err": self.p997_abs_err, "n": int(len(self.residuals)),
                "by_range": self.by_range}


def evaluate(pred, labels, groups=None) -> EvalReport:
    """RMSE and 99.7th-percentile absolute error (linear interpolation)."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if len(pred) != len(labels):
        raise ShapeError(f"{len(pred)} predictions for {len(labels)} labels")
    if len(pred) == 0:
        raise DataError("nothing to evaluate")
    res = pred - labels
    rmse = float(np.sqrt(np.mean(res ** 2)))
    p997 = float(np.quantile(np.abs(res), 0.997, method="linear"))
    by = {}
    if groups is not None:
        groups = np.asarray(groups)
        for g in np.unique(groups):
            r = res[groups == g]
            by[str(g)] = {"n": int(len(r)), "rmse": float(np.sqrt(np.mean(r ** 2))),
                          "p997_abs_err": float(np.quantile(np.abs(r), 0.997, method="linear"))}
    return EvalReport(rmse, p997, res, by)


def span_bins(window: np.ndarray, edges=(0.2, 0.35, 0.5, 0.65, 0.79)) -> np.ndarray:
    """Label each sample by the SOC span of its input window."""
    span = window[:, 1] - window[:, 0]
    idx = np.clip(np.searchsorted(edges, span, side="right") - 1, 0, len(edges) - 2)
    return np.array([f"{edges[i]:.2f}-{edges[i + 1]:.2f}" for i in idx])


__all__ = ["FeatureRegressor", "fit_feature_regressor", "features_of_curves", "estimate_soh_via_curves",
           "estimate_soh_direct", "EvalReport", "evaluate", "IcFeatures", "span_bins"]
