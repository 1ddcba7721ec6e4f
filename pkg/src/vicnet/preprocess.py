"""From a raw charging event to the fixed-length standardized network input."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import DataError, WindowError

SIGNALS = ("current", "voltage", "q", "v", "ic")
# the dataset's lowest SOH; used to turn a SOC span bound into a charge bound
SOH_FLOOR = 0.8


@dataclass
class ChargingProfile:
    t: np.ndarray
    current: np.ndarray
    voltage: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.current = np.asarray(self.current, dtype=np.float64)
        self.voltage = np.asarray(self.voltage, dtype=np.float64)
        if not (self.t.ndim == self.current.ndim == self.voltage.ndim == 1):
            raise DataError("profile arrays must be one-dimensional")
        if not (len(self.t) == len(self.current) == len(self.voltage)):
            raise DataError("t, current and voltage must have equal lengths")
        if len(self.t) < 2:
            raise DataError("a profile needs at least two samples")

    def slice(self, start: int, stop: int) -> "ChargingProfile":
        return ChargingProfile(self.t[start:stop], self.current[start:stop], self.voltage[start:stop], dict(self.meta))


@dataclass
class ChargeDomainProfile:
    dq: np.ndarray
    current: np.ndarray
    voltage: np.ndarray

    @property
    def total(self) -> float:
        return float(self.dq[-1])


def coulomb_count(p: ChargingProfile) -> ChargeDomainProfile:
    """Re-index current and voltage by transferred charge (Ah, trapezoidal)."""
    dt = np.diff(p.t)
    if np.any(dt < 0) or not np.all(np.isfinite(p.t)):
        raise DataError("time stamps must be nondecreasing")
    if np.any(p.current <= 0) or not np.all(np.isfinite(p.current)):
        raise DataError("charging current must be positive at every sample")
    dq = cumulative_trapezoid(p.current, p.t, initial=0.0) / 3600.0
    # a repeated time stamp adds no charge; keep its last reading so dq stays strictly increasing
    keep = np.ones(len(p.t), dtype=bool)
    keep[:-1] = dt > 0
    if keep.sum() < 2:
        raise DataError("profile spans zero time")
    return ChargeDomainProfile(dq[keep], p.current[keep], p.voltage[keep])


def compute_increment(max_soc_span: float, c_fresh: float, n_nn: int) -> float:
    """Charge step between downsampled points so a full-span event fills n_nn slots."""
    if max_soc_span <= 0 or c_fresh <= 0 or n_nn <= 0:
        raise DataError("span, capacity and N_nn must be positive")
    return max_soc_span * c_fresh / n_nn


def n_points(total: float, delta_q: float) -> int:
    # tolerate round-off when the total is an exact multiple of the step
    return int(math.floor(total / delta_q * (1 + 1e-12) + 1e-12)) + 1


def downsample(q: ChargeDomainProfile, delta_q: float) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation at 0, dq, 2dq, ...; the residual charge below dq is dropped."""
    if q.total < delta_q:
        raise WindowError(f"profile holds {q.total:.4g} Ah, less than one increment of {delta_q:.4g} Ah")
    grid = np.arange(n_points(q.total, delta_q)) * delta_q
    grid[-1] = min(grid[-1], q.total)
    return np.interp(grid, q.dq, q.current), np.interp(grid, q.dq, q.voltage)


def pad_symmetric(x: np.ndarray, n_nn: int) -> np.ndarray:
    """Append mirrored copies ([..., c, c, b, a, a, b, ...]) up to length n_nn."""
    x = np.asarray(x)
    if len(x) < 1:
        raise WindowError("cannot pad an empty sequence")
    if len(x) > n_nn:
        raise WindowError(f"{len(x)} points do not fit into N_nn={n_nn}")
    return np.pad(x, (0, n_nn - len(x)), mode="symmetric")


@dataclass(frozen=True)
class NormStats:
    mean: dict
    std: dict

    def to_dict(self) -> dict:
        return {"mean": dict(self.mean), "std": dict(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(dict(d["mean"]), dict(d["std"]))


def fit_norm_stats(samples, signal: str = "") -> tuple[float, float]:
    """Pooled mean and population std over every point of every sample."""
    arrays = [np.asarray(s, dtype=np.float64).ravel() for s in samples]
    if len(arrays) < 2:
        raise DataError("need at least two training samples to fit normalization")
    pooled = np.concatenate(arrays)
    mu, sigma = float(pooled.mean()), float(pooled.std())
    if not sigma > 0:
        raise DataError(f"signal {signal or '?'} is constant over the training set")
    return mu, sigma


def standardize(x, mu: float, sigma: float):
    return (np.asarray(x) - mu) / sigma


def destandardize(x, mu: float, sigma: float):
    return np.asarray(x) * sigma + mu


def check_window(profile, soc_min_span: float, c_fresh: float, soh_floor: float = SOH_FLOOR) -> bool:
    """Charge-based stand-in for the minimum SOC span constraint (closed bound)."""
    if isinstance(profile, ChargingProfile):
        try:
            total = coulomb_count(profile).total
        except DataError:
            return False
    elif isinstance(profile, ChargeDomainProfile):
        total = profile.total
    else:
        total = float(profile)
    threshold = soc_min_span * c_fresh * soh_floor
    return total >= threshold * (1 - 1e-12)


@dataclass
class PreprocessedInput:
    x: np.ndarray
    n_point: int
    delta_q: float


def prepare_raw(profile: ChargingProfile, delta_q: float, n_nn: int) -> tuple[np.ndarray, int]:
    """Coulomb count, downsample and pad; returns the unstandardized (2, n_nn) array."""
    cd = coulomb_count(profile)
    i_ds, v_ds = downsample(cd, delta_q)
    n = len(i_ds)
    if n == n_nn + 1:
        # a window of exactly the maximum span yields one extra point
        i_ds, v_ds, n = i_ds[:n_nn], v_ds[:n_nn], n_nn
    return np.stack([pad_symmetric(i_ds, n_nn), pad_symmetric(v_ds, n_nn)]), n


def standardize_input(raw: np.ndarray, stats: NormStats) -> np.ndarray:
    out = np.empty_like(raw, dtype=np.float64)
    out[..., 0, :] = standardize(raw[..., 0, :], stats.mean["current"], stats.std["current"])
    out[..., 1, :] = standardize(raw[..., 1, :], stats.mean["voltage"], stats.std["voltage"])
    return out


def preprocess(profile: ChargingProfile, delta_q: float, n_nn: int, stats: NormStats) -> PreprocessedInput:
    raw, n = prepare_raw(profile, delta_q, n_nn)
    return PreprocessedInput(standardize_input(raw, stats), n, delta_q)
