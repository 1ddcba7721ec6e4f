"""Incremental-capacity and differential-voltage curves and their features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import make_smoothing_spline

from .errors import DataError, NumericError, RangeError, ShapeError
from .preprocess import ChargeDomainProfile

CURVE_SIGNALS = ("q", "v", "ic")


@dataclass
class CurveTriple:
    q: np.ndarray
    v: np.ndarray
    ic: np.ndarray
    soc_range: tuple[float, float] = (0.05, 0.56)

    def as_array(self) -> np.ndarray:
        return np.stack([self.q, self.v, self.ic])

    @classmethod
    def from_array(cls, arr: np.ndarray, soc_range=(0.05, 0.56)) -> "CurveTriple":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr[0].copy(), arr[1].copy(), arr[2].copy(), tuple(soc_range))

    @property
    def dv(self) -> np.ndarray:
        return dv_from_ic(self)


@dataclass
class IcFeatures:
    ic_ph: float
    ic_pa1: float
    ic_pa2: float
    peak_voltage: float

    def as_tuple(self):
        return (self.ic_ph, self.ic_pa1, self.ic_pa2, self.peak_voltage)


def output_grid(capacity_ah: float, soc_range, n: int) -> np.ndarray:
    """Evenly spaced absolute charge (from empty) over the output SOC range."""
    lo, hi = soc_range
    return np.linspace(lo * capacity_ah, hi * capacity_ah, n)


def _bin_average(x: np.ndarray, y: np.ndarray, width: float):
    edges = np.arange(x[0], x[-1] + width, width)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(edges) - 1)
    counts = np.bincount(idx)
    ok = counts > 0
    xs = np.bincount(idx, weights=x)[ok] / counts[ok]
    ys = np.bincount(idx, weights=y)[ok] / counts[ok]
    return xs, ys, counts[ok].astype(np.float64)


def fit_cc_spline(cc: ChargeDomainProfile, q_offset: float = 0.0, lam: float | None = None,
                  bin_ah: float | None = 0.2):
    """Cubic smoothing spline of V against absolute charge.

    Points are first averaged into ``bin_ah`` wide charge bins (weighted by
    count) which keeps the fit fast on 1 Hz data. ``lam=None`` selects the
    smoothing parameter by generalized cross-validation.
    """
    q = cc.dq + q_offset
    v = cc.voltage
    if bin_ah:
        q, v, w = _bin_average(q, v, bin_ah)
    else:
        w = np.ones_like(q)
    if len(q) < 5:
        raise DataError("too few points for a smoothing spline")
    return make_smoothing_spline(q, v, w=w, lam=lam)


def ic_from_cc(cc: ChargeDomainProfile, capacity_ah: float, soc_range=(0.05, 0.56), n_out: int = 128,
               q_offset: float = 0.0, lam: float | None = None, bin_ah: float | None = 0.2,
               cv_limit: float = 0.01) -> CurveTriple:
    """Reference IC curve from a constant-current charge.

    ``q_offset`` is the charge already stored when the CC run started, so the
    curve is reported on absolute charge ``capacity * soc``.
    """
    cur = cc.current
    if cur.std() > cv_limit * abs(cur.mean()):
        raise DataError("profile is not constant-current (coefficient of variation above limit)")
    grid = output_grid(capacity_ah, soc_range, n_out)
    q_lo, q_hi = q_offset + cc.dq[0], q_offset + cc.dq[-1]
    if grid[0] < q_lo - 1e-9 or grid[-1] > q_hi + 1e-9:
        raise RangeError(f"output range [{grid[0]:.3f}, {grid[-1]:.3f}] Ah lies outside the data "
                         f"[{q_lo:.3f}, {q_hi:.3f}] Ah")
    spline = fit_cc_spline(cc, q_offset, lam, bin_ah)
    v = spline(grid)
    dvdq = spline.derivative()(grid)
    if np.any(dvdq <= 0) or np.any(np.diff(v) < 0):
        raise DataError("smoothed voltage is not increasing over the output range")
    return CurveTriple(grid, v, 1.0 / dvdq, tuple(soc_range))


def dv_from_ic(curve) -> np.ndarray:
    ic = curve.ic if isinstance(curve, CurveTriple) else np.asarray(curve)
    if np.any(ic <= 0):
        raise NumericError("IC must be positive to take its reciprocal")
    return 1.0 / ic


def _integrate_linear(x, y, lo, hi):
    """Exact integral of the piecewise-linear interpolant of (x, y) over [lo, hi]."""
    if hi <= lo:
        return 0.0
    inner = (x > lo) & (x < hi)
    xs = np.concatenate([[lo], x[inner], [hi]])
    ys = np.concatenate([[np.interp(lo, x, y)], y[inner], [np.interp(hi, x, y)]])
    return float(np.trapezoid(ys, xs))


def _positive_part_integral(x, f):
    """Exact integral of max(f, 0) for piecewise-linear f sampled at x."""
    x0, x1, f0, f1 = x[:-1], x[1:], f[:-1], f[1:]
    h = x1 - x0
    both = (f0 >= 0) & (f1 >= 0)
    total = np.sum(0.5 * (f0 + f1) * h, where=both)
    cross = (f0 > 0) != (f1 > 0)
    cross &= ~both
    if np.any(cross):
        a, b, hh = f0[cross], f1[cross], h[cross]
        pos = np.maximum(a, b)
        total += np.sum(0.5 * pos * pos / (np.abs(a) + np.abs(b)) * hh)
    return float(total)


def extract_features(curve: CurveTriple, pa1_halfwidth: float = 0.05, pa2_cutoff: float = 0.0,
                     window: tuple[float, float] | None = None) -> IcFeatures:
    """Peak height, windowed partial area and above-cutoff area of an IC curve.

    The peak is the highest IC value whose voltage lies in ``window``; of
    separate equal maxima the lower-voltage one wins, and a plateau of equal
    values is located at its midpoint. Areas integrate the piecewise-linear curve in V.
    """
    v, ic = np.asarray(curve.v, dtype=np.float64), np.asarray(curve.ic, dtype=np.float64)
    if window is None:
        window = (v[0], v[-1])
    inside = (v >= window[0]) & (v <= window[1])
    if not inside.any():
        raise RangeError(f"peak search window {window} does not intersect the curve's voltage range")
    idx = np.flatnonzero(inside)
    ph = float(ic[idx].max())
    top = idx[ic[idx] == ph]
    first = top[np.argmin(v[top])]
    # a flat top of tied maxima counts as one peak located at its middle
    last = first
    while last + 1 < len(ic) and inside[last + 1] and ic[last + 1] == ph:
        last += 1
    peak_v = float(0.5 * (v[first] + v[last]))
    # predicted curves are not guaranteed monotone in V; integrate in sorted order
    order = np.argsort(v, kind="stable")
    vs, ics = v[order], ic[order]
    lo, hi = max(peak_v - pa1_halfwidth, vs[0]), min(peak_v + pa1_halfwidth, vs[-1])
    pa1 = _integrate_linear(vs, ics, lo, hi)
    pa2 = _positive_part_integral(vs, ics - pa2_cutoff)
    return IcFeatures(ph, max(pa1, 0.0), pa2, peak_v)


def curve_errors(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-sample mean over k of the squared norm of the stacked channel residual."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} differs from truth shape {truth.shape}")
    squeeze = pred.ndim == 2
    if squeeze:
        pred, truth = pred[None], truth[None]
    err = np.mean(np.sum((pred - truth) ** 2, axis=1), axis=1)
    return err[0] if squeeze else err


def curve_error(pred, truth) -> float:
    if isinstance(pred, CurveTriple):
        pred = pred.as_array()
    if isinstance(truth, CurveTriple):
        truth = truth.as_array()
    if np.asarray(pred).ndim != 2:
        raise ShapeError("curve_error takes one (3, N) curve; use curve_errors for batches")
    return float(curve_errors(pred, truth))


def select_smoothing(cc: ChargeDomainProfile, q_offset: float = 0.0, bin_ah: float | None = 0.2,
                     grid=None, folds: int = 5) -> float:
    """Smoothing parameter minimizing interleaved K-fold prediction error.

    Run once on a calibration charge; the result is reused for every curve
    of a dataset so that individual fits stay cheap.
    """
    q = cc.dq + q_offset
    v = cc.voltage
    if bin_ah:
        q, v, w = _bin_average(q, v, bin_ah)
    else:
        w = np.ones_like(q)
    if grid is None:
        grid = np.logspace(-6, 3, 28)
    idx = np.arange(len(q))
    best, best_lam = np.inf, float(grid[0])
    for lam in grid:
        sse = 0.0
        for f in range(folds):
            test = idx % folds == f
            # keep the end points in the training part so predictions interpolate
            test[0] = test[-1] = False
            s = make_smoothing_spline(q[~test], v[~test], w=w[~test], lam=lam)
            sse += float(np.sum(w[test] * (s(q[test]) - v[test]) ** 2))
        if sse < best:
            best, best_lam = sse, float(lam)
    return best_lam
