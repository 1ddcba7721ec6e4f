"""Degradable equivalent-circuit module model, charging protocols and window sampling."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from . import _accel
from .errors import ConfigError, DataError, SimError
from .ica import CurveTriple, output_grid
from .preprocess import ChargingProfile


@dataclass(frozen=True)
class OcvParams:
    v0: float
    ramp: float
    # (amplitude V, center SOC, width SOC) of each logistic step
    steps: tuple[tuple[float, float, float], ...]

    def to_dict(self):
        return {"v0": self.v0, "ramp": self.ramp, "steps": [list(s) for s in self.steps]}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["v0"]), float(d["ramp"]), tuple(tuple(float(x) for x in s) for s in d["steps"]))


OCV_PRESETS = {
    "default": OcvParams(3.45, 0.55, ((0.12, 0.06, 0.03), (0.10, 0.33, 0.035), (0.15, 0.64, 0.05))),
    # a second chemistry-like curve for transfer experiments: shifted plateaus, steeper middle step
    "alt": OcvParams(3.38, 0.62, ((0.10, 0.10, 0.035), (0.13, 0.38, 0.03), (0.12, 0.70, 0.045))),
}


@dataclass(frozen=True)
class ModuleModel:
    c_fresh: float = 208.0
    soh: float = 1.0
    ocv: OcvParams = OCV_PRESETS["default"]
    r0: float = 0.8e-3
    r_growth: float = 2.5         # relative resistance increase per unit (1 - soh)
    v_shift: float = 0.05         # OCV offset, volts per unit (1 - soh)
    center_drift: float = 0.10    # middle-step center drift, SOC per unit (1 - soh)
    width_growth: float = 0.5     # middle-step relative width growth per unit (1 - soh)

    def __post_init__(self):
        if not 0.0 < self.soh <= 1.0:
            raise ConfigError(f"soh must lie in (0, 1], got {self.soh}")
        if self.c_fresh <= 0:
            raise ConfigError("c_fresh must be positive")

    @property
    def capacity(self) -> float:
        return self.soh * self.c_fresh

    @property
    def r_internal(self) -> float:
        return self.r0 * (1.0 + self.r_growth * (1.0 - self.soh))

    def _steps(self):
        fade = 1.0 - self.soh
        out = []
        for i, (a, c, w) in enumerate(self.ocv.steps):
            if i == 1:
                c = c + self.center_drift * fade
                w = w * (1.0 + self.width_growth * fade)
            out.append((a, c, w))
        return out

    def ocv_value(self, soc) -> np.ndarray:
        soc = np.asarray(soc, dtype=np.float64)
        v = self.ocv.v0 + self.ocv.ramp * soc + self.v_shift * (1.0 - self.soh)
        for a, c, w in self._steps():
            v = v + a * expit((soc - c) / w)
        return v

    def ocv_slope(self, soc) -> np.ndarray:
        """dOCV/dSOC in volts per unit SOC (always positive)."""
        soc = np.asarray(soc, dtype=np.float64)
        d = np.full_like(soc, self.ocv.ramp)
        for a, c, w in self._steps():
            e = expit((soc - c) / w)
            d = d + a / w * e * (1.0 - e)
        return d

    def terminal_voltage(self, soc, current) -> np.ndarray:
        return self.ocv_value(soc) + np.asarray(current) * self.r_internal

    def jittered(self, rng: np.random.Generator, amp: float = 0.02, r_amp: float = 0.05) -> "ModuleModel":
        """Cell-to-cell variation: OCV step amplitudes and resistance scaled by uniform factors."""
        steps = tuple((a * (1 + rng.uniform(-amp, amp)), c, w) for a, c, w in self.ocv.steps)
        return replace(self, ocv=replace(self.ocv, steps=steps), r0=self.r0 * (1 + rng.uniform(-r_amp, r_amp)))

    def with_soh(self, soh: float) -> "ModuleModel":
        return replace(self, soh=float(soh))


@dataclass(frozen=True)
class Protocol:
    name: str
    # (C-rate relative to c_fresh, until-SOC) per stage
    stages: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.stages:
            raise ConfigError(f"protocol {self.name} has no stages")
        until = [u for _, u in self.stages]
        if any(r <= 0 for r, _ in self.stages):
            raise ConfigError(f"protocol {self.name}: stage currents must be positive")
        if any(b <= a for a, b in zip(until, until[1:])):
            raise ConfigError(f"protocol {self.name}: until-SOC values must be strictly increasing")

    def to_dict(self):
        return {"name": self.name, "stages": [list(s) for s in self.stages]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], tuple((float(r), float(u)) for r, u in d["stages"]))


PROTOCOLS = {
    "FastA": Protocol("FastA", ((1.0, 0.35), (0.7, 0.55), (0.5, 0.75), (0.3, 1.0))),
    "FastB": Protocol("FastB", ((1.2, 0.25), (1.0, 0.40), (0.8, 0.55), (0.6, 0.70), (0.45, 0.82), (0.3, 1.0))),
    "FastC": Protocol("FastC", ((1.1, 0.60), (0.4, 1.0))),
    "RefCC": Protocol("RefCC", ((0.4, 1.0),)),
    # protocols for the second (transfer) dataset
    "FastD": Protocol("FastD", ((0.9, 0.45), (0.6, 0.70), (0.35, 1.0))),
    "FastE": Protocol("FastE", ((1.3, 0.20), (0.75, 0.50), (0.55, 0.80), (0.25, 1.0))),
    "FastF": Protocol("FastF", ((0.8, 0.65), (0.35, 1.0))),
}


def get_protocol(name_or_obj) -> Protocol:
    if isinstance(name_or_obj, Protocol):
        return name_or_obj
    if isinstance(name_or_obj, dict):
        return Protocol.from_dict(name_or_obj)
    try:
        return PROTOCOLS[name_or_obj]
    except KeyError:
        raise ConfigError(f"unknown protocol {name_or_obj!r}; known: {sorted(PROTOCOLS)}") from None


@dataclass(frozen=True)
class NoiseConfig:
    sigma_v: float = 0.0
    sigma_i: float = 0.0


@dataclass
class SimResult:
    profile: ChargingProfile
    soc: np.ndarray


def quantize(x: np.ndarray, decimals: int) -> np.ndarray:
    """Round to a fixed number of decimals so that text round-trips are exact."""
    scale = 10.0 ** decimals
    return np.rint(x * scale) / scale


def simulate_charge(model: ModuleModel, protocol, soc_start: float, soc_end: float, dt: float = 1.0,
                    noise: NoiseConfig = NoiseConfig(), rng: np.random.Generator | None = None,
                    v_max: float = 4.45, quantized: bool = True) -> SimResult:
    """Forward-Euler charge of ``model`` under ``protocol`` from soc_start to soc_end.

    Stage currents are C-rates of ``c_fresh``; SOC advances against the aged
    capacity. Sensor noise is added after the voltage limit check.
    """
    protocol = get_protocol(protocol)
    if not (0.0 <= soc_start < soc_end <= 1.0):
        raise DataError(f"need 0 <= soc_start < soc_end <= 1, got {soc_start}, {soc_end}")
    if dt <= 0:
        raise ConfigError("dt must be positive")
    until = np.array([u for _, u in protocol.stages], dtype=np.float64)
    amps = np.array([r * model.c_fresh for r, _ in protocol.stages], dtype=np.float64)
    t, soc, cur = _accel.charge_steps(float(soc_start), float(soc_end), until, amps, model.capacity, float(dt))
    v = model.terminal_voltage(soc, cur)
    if v.max() > v_max:
        k = int(np.argmax(v > v_max))
        raise SimError(f"{protocol.name}: terminal voltage {v[k]:.3f} V exceeds {v_max} V at SOC {soc[k]:.3f}")
    if noise.sigma_v > 0 or noise.sigma_i > 0:
        if rng is None:
            raise ConfigError("noise requested without an rng")
        v = v + noise.sigma_v * rng.standard_normal(len(v))
        cur = cur + noise.sigma_i * rng.standard_normal(len(cur))
    if quantized:
        t, cur, v = quantize(t, 3), quantize(cur, 3), quantize(v, 5)
    meta = {"protocol": protocol.name, "soc_initial": float(soc_start), "soc_final": float(soc_end)}
    return SimResult(ChargingProfile(t, cur, v, meta), soc)


def analytic_ic(model: ModuleModel, soc_range=(0.05, 0.56), n: int = 128, ref_rate: float = 0.4) -> CurveTriple:
    """Closed-form reference curve under CC at ``ref_rate`` (C-rate of c_fresh)."""
    cap = model.capacity
    q = output_grid(cap, soc_range, n)
    soc = q / cap
    v = model.terminal_voltage(soc, ref_rate * model.c_fresh)
    ic = cap / model.ocv_slope(soc)
    return CurveTriple(q, v, ic, tuple(soc_range))


@dataclass
class TruncationSampler:
    soc_low: float = 0.13
    soc_high: float = 0.91
    min_span: float = 0.20

    def __post_init__(self):
        if not (0.0 <= self.soc_low < self.soc_high <= 1.0):
            raise ConfigError("need 0 <= soc_low < soc_high <= 1")
        if not (0.0 <= self.min_span <= self.soc_high - self.soc_low + 1e-12):
            raise ConfigError("min_span must lie in [0, soc_high - soc_low]")

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Uniform (s_i, s_f) on the feasible triangle.

        A Dirichlet(1, 1, 1) split of the free span ``soc_high - soc_low -
        min_span`` gives (left margin, extra span, right margin).
        """
        free = max(self.soc_high - self.soc_low - self.min_span, 0.0)
        d = rng.dirichlet(np.ones(3), size=size)
        s_i = self.soc_low + free * d[..., 0]
        s_f = s_i + self.min_span + free * d[..., 1]
        s_f = np.minimum(s_f, self.soc_high)
        return s_i, s_f


def sample_truncation(sampler: TruncationSampler, rng: np.random.Generator) -> tuple[float, float]:
    s_i, s_f = sampler.sample(rng)
    return float(s_i), float(s_f)


def span_ccdf(x, sampler: TruncationSampler) -> np.ndarray:
    """P(s_f - s_i >= x) for the uniform triangle distribution."""
    total = sampler.soc_high - sampler.soc_low
    free = total - sampler.min_span
    x = np.asarray(x, dtype=np.float64)
    return np.clip((total - x) / free, 0.0, 1.0) ** 2 if free > 0 else (x <= total).astype(float)


def window_rows(soc: np.ndarray, s_i: float, s_f: float) -> tuple[int, int]:
    """Half-open sample range whose true SOC lies inside [s_i, s_f]."""
    start = int(np.searchsorted(soc, s_i, side="left"))
    stop = int(np.searchsorted(soc, s_f, side="right"))
    return start, stop
