"""Synthetic labeled datasets: generation, on-disk layout, splits and normalization."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .battery import (OCV_PRESETS, ModuleModel, NoiseConfig, OcvParams, TruncationSampler, analytic_ic,
                      get_protocol, simulate_charge, window_rows)
from .errors import ConfigError, DataError
from .ica import CurveTriple, extract_features, ic_from_cc, select_smoothing
from .preprocess import (ChargingProfile, NormStats, coulomb_count, compute_increment, fit_norm_stats,
                         prepare_raw)


@dataclass
class DatasetConfig:
    n_modules: int = 12
    soh_grid: tuple[float, ...] = tuple(round(0.80 + 0.01 * k, 2) for k in range(21))
    protocols: tuple[str, ...] = ("FastA", "FastB", "FastC")
    n_truncate: int = 10
    seed: int = 0
    ocv: str = "default"
    c_fresh: float = 208.0
    n_nn: int = 128
    max_soc_span: float = 0.78
    soc_low: float = 0.13
    soc_high: float = 0.91
    min_span: float = 0.20
    out_soc_range: tuple[float, float] = (0.05, 0.56)
    ref_rate: float = 0.4
    ref_soc_end: float = 0.65
    dt: float = 1.0
    sigma_v: float = 1e-3
    sigma_i: float = 0.1
    jitter: float = 0.02
    r_jitter: float = 0.05
    v_max: float = 4.5
    lam: float | None = None
    pa1_halfwidth: float = 0.05
    pa2_cutoff_frac: float = 0.6
    peak_window_halfwidth: float = 0.1

    def __post_init__(self):
        self.soh_grid = tuple(float(s) for s in self.soh_grid)
        self.protocols = tuple(self.protocols)
        self.out_soc_range = tuple(float(s) for s in self.out_soc_range)
        if self.n_modules < 1 or self.n_truncate < 1:
            raise ConfigError("n_modules and n_truncate must be >= 1")
        if not self.soh_grid or min(self.soh_grid) < 0.8 - 1e-12 or max(self.soh_grid) > 1.0 + 1e-12:
            raise ConfigError("soh_grid must be nonempty and lie within [0.8, 1]")
        if self.ocv not in OCV_PRESETS:
            raise ConfigError(f"unknown ocv preset {self.ocv!r}; known: {sorted(OCV_PRESETS)}")
        for p in self.protocols:
            get_protocol(p)
        if self.ref_soc_end < self.out_soc_range[1]:
            raise ConfigError("ref_soc_end must cover the output SOC range")
        TruncationSampler(self.soc_low, self.soc_high, self.min_span)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("soh_grid", "protocols", "out_soc_range"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        names = set(cls.__dataclass_fields__)
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown dataset config fields: {sorted(unknown)}")
        return cls(**d)

    @property
    def delta_q(self) -> float:
        return compute_increment(self.max_soc_span, self.c_fresh, self.n_nn)

    def digest(self) -> str:
        return config_hash(self.to_dict())


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class FeatureConfig:
    pa1_halfwidth: float
    pa2_cutoff: float
    window: tuple[float, float]

    def to_dict(self):
        return {"pa1_halfwidth": self.pa1_halfwidth, "pa2_cutoff": self.pa2_cutoff, "window": list(self.window)}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["pa1_halfwidth"]), float(d["pa2_cutoff"]), tuple(d["window"]))


@dataclass
class Calibration:
    lam: float
    features: FeatureConfig

    def to_dict(self):
        return {"lam": self.lam, "features": self.features.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["lam"]), FeatureConfig.from_dict(d["features"]))


def nominal_model(cfg: DatasetConfig) -> ModuleModel:
    return ModuleModel(c_fresh=cfg.c_fresh, ocv=OCV_PRESETS[cfg.ocv])


def calibrate(cfg: DatasetConfig) -> Calibration:
    """Smoothing parameter and feature settings fixed once per dataset.

    The feature peak is the highest IC peak of the fresh nominal module; the
    above-cutoff line sits at ``pa2_cutoff_frac`` of its height.
    """
    model = nominal_model(cfg)
    if cfg.lam is None:
        sim = simulate_charge(model, "RefCC", 0.0, cfg.ref_soc_end, cfg.dt, NoiseConfig(cfg.sigma_v, cfg.sigma_i),
                              rngmod.stream(cfg.seed, "calibration"), cfg.v_max)
        lam = select_smoothing(coulomb_count(sim.profile))
    else:
        lam = float(cfg.lam)
    fresh = analytic_ic(model, cfg.out_soc_range, cfg.n_nn, cfg.ref_rate)
    k = int(np.argmax(fresh.ic))
    pv = float(fresh.v[k])
    w = cfg.peak_window_halfwidth
    feats = FeatureConfig(cfg.pa1_halfwidth, cfg.pa2_cutoff_frac * float(fresh.ic[k]), (pv - w, pv + w))
    return Calibration(lam, feats)


@dataclass
class Dataset:
    """Array form of a dataset.

    One *run* is a (module, soh, protocol) triple with its reference curve;
    each sample is one truncated window of a run's fast charge.
    """

    cfg: DatasetConfig
    calibration: Calibration
    x_raw: np.ndarray          # (S, 2, N) unstandardized padded current/voltage
    n_point: np.ndarray        # (S,)
    run: np.ndarray            # (S,) index into the run arrays
    window: np.ndarray         # (S, 2) true SOC at the first/last kept sample
    rows: np.ndarray           # (S, 2) half-open row range in the run's profile
    truth: np.ndarray          # (R, 3, N) reference q, v, ic
    run_module: np.ndarray     # (R,)
    run_soh: np.ndarray        # (R,)
    run_protocol: np.ndarray   # (R,) protocol names
    modules: list = field(default_factory=list)
    ids: np.ndarray | None = None  # (S,) sample ids as written to labels.jsonl

    @property
    def n_samples(self) -> int:
        return len(self.run)

    @property
    def soh(self) -> np.ndarray:
        return self.run_soh[self.run]

    @property
    def module(self) -> np.ndarray:
        return self.run_module[self.run]

    def truth_of(self, idx) -> np.ndarray:
        return self.truth[self.run[idx]]

    def select(self, mask) -> "Dataset":
        """Samples where ``mask`` holds; run arrays are shared."""
        mask = np.asarray(mask)
        return Dataset(self.cfg, self.calibration, self.x_raw[mask], self.n_point[mask], self.run[mask],
                       self.window[mask], self.rows[mask], self.truth, self.run_module, self.run_soh,
                       self.run_protocol, self.modules, None if self.ids is None else self.ids[mask])

    def truth_features(self, runs=None) -> np.ndarray:
        """(R, 4) features (ph, pa1, pa2, peak V) of the reference curves."""
        runs = np.arange(len(self.truth)) if runs is None else runs
        f = self.calibration.features
        out = np.empty((len(runs), 4))
        for j, r in enumerate(runs):
            c = CurveTriple.from_array(self.truth[r], self.cfg.out_soc_range)
            out[j] = extract_features(c, f.pa1_halfwidth, f.pa2_cutoff, f.window).as_tuple()
        return out


def run_key(module: int, soh: float, protocol: str) -> str:
    return f"m{module:03d}_s{int(round(soh * 100)):03d}_{protocol}"


def _simulate_run(cfg, cal, model, m, si, pi, protocol):
    noise = NoiseConfig(cfg.sigma_v, cfg.sigma_i)
    ref = simulate_charge(model, "RefCC", 0.0, cfg.ref_soc_end, cfg.dt, noise,
                          rngmod.stream(cfg.seed, "noise-ref", m, si, pi), cfg.v_max)
    truth = ic_from_cc(coulomb_count(ref.profile), model.capacity, cfg.out_soc_range, cfg.n_nn, 0.0, cal.lam)
    fast = simulate_charge(model, protocol, cfg.soc_low, cfg.soc_high, cfg.dt, noise,
                           rngmod.stream(cfg.seed, "noise-fast", m, si, pi), cfg.v_max)
    return truth, fast


def _truncate(cfg, fast, m, si, pi):
    sampler = TruncationSampler(cfg.soc_low, cfg.soc_high, cfg.min_span)
    s_i, s_f = sampler.sample(rngmod.stream(cfg.seed, "truncation", m, si, pi), cfg.n_truncate)
    out = []
    for a, b in zip(s_i, s_f):
        start, stop = window_rows(fast.soc, a, b)
        out.append((start, stop))
    return out


def _module_model(cfg, m) -> ModuleModel:
    return nominal_model(cfg).jittered(rngmod.stream(cfg.seed, "module", m), cfg.jitter, cfg.r_jitter)


def _assemble(cfg, cal, runs, samples, modules) -> Dataset:
    truth = np.stack([r[0] for r in runs])
    return Dataset(cfg, cal,
                   x_raw=np.stack([s[0] for s in samples]),
                   n_point=np.array([s[1] for s in samples], dtype=np.int64),
                   run=np.array([s[2] for s in samples], dtype=np.int64),
                   window=np.array([s[3] for s in samples], dtype=np.float64),
                   rows=np.array([s[4] for s in samples], dtype=np.int64),
                   truth=truth,
                   run_module=np.array([r[1] for r in runs], dtype=np.int64),
                   run_soh=np.array([r[2] for r in runs], dtype=np.float64),
                   run_protocol=np.array([r[3] for r in runs]),
                   modules=list(modules),
                   ids=np.array([s[5] for s in samples]))


def _write_csv(path: Path, header: str, cols, fmts):
    lines = [header]
    for row in zip(*cols):
        lines.append(",".join(f % v for f, v in zip(fmts, row)))
    path.write_text("\n".join(lines) + "\n")


PROFILE_FMT = ("%.3f", "%.3f", "%.5f")
TRUTH_FMT = ("%.17g", "%.17g", "%.17g")


def generate_dataset(cfg: DatasetConfig, out_dir=None, calibration: Calibration | None = None) -> Dataset:
    """Simulate every (module, soh, protocol) run and cut its truncated windows.

    With ``out_dir`` the raw runs, reference curves, labels and a manifest are
    written as they are produced.
    """
    cal = calibration or calibrate(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "profiles").mkdir(parents=True, exist_ok=True)
        (out / "truth").mkdir(parents=True, exist_ok=True)
        labels = open(out / "labels.jsonl", "w")
    runs, samples = [], []
    try:
        for m in range(cfg.n_modules):
            base = _module_model(cfg, m)
            for si, soh in enumerate(cfg.soh_grid):
                model = base.with_soh(soh)
                for pi, pname in enumerate(cfg.protocols):
                    truth, fast = _simulate_run(cfg, cal, model, m, si, pi, pname)
                    r = len(runs)
                    runs.append((truth.as_array(), m, soh, pname))
                    key = run_key(m, soh, pname)
                    if out is not None:
                        p = fast.profile
                        _write_csv(out / "profiles" / f"{key}.csv", "t_s,current_a,voltage_v",
                                   (p.t, p.current, p.voltage), PROFILE_FMT)
                        side = {"protocol": pname, "module": m, "soh": soh, "soc_initial": cfg.soc_low,
                                "soc_final": cfg.soc_high, "c_fresh": cfg.c_fresh,
                                "soc": [float(fast.soc[0]), float(fast.soc[-1])]}
                        (out / "profiles" / f"{key}.json").write_text(json.dumps(side, sort_keys=True) + "\n")
                        _write_csv(out / "truth" / f"{key}.csv", "q_ah,v_v,ic_ah_per_v",
                                   (truth.q, truth.v, truth.ic), TRUTH_FMT)
                    for j, (start, stop) in enumerate(_truncate(cfg, fast, m, si, pi)):
                        prof = fast.profile.slice(start, stop)
                        raw, n = prepare_raw(prof, cfg.delta_q, cfg.n_nn)
                        win = (float(fast.soc[start]), float(fast.soc[stop - 1]))
                        sid = f"{key}_t{j:02d}"
                        samples.append((raw, n, r, win, (start, stop), sid))
                        if out is not None:
                            rec = {"id": sid, "run": key, "module": m, "soh": soh,
                                   "protocol": pname, "rows": [start, stop], "soc_initial": win[0],
                                   "soc_final": win[1]}
                            labels.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if out is not None:
            labels.close()
    ds = _assemble(cfg, cal, runs, samples, range(cfg.n_modules))
    if out is not None:
        write_manifest(out, ds)
    return ds


def split_modules(modules, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> dict[str, list[int]]:
    """Random module-level partition; every module lands in exactly one split."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ConfigError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    modules = sorted(int(m) for m in modules)
    n = len(modules)
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"{n} modules are too few for nonempty train/validation/test splits")
    perm = rngmod.stream(seed, "split").permutation(n)
    order = [modules[i] for i in perm]
    return {"train": sorted(order[:n_train]), "val": sorted(order[n_train:n_train + n_val]),
            "test": sorted(order[n_train + n_val:])}


def split_dataset(ds: Dataset, fractions=(0.6, 0.2, 0.2), seed: int = 0, assignment=None):
    assignment = assignment or split_modules(ds.modules, fractions, seed)
    mod = ds.module
    return tuple(ds.select(np.isin(mod, assignment[k])) for k in ("train", "val", "test"))


def fit_dataset_norm(train: Dataset) -> NormStats:
    """Input stats over every padded point of the training windows; curve stats
    over the training reference curves (each run weighs the same in both)."""
    mean, std = {}, {}
    for ch, name in enumerate(("current", "voltage")):
        mean[name], std[name] = fit_norm_stats(list(train.x_raw[:, ch, :]), name)
    runs = np.unique(train.run)
    for ch, name in enumerate(("q", "v", "ic")):
        mean[name], std[name] = fit_norm_stats(list(train.truth[runs, ch, :]), name)
    return NormStats(mean, std)


def standardize_curves(curves: np.ndarray, stats: NormStats) -> np.ndarray:
    out = np.empty_like(curves, dtype=np.float64)
    for ch, name in enumerate(("q", "v", "ic")):
        out[..., ch, :] = (curves[..., ch, :] - stats.mean[name]) / stats.std[name]
    return out


def destandardize_curves(curves: np.ndarray, stats: NormStats) -> np.ndarray:
    out = np.empty_like(curves, dtype=np.float64)
    for ch, name in enumerate(("q", "v", "ic")):
        out[..., ch, :] = curves[..., ch, :] * stats.std[name] + stats.mean[name]
    return out


# ---------------------------------------------------------------------------
# directory I/O
# ---------------------------------------------------------------------------

def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, ds: Dataset, fractions=(0.6, 0.2, 0.2)) -> dict:
    split = split_modules(ds.modules, fractions, ds.cfg.seed) if len(ds.modules) >= 3 else None
    manifest = {"kind": "dataset", "seed": ds.cfg.seed, "dataset": ds.cfg.to_dict(), "config_hash": ds.cfg.digest(),
                "calibration": ds.calibration.to_dict(), "split": split, "fractions": list(fractions),
                "n_runs": int(len(ds.truth)), "n_samples": int(ds.n_samples),
                "labels_sha256": file_digest(out / "labels.jsonl")}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    try:
        return json.loads(p.read_text())
    except FileNotFoundError:
        raise DataError(f"no manifest at {p}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest {p}: {exc}") from None


def read_profile_csv(path) -> ChargingProfile:
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read profile {path}: {exc}") from None
    if arr.shape[1] != 3:
        raise DataError(f"{path}: expected columns t_s,current_a,voltage_v")
    meta = {}
    side = Path(path).with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text())
    return ChargingProfile(arr[:, 0], arr[:, 1], arr[:, 2], meta)


def read_curve_csv(path, soc_range=(0.05, 0.56)) -> CurveTriple:
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read curve {path}: {exc}") from None
    if arr.shape[1] != 3:
        raise DataError(f"{path}: expected columns q_ah,v_v,ic_ah_per_v")
    return CurveTriple(arr[:, 0], arr[:, 1], arr[:, 2], tuple(soc_range))


def write_curve_csv(path, curve: CurveTriple) -> None:
    _write_csv(Path(path), "q_ah,v_v,ic_ah_per_v", (curve.q, curve.v, curve.ic), TRUTH_FMT)


def load_dataset(path) -> Dataset:
    """Rebuild the array form from a dataset directory (re-running preprocessing)."""
    root = Path(path)
    manifest = read_manifest(root)
    if "dataset" not in manifest:
        raise DataError(f"{root}/manifest.json does not describe a dataset")
    cfg = DatasetConfig.from_dict(manifest["dataset"])
    cal = Calibration.from_dict(manifest["calibration"])
    try:
        lines = (root / "labels.jsonl").read_text().splitlines()
    except FileNotFoundError:
        raise DataError(f"{root} has no labels.jsonl") from None
    records = [json.loads(l) for l in lines if l.strip()]
    if not records:
        raise DataError(f"{root}/labels.jsonl is empty")
    runs, samples, run_index, profiles = [], [], {}, {}
    for rec in records:
        key = rec["run"]
        if key not in run_index:
            truth = read_curve_csv(root / "truth" / f"{key}.csv", cfg.out_soc_range)
            run_index[key] = len(runs)
            runs.append((truth.as_array(), rec["module"], rec["soh"], rec["protocol"]))
        if key not in profiles:
            profiles = {key: read_profile_csv(root / "profiles" / f"{key}.csv")}
        start, stop = rec["rows"]
        raw, n = prepare_raw(profiles[key].slice(start, stop), cfg.delta_q, cfg.n_nn)
        samples.append((raw, n, run_index[key], (rec["soc_initial"], rec["soc_final"]), (start, stop), rec["id"]))
    modules = sorted({r[1] for r in runs})
    return _assemble(cfg, cal, runs, samples, modules)
