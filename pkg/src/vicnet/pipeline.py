"""End-to-end steps shared by the command line and the test suites."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .battery import window_rows
from .dataset import (Dataset, DatasetConfig, _module_model, _simulate_run, destandardize_curves,
                      fit_dataset_norm, split_dataset, standardize_curves)
from .errors import ConfigError, DataError, TransferError
from .ica import curve_errors
from .models import (CURVE_ARCHS, SOH_ARCHS, SOURCE_ARCH, ModelSpec, UNetPlan, apply_selection, build_curve_model,
                     preset_selection, transfer_head)
from .nn.checkpoint import Checkpoint
from .nn.train import TrainConfig, TrainResult, predict, train
from .preprocess import NormStats, prepare_raw, standardize_input
from .soh import (FeatureRegressor, estimate_soh_direct, estimate_soh_via_curves, features_of_curves,
                  fit_feature_regressor)

RANGES = {"wide": (0.15, 0.90), "medium": (0.40, 0.80), "narrow": (0.55, 0.80)}


@dataclass
class Prepared:
    train: Dataset
    val: Dataset
    test: Dataset
    stats: NormStats

    def inputs(self, part: str) -> np.ndarray:
        return standardize_input(getattr(self, part).x_raw, self.stats).astype(np.float32)

    def curve_targets(self, part: str) -> np.ndarray:
        d = getattr(self, part)
        return standardize_curves(d.truth[d.run], self.stats).astype(np.float32)

    def soh_targets(self, part: str) -> np.ndarray:
        return getattr(self, part).soh.reshape(-1, 1, 1).astype(np.float32)


def prepare(ds: Dataset, fractions=(0.6, 0.2, 0.2), seed: int | None = None, assignment=None,
            stats: NormStats | None = None) -> Prepared:
    """Module-level split; normalization is fitted on the training part only
    unless ``stats`` is given (e.g. reused from a source checkpoint)."""
    seed = ds.cfg.seed if seed is None else seed
    tr, va, te = split_dataset(ds, fractions, seed, assignment)
    return Prepared(tr, va, te, stats or fit_dataset_norm(tr))


def spec_of(ckpt: Checkpoint) -> ModelSpec:
    return ModelSpec(ckpt.arch, int(ckpt.graph.input_shape[1]), ckpt.graph, ckpt.meta.get("plan", {}))


def norm_of(ckpt: Checkpoint) -> NormStats:
    return NormStats.from_dict(ckpt.norm["stats"])


def _norm_block(stats: NormStats, cfg: DatasetConfig) -> dict:
    return {"stats": stats.to_dict(), "delta_q": cfg.delta_q, "n_nn": cfg.n_nn,
            "out_soc_range": list(cfg.out_soc_range), "c_fresh": cfg.c_fresh}


def _history(res: TrainResult) -> dict:
    return {"train_loss": res.train_loss, "val_loss": res.val_loss, "best_epoch": res.best_epoch,
            "epochs_run": res.epochs_run}


def train_curve_model(prep: Prepared, arch: str = "unet", tcfg: TrainConfig | None = None,
                      plan: UNetPlan | None = None, seed: int = 0) -> tuple[Checkpoint, TrainResult]:
    if arch not in CURVE_ARCHS:
        raise ConfigError(f"{arch!r} is not a curve architecture (choose from {CURVE_ARCHS})")
    tcfg = tcfg or TrainConfig(seed=seed)
    cfg = prep.train.cfg
    spec = build_curve_model(arch, cfg.n_nn, plan)
    params = spec.graph.init_params(rngmod.stream(seed, "init"))
    res = train(spec.graph, params, (prep.inputs("train"), prep.curve_targets("train")),
                (prep.inputs("val"), prep.curve_targets("val")), tcfg)
    meta = {"plan": spec.plan, "seed": seed, "train": tcfg.to_dict(), "history": _history(res),
            "dataset": cfg.digest(), "calibration": prep.train.calibration.to_dict()}
    return Checkpoint(arch, spec.graph, res.params, _norm_block(prep.stats, cfg), meta), res


def train_soh_model(prep: Prepared, source: Checkpoint, tcfg: TrainConfig | None = None,
                    seed: int = 0) -> tuple[Checkpoint, TrainResult]:
    """Regression head on the frozen contraction path of a curve checkpoint."""
    arch = {v: k for k, v in SOURCE_ARCH.items()}.get(source.arch)
    if arch is None:
        raise TransferError(f"cannot build an SOH head on a {source.arch} checkpoint")
    tcfg = tcfg or TrainConfig(seed=seed)
    spec, params, tp = transfer_head(spec_of(source), source.params, arch, rng=rngmod.stream(seed, "head-init"))
    res = train(spec.graph, params, (prep.inputs("train"), prep.soh_targets("train")),
                (prep.inputs("val"), prep.soh_targets("val")), tcfg)
    meta = {"plan": spec.plan, "seed": seed, "train": tcfg.to_dict(), "history": _history(res),
            "transfer": tp.to_dict(), "dataset": prep.train.cfg.digest(),
            "calibration": prep.train.calibration.to_dict()}
    return Checkpoint(arch, spec.graph, res.params, dict(source.norm), meta), res


def construct(ckpt: Checkpoint, x_raw: np.ndarray) -> np.ndarray:
    """Destandardized curves (n, 3, N) from unstandardized padded inputs."""
    if ckpt.arch not in CURVE_ARCHS:
        raise ConfigError(f"{ckpt.arch} checkpoints do not construct curves")
    stats = norm_of(ckpt)
    out = predict(ckpt.graph, ckpt.params, standardize_input(x_raw, stats).astype(np.float32))
    return destandardize_curves(out, stats)


def construct_standardized(ckpt: Checkpoint, x_raw: np.ndarray) -> np.ndarray:
    stats = norm_of(ckpt)
    return predict(ckpt.graph, ckpt.params, standardize_input(x_raw, stats).astype(np.float32)).astype(np.float64)


def direct_soh(ckpt: Checkpoint, x_raw: np.ndarray) -> np.ndarray:
    if ckpt.arch not in SOH_ARCHS:
        raise ConfigError(f"{ckpt.arch} checkpoints do not estimate SOH directly")
    stats = norm_of(ckpt)
    return estimate_soh_direct(predict(ckpt.graph, ckpt.params, standardize_input(x_raw, stats).astype(np.float32)))


def sample_curve_errors(ckpt: Checkpoint, part: Dataset) -> np.ndarray:
    """Per-sample curve error in the checkpoint's standardized units."""
    stats = norm_of(ckpt)
    pred = construct_standardized(ckpt, part.x_raw)
    return curve_errors(pred, standardize_curves(part.truth[part.run], stats))


def fit_regressor(ckpt: Checkpoint, prep: Prepared, source: str = "virtual", ridge: float = 1e-3) -> FeatureRegressor:
    """Ridge map from IC partial areas to SOH.

    ``source="virtual"`` fits on features of the model's own training-set
    curves, ``"truth"`` on the training reference curves.
    """
    fc = prep.train.calibration.features
    if source == "truth":
        runs = np.unique(prep.train.run)
        return fit_feature_regressor(prep.train.truth_features(runs), prep.train.run_soh[runs], ridge)
    if source != "virtual":
        raise ConfigError(f"regressor source must be 'virtual' or 'truth', got {source!r}")
    curves = construct(ckpt, prep.train.x_raw)
    return fit_feature_regressor(features_of_curves(curves, fc, prep.train.cfg.out_soc_range), prep.train.soh, ridge)


def feature_soh(ckpt: Checkpoint, regressor: FeatureRegressor, x_raw: np.ndarray, feature_cfg,
                soc_range=(0.05, 0.56)) -> np.ndarray:
    return estimate_soh_via_curves(construct(ckpt, x_raw), regressor, feature_cfg, soc_range)


def fixed_range_inputs(part: Dataset, soc_window: tuple[float, float]):
    """Re-simulate each run of ``part`` and cut the same fixed SOC window.

    Returns ``(x_raw, run_index)`` with one input per run.
    """
    cfg, cal = part.cfg, part.calibration
    runs = np.unique(part.run)
    xs = []
    for r in runs:
        m = int(part.run_module[r])
        si = cfg.soh_grid.index(float(part.run_soh[r]))
        pname = str(part.run_protocol[r])
        pi = cfg.protocols.index(pname)
        model = _module_model(cfg, m).with_soh(float(part.run_soh[r]))
        _, fast = _simulate_run(cfg, cal, model, m, si, pi, pname)
        start, stop = window_rows(fast.soc, *soc_window)
        raw, _ = prepare_raw(fast.profile.slice(start, stop), cfg.delta_q, cfg.n_nn)
        xs.append(raw)
    return np.stack(xs), runs


def range_errors(ckpt: Checkpoint, part: Dataset, ranges=None) -> dict:
    """Mean curve error on fixed input SOC windows, without retraining."""
    ranges = ranges or RANGES
    stats = norm_of(ckpt)
    out = {}
    for name, win in ranges.items():
        x, runs = fixed_range_inputs(part, win)
        pred = construct_standardized(ckpt, x)
        err = curve_errors(pred, standardize_curves(part.truth[runs], stats))
        out[name] = {"soc_range": list(win), "mean_error": float(err.mean()), "n": int(len(err))}
    return out


def finetune(ckpt: Checkpoint, prep: Prepared, preset_or_nodes="first4-last5", tcfg: TrainConfig | None = None,
             seed: int = 0) -> tuple[Checkpoint, TrainResult]:
    """Retrain only the selected layers on a new dataset.

    The source normalization statistics are kept so that the frozen layers
    see inputs on the scale they were trained on.
    """
    spec = spec_of(ckpt)
    nodes = preset_selection(spec, preset_or_nodes) if isinstance(preset_or_nodes, str) else list(preset_or_nodes)
    params = apply_selection(spec, ckpt.params, nodes)
    tcfg = tcfg or TrainConfig(seed=seed)
    if ckpt.arch in CURVE_ARCHS:
        tr, va = (prep.inputs("train"), prep.curve_targets("train")), (prep.inputs("val"), prep.curve_targets("val"))
    else:
        tr, va = (prep.inputs("train"), prep.soh_targets("train")), (prep.inputs("val"), prep.soh_targets("val"))
    if not len(tr[0]) or not len(va[0]):
        raise DataError("fine-tuning needs nonempty train and validation sets")
    res = train(spec.graph, params, tr, va, tcfg)
    out_params = res.params.copy()
    # restore the source flags so the result is a drop-in replacement
    out_params.trainable = dict(ckpt.params.trainable)
    meta = dict(ckpt.meta)
    meta.update({"finetune": {"nodes": nodes, "train": tcfg.to_dict(), "history": _history(res),
                              "dataset": prep.train.cfg.digest()}})
    return Checkpoint(ckpt.arch, ckpt.graph, out_params, dict(ckpt.norm), meta), res


__all__ = ["Prepared", "prepare", "train_curve_model", "train_soh_model", "construct", "construct_standardized",
           "direct_soh", "sample_curve_errors", "fit_regressor", "feature_soh", "range_errors", "finetune", "RANGES",
           "spec_of", "norm_of"]
