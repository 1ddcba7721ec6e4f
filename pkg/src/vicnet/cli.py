"""Command-line entry point: ``vicnet {datagen|train|construct|estimate|eval|flops|finetune}``.

Every command accepts ``--config FILE`` with a JSON object of option values
(or a manifest written by an earlier run, whose ``config`` block is used);
explicit flags override it. The seed falls back to ``$VICNET_SEED``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (DatasetConfig, generate_dataset, load_dataset, read_curve_csv, read_manifest,
                      read_profile_csv, standardize_curves, fit_dataset_norm, split_dataset, write_curve_csv,
                      write_manifest)
from .errors import ConfigError, DataError, VicnetError
from .ica import CurveTriple, curve_errors
from .models import ARCHITECTURES, CURVE_ARCHS, SOH_ARCHS, SOURCE_ARCH, build_curve_model, summary_counts, transfer_head
from .nn.checkpoint import Checkpoint
from .nn.train import TrainConfig
from .plotdata import emit_plot_data, histogram
from .preprocess import check_window, prepare_raw
from . import pipeline as pl
from .soh import FeatureRegressor, evaluate, span_bins

log = logging.getLogger("vicnet")

# option name -> (type, default); None defaults mean "not set"
TRAIN_OPTS = {"epochs": (int, 200), "patience": (int, 30), "batch_size": (int, 64), "lr": (float, 1e-3)}
COMMANDS = {
    "datagen": {"out": (str, None), "modules": (int, 12), "soh_grid": (str, "0.80:1.00:0.01"),
                "protocols": (str, "FastA,FastB,FastC"), "n_truncate": (int, 10), "ocv": (str, "default"),
                "sigma_v": (float, 1e-3), "sigma_i": (float, 0.1), "n_nn": (int, 128), "seed": (int, None),
                "fractions": (str, "0.6,0.2,0.2")},
    "train": {"data": (str, None), "out": (str, None), "preset": (str, "unet"), "source": (str, None),
              "regressor_source": (str, "virtual"), "ridge": (float, 1e-3), "seed": (int, None), **TRAIN_OPTS},
    "construct": {"model": (str, None), "data": (str, None), "out": (str, None), "split": (str, "test"),
                  "profile": (str, None), "predictions": (str, None), "fixed_ranges": (bool, False)},
    "estimate": {"model": (str, None), "data": (str, None), "out": (str, None), "route": (str, "features"),
                 "split": (str, "test"), "profile": (str, None)},
    "eval": {"model": (str, None), "data": (str, None), "out": (str, None), "route": (str, "features"),
             "split": (str, "test"), "bins": (int, 20)},
    "flops": {"preset": (str, "all"), "n_nn": (int, 128), "out": (str, None)},
    "finetune": {"model": (str, None), "data": (str, None), "out": (str, None), "preset": (str, "first4-last5"),
                 "seed": (int, None), **TRAIN_OPTS},
}
REQUIRED = {"datagen": ("out",), "train": ("data", "out"), "construct": ("model_or_predictions", "out"),
            "estimate": ("model", "out"), "eval": ("model", "data", "out"), "flops": (),
            "finetune": ("model", "data", "out")}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vicnet", description="Virtual IC/DV curves and SOH estimation.")
    p.add_argument("--version", action="version", version=f"vicnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for cmd, opts in COMMANDS.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", default=None, help="JSON file of option values or a previous manifest")
        sp.add_argument("-v", "--verbose", action="store_true")
        for name, (typ, _) in opts.items():
            flag = "--" + name.replace("_", "-")
            if typ is bool:
                sp.add_argument(flag, dest=name, action="store_const", const=True, default=None)
            else:
                sp.add_argument(flag, dest=name, default=None)
    return p


def _coerce(cmd: str, name: str, value):
    typ = COMMANDS[cmd][name][0]
    if value is None:
        return None
    try:
        if typ is bool:
            if isinstance(value, str):
                return value.lower() in ("1", "true", "yes", "on")
            return bool(value)
        if typ is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"field {name!r}: expected {typ.__name__}, got {value!r}") from None


def resolve(cmd: str, args: argparse.Namespace) -> dict:
    """Defaults < config file < explicit flags < VICNET_SEED fallback for the seed."""
    opts = COMMANDS[cmd]
    cfg = {k: d for k, (_, d) in opts.items()}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        if "command" in data and "config" in data:
            if data["command"] != cmd:
                raise ConfigError(f"manifest is for {data['command']!r}, not {cmd!r}")
            data = data["config"]
        unknown = sorted(set(data) - set(opts))
        if unknown:
            raise ConfigError(f"unknown fields for {cmd}: {unknown}")
        for k, v in data.items():
            cfg[k] = _coerce(cmd, k, v)
    for k in opts:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = _coerce(cmd, k, v)
    if "seed" in opts and cfg["seed"] is None:
        env = os.environ.get("VICNET_SEED")
        cfg["seed"] = _coerce(cmd, "seed", env) if env not in (None, "") else 0
    for req in REQUIRED[cmd]:
        if req == "model_or_predictions":
            if not cfg.get("model") and not cfg.get("predictions"):
                raise ConfigError("construct needs --model or --predictions")
        elif not cfg.get(req):
            raise ConfigError(f"field {req!r} is required for {cmd}")
    return cfg


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _finish(cmd: str, cfg: dict, out: Path, inputs: dict[str, Path], extra: dict | None = None) -> None:
    """Write ``manifest.json`` with the resolved config and input/output hashes."""
    outputs = {}
    for f in sorted(out.rglob("*")):
        if f.is_file() and f.name != "manifest.json":
            outputs[str(f.relative_to(out))] = _sha(f)
    manifest = {"command": cmd, "config": cfg, "version": __version__,
                "inputs": {k: _sha(p) for k, p in sorted(inputs.items()) if p.exists()},
                "outputs": outputs}
    if extra:
        manifest.update(extra)
    _write_json(out / "manifest.json", manifest)


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        if ":" in text:
            lo, hi, step = (float(x) for x in text.split(":"))
            n = int(round((hi - lo) / step)) + 1
            return tuple(round(lo + step * k, 10) for k in range(n))
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"field 'soh_grid': cannot parse {text!r}") from None


def _fractions(text: str) -> tuple[float, float, float]:
    try:
        f = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"field 'fractions': cannot parse {text!r}") from None
    if len(f) != 3:
        raise ConfigError("field 'fractions': need three comma-separated values")
    return f


def _train_cfg(cfg: dict) -> TrainConfig:
    return TrainConfig(batch_size=cfg["batch_size"], patience=cfg["patience"], max_epochs=cfg["epochs"],
                       lr=cfg["lr"], seed=cfg["seed"])


def _load_data(path: str):
    root = Path(path)
    manifest = read_manifest(root)
    ds = load_dataset(root)
    return root, manifest, ds


def _part(ds, manifest, split):
    if split == "all":
        return ds
    if split not in ("train", "val", "test"):
        raise ConfigError("field 'split': choose train, val, test or all")
    if manifest.get("split") is None:
        raise DataError("dataset manifest has no split assignment (too few modules?)")
    return dict(zip(("train", "val", "test"), split_dataset(ds, assignment=manifest["split"])))[split]


def _prepared(ds, manifest, stats=None):
    split = manifest.get("split")
    if split is None:
        raise DataError("dataset manifest has no split assignment (too few modules?)")
    return pl.prepare(ds, tuple(manifest.get("fractions", (0.6, 0.2, 0.2))), assignment=split, stats=stats)


def _load_model(path: str):
    root = Path(path)
    f = root / "model.ckpt" if root.is_dir() else root
    ckpt = Checkpoint.load(f)
    reg = None
    rf = f.parent / "regressor.json"
    if rf.exists():
        reg = FeatureRegressor.from_dict(json.loads(rf.read_text()))
    return f, ckpt, reg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_datagen(cfg: dict) -> int:
    out = Path(cfg["out"])
    if out.exists() and any(out.iterdir()):
        raise ConfigError(f"output directory {out} is not empty")
    dcfg = DatasetConfig(n_modules=cfg["modules"], soh_grid=_parse_grid(cfg["soh_grid"]),
                         protocols=tuple(p.strip() for p in cfg["protocols"].split(",") if p.strip()),
                         n_truncate=cfg["n_truncate"], seed=cfg["seed"], ocv=cfg["ocv"], n_nn=cfg["n_nn"],
                         sigma_v=cfg["sigma_v"], sigma_i=cfg["sigma_i"])
    fractions = _fractions(cfg["fractions"])
    ds = generate_dataset(dcfg, out)
    base = write_manifest(out, ds, fractions)
    _finish("datagen", cfg, out, {}, base)
    print(f"wrote {ds.n_samples} samples from {len(ds.truth)} runs to {out}")
    return 0


def cmd_train(cfg: dict) -> int:
    preset = cfg["preset"]
    if preset not in ARCHITECTURES:
        raise ConfigError(f"field 'preset': choose from {ARCHITECTURES}")
    root, manifest, ds = _load_data(cfg["data"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    tcfg = _train_cfg(cfg)
    inputs = {"data/manifest.json": root / "manifest.json", "data/labels.jsonl": root / "labels.jsonl"}
    if preset in CURVE_ARCHS:
        prep = _prepared(ds, manifest)
        ckpt, res = pl.train_curve_model(prep, preset, tcfg, seed=cfg["seed"])
        reg = pl.fit_regressor(ckpt, prep, cfg["regressor_source"], cfg["ridge"])
        _write_json(out / "regressor.json", reg.to_dict())
    else:
        if not cfg["source"]:
            raise ConfigError(f"field 'source' (a trained {SOURCE_ARCH[preset]} model) is required")
        sf, source, _ = _load_model(cfg["source"])
        inputs["source/model.ckpt"] = sf
        prep = _prepared(ds, manifest, stats=pl.norm_of(source))
        ckpt, res = pl.train_soh_model(prep, source, tcfg, seed=cfg["seed"])
    ckpt.save(out / "model.ckpt")
    _write_json(out / "history.json", ckpt.meta["history"])
    _finish("train", cfg, out, inputs)
    print(f"{preset}: best epoch {res.best_epoch} of {res.epochs_run}, val loss {min(res.val_loss):.6g}")
    return 0


def cmd_construct(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    inputs = {}
    ckpt = None
    if cfg["model"]:
        mf, ckpt, _ = _load_model(cfg["model"])
        inputs["model.ckpt"] = mf
        if ckpt.arch not in CURVE_ARCHS:
            raise ConfigError(f"construct needs a curve model, got {ckpt.arch}")
    if cfg["profile"]:
        if ckpt is None:
            raise ConfigError("--profile needs --model")
        prof = read_profile_csv(cfg["profile"])
        inputs["profile.csv"] = Path(cfg["profile"])
        raw, n = prepare_raw(prof, ckpt.norm["delta_q"], ckpt.norm["n_nn"])
        curve = pl.construct(ckpt, raw[None])[0]
        tri = CurveTriple.from_array(curve, ckpt.norm["out_soc_range"])
        write_curve_csv(out / "curve.csv", tri)
        _write_json(out / "summary.json", {"n_point": n, "window_ok": check_window(prof, 0.2, ckpt.norm["c_fresh"])})
        _finish("construct", cfg, out, inputs)
        return 0
    if not cfg["data"]:
        raise ConfigError("construct needs --data or --profile")
    root, manifest, ds = _load_data(cfg["data"])
    inputs["data/manifest.json"] = root / "manifest.json"
    part = _part(ds, manifest, cfg["split"])
    if ckpt is not None:
        stats = pl.norm_of(ckpt)
    else:
        stats = fit_dataset_norm(_part(ds, manifest, "train"))
    truth = part.truth[part.run]
    if cfg["predictions"]:
        pdir = Path(cfg["predictions"])
        pred = np.stack([read_curve_csv(pdir / "curves" / f"{sid}.csv").as_array() for sid in part.ids])
    else:
        pred = pl.construct(ckpt, part.x_raw)
        (out / "curves").mkdir(exist_ok=True)
        for sid, c in zip(part.ids, pred):
            write_curve_csv(out / "curves" / f"{sid}.csv", CurveTriple.from_array(c, ds.cfg.out_soc_range))
    err = curve_errors(standardize_curves(pred, stats), standardize_curves(truth, stats))
    lines = ["id,error"] + [f"{sid},{e:.10g}" for sid, e in zip(part.ids, err)]
    (out / "errors.csv").write_text("\n".join(lines) + "\n")
    summary = {"n": int(len(err)), "mean_error": float(err.mean()), "median_error": float(np.median(err)),
               "plot": emit_plot_data(out, err, part.ids, pred, truth)}
    if cfg["fixed_ranges"]:
        if ckpt is None:
            raise ConfigError("--fixed-ranges needs --model")
        summary["ranges"] = pl.range_errors(ckpt, part)
    _write_json(out / "summary.json", summary)
    _finish("construct", cfg, out, inputs)
    print(f"mean curve error {summary['mean_error']:.6g} over {len(err)} samples")
    return 0


def _route_estimates(route, ckpt, reg, x_raw, calib, soc_range):
    if route == "features":
        if ckpt.arch not in CURVE_ARCHS or reg is None:
            raise ConfigError("the features route needs a curve model directory with regressor.json")
        from .dataset import FeatureConfig
        return pl.feature_soh(ckpt, reg, x_raw, FeatureConfig.from_dict(calib["features"]), soc_range)
    if route == "direct":
        if ckpt.arch not in SOH_ARCHS:
            raise ConfigError("the direct route needs a conv-net or mobile-net model")
        return pl.direct_soh(ckpt, x_raw)
    raise ConfigError("field 'route': choose features or direct")


def cmd_estimate(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    mf, ckpt, reg = _load_model(cfg["model"])
    inputs = {"model.ckpt": mf}
    calib = ckpt.meta.get("calibration", {})
    soc_range = tuple(ckpt.norm["out_soc_range"])
    if cfg["profile"]:
        prof = read_profile_csv(cfg["profile"])
        inputs["profile.csv"] = Path(cfg["profile"])
        raw, _ = prepare_raw(prof, ckpt.norm["delta_q"], ckpt.norm["n_nn"])
        est = _route_estimates(cfg["route"], ckpt, reg, raw[None], calib, soc_range)
        result = [{"id": Path(cfg["profile"]).stem, "soh": float(est[0]),
                   "window_ok": check_window(prof, 0.2, ckpt.norm["c_fresh"])}]
    elif cfg["data"]:
        root, manifest, ds = _load_data(cfg["data"])
        inputs["data/manifest.json"] = root / "manifest.json"
        part = _part(ds, manifest, cfg["split"])
        est = _route_estimates(cfg["route"], ckpt, reg, part.x_raw, calib, soc_range)
        result = [{"id": str(s), "soh": float(e)} for s, e in zip(part.ids, est)]
    else:
        raise ConfigError("estimate needs --profile or --data")
    _write_json(out / "soh.json", {"route": cfg["route"], "estimates": result})
    _finish("estimate", cfg, out, inputs)
    for r in result[:5]:
        print(f"{r['id']}: SOH {r['soh']:.4f}")
    return 0


def cmd_eval(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    mf, ckpt, reg = _load_model(cfg["model"])
    root, manifest, ds = _load_data(cfg["data"])
    part = _part(ds, manifest, cfg["split"])
    est = _route_estimates(cfg["route"], ckpt, reg, part.x_raw, ckpt.meta.get("calibration", {}),
                           tuple(ckpt.norm["out_soc_range"]))
    rep = evaluate(est, part.soh, span_bins(part.window))
    _write_json(out / "report.json", {"route": cfg["route"], "arch": ckpt.arch, **rep.to_dict()})
    lines = ["id,soh_true,soh_est,residual"] + [f"{s},{t:.10g},{e:.10g},{r:.10g}"
                                                 for s, t, e, r in zip(part.ids, part.soh, est, rep.residuals)]
    (out / "residuals.csv").write_text("\n".join(lines) + "\n")
    counts, edges = histogram(np.abs(rep.residuals), cfg["bins"])
    lines = ["bin_lo,bin_hi,count"] + [f"{a:.10g},{b:.10g},{c}" for a, b, c in zip(edges[:-1], edges[1:], counts)]
    (out / "histogram.csv").write_text("\n".join(lines) + "\n")
    _finish("eval", cfg, out, {"model.ckpt": mf, "data/manifest.json": root / "manifest.json"})
    print(f"{cfg['route']}: RMSE {rep.rmse:.5f}, p99.7 |err| {rep.p997_abs_err:.5f} over {len(est)} samples")
    return 0


def flops_table(n_nn: int = 128, presets=ARCHITECTURES) -> list[dict]:
    rows = []
    sources = {}
    for arch in presets:
        if arch in CURVE_ARCHS:
            spec = build_curve_model(arch, n_nn)
            rows.append(summary_counts(spec))
        else:
            src_arch = SOURCE_ARCH[arch]
            if src_arch not in sources:
                s = build_curve_model(src_arch, n_nn)
                sources[src_arch] = (s, s.graph.init_params(np.random.default_rng(0)))
            s, p = sources[src_arch]
            spec, params, _ = transfer_head(s, p, arch)
            rows.append(summary_counts(spec, params))
    return rows


def cmd_flops(cfg: dict) -> int:
    presets = ARCHITECTURES if cfg["preset"] == "all" else (cfg["preset"],)
    for p in presets:
        if p not in ARCHITECTURES:
            raise ConfigError(f"field 'preset': choose from {ARCHITECTURES} or all")
    rows = flops_table(cfg["n_nn"], presets)
    print(f"{'model':<12} {'total':>9} {'trainable':>10} {'fixed':>9} {'flops':>11}")
    for r in rows:
        print(f"{r['arch']:<12} {r['total']:>9} {r['trainable']:>10} {r['fixed']:>9} {r['flops']:>11}")
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "flops.json", rows)
        _finish("flops", cfg, out, {})
    return 0


def cmd_finetune(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    mf, ckpt, reg = _load_model(cfg["model"])
    root, manifest, ds = _load_data(cfg["data"])
    prep = _prepared(ds, manifest, stats=pl.norm_of(ckpt))
    before = pl.sample_curve_errors(ckpt, prep.test).mean() if ckpt.arch in CURVE_ARCHS else None
    tuned, res = pl.finetune(ckpt, prep, cfg["preset"], _train_cfg(cfg), seed=cfg["seed"])
    tuned.save(out / "model.ckpt")
    summary = {"preset": cfg["preset"], "nodes": tuned.meta["finetune"]["nodes"],
               "best_epoch": res.best_epoch, "epochs_run": res.epochs_run}
    if before is not None:
        after = pl.sample_curve_errors(tuned, prep.test).mean()
        summary.update({"test_error_before": float(before), "test_error_after": float(after)})
        if reg is not None:
            new_reg = pl.fit_regressor(tuned, prep, "virtual")
            _write_json(out / "regressor.json", new_reg.to_dict())
    _write_json(out / "finetune.json", summary)
    _finish("finetune", cfg, out, {"model.ckpt": mf, "data/manifest.json": root / "manifest.json"})
    print(json.dumps({k: v for k, v in summary.items() if k != "nodes"}))
    return 0


HANDLERS = {"datagen": cmd_datagen, "train": cmd_train, "construct": cmd_construct, "estimate": cmd_estimate,
            "eval": cmd_eval, "flops": cmd_flops, "finetune": cmd_finetune}


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
        return HANDLERS[args.command](cfg)
    except VicnetError as exc:
        print(f"vicnet {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"vicnet {args.command}: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
