"""Shared fixtures: the trained 48-module pipeline behind the acceptance suite.

Training takes tens of minutes on one core, so checkpoints are cached in
pytest's cache directory under a key that covers the pipeline settings and
the package sources. Delete ``.pytest_cache/d/vicnet-acceptance`` (or run
``pytest --cache-clear``) to retrain from scratch.
"""
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import pytest

import vicnet
from vicnet import pipeline as pl
from vicnet.dataset import DatasetConfig, generate_dataset
from vicnet.models import SOURCE_ARCH
from vicnet.nn.checkpoint import Checkpoint
from vicnet.nn.train import TrainConfig

SETTINGS = {
    "dataset": {"n_modules": 48},
    "transfer": {"n_modules": 12, "ocv": "alt", "protocols": ["FastD", "FastE", "FastF"], "seed": 1},
    # same wall-clock budget for both curve models (~25 min at 30 U-Net epochs)
    "curve": {"unet": {"max_epochs": 30, "patience": 30}, "mobile-unet": {"max_epochs": 48, "patience": 30}},
    "head": {"max_epochs": 300, "patience": 30},
    "finetune": {"max_epochs": 10, "patience": 30},
}

HEAD_OF = {v: k for k, v in SOURCE_ARCH.items()}


def _source_digest() -> str:
    h = hashlib.sha256()
    for f in sorted(Path(vicnet.__file__).parent.rglob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


@dataclass
class Trained:
    ds: object
    prep: object
    transfer_prep: object
    ckpts: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)


def _timed(store, name, fn):
    t0 = time.perf_counter()
    out = fn()
    store[name] = time.perf_counter() - t0
    return out


def build(cache: Path) -> Trained:
    ds = generate_dataset(DatasetConfig(**SETTINGS["dataset"]))
    prep = pl.prepare(ds)
    timing_file = cache / "seconds.json"
    seconds = json.loads(timing_file.read_text()) if timing_file.exists() else {}
    ckpts = {}

    def cached(name, make):
        f = cache / f"{name}.ckpt"
        if f.exists():
            ckpts[name] = Checkpoint.load(f)
            return ckpts[name]
        ck = _timed(seconds, name, make)
        ck.save(f)
        timing_file.write_text(json.dumps(seconds, indent=2, sort_keys=True))
        ckpts[name] = ck
        return ck

    head = TrainConfig(**SETTINGS["head"])
    for arch in ("unet", "mobile-unet"):
        curve = TrainConfig(**SETTINGS["curve"][arch])
        src = cached(arch, lambda a=arch, c=curve: pl.train_curve_model(prep, a, c)[0])
        cached(HEAD_OF[arch], lambda s=src: pl.train_soh_model(prep, s, head)[0])
    tds = generate_dataset(DatasetConfig(**SETTINGS["transfer"]))
    tprep = pl.prepare(tds, stats=pl.norm_of(ckpts["unet"]))
    cached("unet-finetuned",
           lambda: pl.finetune(ckpts["unet"], tprep, "first4-last5", TrainConfig(**SETTINGS["finetune"]))[0])
    return Trained(ds, prep, tprep, ckpts, seconds)


@pytest.fixture(scope="session")
def trained(request) -> Trained:
    key = hashlib.sha256(json.dumps({"settings": SETTINGS, "src": _source_digest()},
                                    sort_keys=True).encode()).hexdigest()[:16]
    cache = Path(request.config.cache.mkdir("vicnet-acceptance")) / key
    cache.mkdir(parents=True, exist_ok=True)
    return build(cache)


# one summary line per acceptance criterion

def pytest_runtest_makereport(item, call):
    if call.when != "call" or not item.name.startswith("test_criterion_"):
        return
    outcome = "PASS" if call.excinfo is None else "FAIL"
    detail = dict(item.user_properties).get("detail", "")
    item.config.stash.setdefault(_LINES, []).append(f"{item.name[len('test_'):]}: {outcome}  {detail}")


_LINES = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split("_")[1])):
            terminalreporter.write_line(line)
