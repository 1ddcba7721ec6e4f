import json

import numpy as np
import pytest

from vicnet.dataset import (DatasetConfig, fit_dataset_norm, generate_dataset, load_dataset, read_manifest,
                            split_dataset, split_modules, standardize_curves, destandardize_curves)
from vicnet.errors import ConfigError, DataError

SMALL = dict(n_modules=3, soh_grid=(0.8, 0.9, 1.0), protocols=("FastB",), n_truncate=2)


@pytest.fixture(scope="module")
def written(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    return out, generate_dataset(DatasetConfig(**SMALL), out)


def test_sample_count(written):
    _, ds = written
    assert ds.n_samples == 3 * 3 * 1 * 2
    assert len(ds.truth) == 9 and ds.x_raw.shape == (18, 2, 128) and ds.truth.shape == (9, 3, 128)


def test_windows_respect_span(written):
    _, ds = written
    span = ds.window[:, 1] - ds.window[:, 0]
    assert np.all(span >= 0.2 - 0.01) and np.all(ds.window[:, 0] >= 0.13 - 1e-9)
    assert np.all((ds.n_point >= 1) & (ds.n_point <= 128))


def test_layout(written):
    out, ds = written
    labels = [json.loads(l) for l in (out / "labels.jsonl").read_text().splitlines()]
    assert len(labels) == ds.n_samples and len(list((out / "profiles").glob("*.csv"))) == 9
    assert len(list((out / "truth").glob("*.csv"))) == 9
    m = read_manifest(out)
    assert m["n_samples"] == ds.n_samples and m["dataset"]["n_modules"] == 3


def test_load_matches_memory(written):
    out, ds = written
    back = load_dataset(out)
    assert np.array_equal(back.x_raw, ds.x_raw) and np.array_equal(back.truth, ds.truth)
    assert np.array_equal(back.n_point, ds.n_point) and np.array_equal(back.soh, ds.soh)
    assert list(back.ids) == list(ds.ids)


def test_byte_identical_regeneration(written, tmp_path):
    out, _ = written
    generate_dataset(DatasetConfig(**SMALL), tmp_path)
    for f in sorted(p.relative_to(out) for p in out.rglob("*") if p.is_file()):
        assert (tmp_path / f).read_bytes() == (out / f).read_bytes(), f


def test_seed_changes_data(written):
    _, ds = written
    other = generate_dataset(DatasetConfig(**{**SMALL, "seed": 1}))
    assert not np.array_equal(other.x_raw, ds.x_raw)


def test_full_span_when_no_truncation_room():
    ds = generate_dataset(DatasetConfig(n_modules=1, soh_grid=(1.0,), protocols=("FastC",), n_truncate=1,
                                        min_span=0.78))
    assert np.allclose(ds.window[0], (0.13, 0.91), atol=0.01)


def test_load_errors(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path)
    (tmp_path / "manifest.json").write_text('{"kind": "other"}')
    with pytest.raises(DataError):
        load_dataset(tmp_path)


def test_config_validation():
    with pytest.raises(ConfigError):
        DatasetConfig(soh_grid=(0.7, 0.9))
    with pytest.raises(ConfigError):
        DatasetConfig(protocols=("Nope",))
    with pytest.raises(ConfigError):
        DatasetConfig.from_dict({"n_modules": 2, "colour": "red"})
    d = DatasetConfig(n_modules=5)
    assert DatasetConfig.from_dict(d.to_dict()) == d and d.digest() == DatasetConfig(n_modules=5).digest()


class TestSplit:
    def test_counts_and_disjoint(self):
        s = split_modules(range(10))
        assert [len(s[k]) for k in ("train", "val", "test")] == [6, 2, 2]
        assert sorted(s["train"] + s["val"] + s["test"]) == list(range(10))
        assert s == split_modules(range(10)) and s != split_modules(range(10), seed=3)

    def test_too_few(self):
        with pytest.raises(DataError):
            split_modules(range(2))
        with pytest.raises(ConfigError):
            split_modules(range(10), (0.5, 0.5, 0.5))

    def test_no_module_leaks(self, written):
        _, ds = written
        parts = split_dataset(ds)
        mods = [set(p.module.tolist()) for p in parts]
        assert all(m for m in mods) and not (mods[0] & mods[1]) and not (mods[0] & mods[2]) and not (mods[1] & mods[2])
        assert sum(p.n_samples for p in parts) == ds.n_samples

    def test_norm_from_train_only(self, written):
        _, ds = written
        tr, _, _ = split_dataset(ds)
        stats = fit_dataset_norm(tr)
        assert np.isclose(stats.mean["voltage"], tr.x_raw[:, 1].mean())
        curves = ds.truth[:2]
        assert np.allclose(destandardize_curves(standardize_curves(curves, stats), stats), curves, rtol=1e-12)
