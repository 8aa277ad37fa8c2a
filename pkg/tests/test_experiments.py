import dataclasses
import math

import numpy as np
import pytest

from labelrecovery import adaptation as ad
from labelrecovery import config as cf
from labelrecovery import experiments as ex
from labelrecovery import nn


@pytest.fixture(scope="module")
def tiny_ckpt(tmp_path_factory):
    net = nn.PreEqNet.create(np.random.default_rng(0), hidden=16, n_hidden=2)
    net.alpha[...] = 0.05
    path = tmp_path_factory.mktemp("ck") / "tiny.npz"
    nn.save_checkpoint(path, net)
    return path


def tiny(name, ckpt, out, **kw):
    cfg = ex.preset(name)
    small = dict(checkpoint=str(ckpt), out=str(out), eval_frames=100, n_steps=3, warm_steps=1,
                 warm_frames=100, record_frames=200,
                 finetune=dataclasses.replace(cfg.finetune, frames_per_step=100, batch_size=50,
                                              iterations_per_step=2))
    if name == "fig6":
        small["n_theta"] = (50, 100)
    small.update(kw)
    return dataclasses.replace(cfg, **small)


def test_metrics_csv_roundtrip(tmp_path):
    rows = [ad.MetricsRow(0, 0.5, 0.0, "tx", 0.01, 0.005, 0.0, 0.1, 0.999, True, 0.04),
            ad.MetricsRow(1, 0.65, 0.0, "tx", 0.02, 0.01, 1e-4, 0.2, 0.99, False, float("nan"))]
    path = ex.write_metrics(tmp_path / "m.csv", rows)
    assert path.read_text().splitlines()[0] == ",".join(ex.CSV_HEADER)
    back = ex.read_metrics(path)
    assert back[0] == rows[0]
    assert back[1].finetune is False and math.isnan(back[1].loss)


@pytest.mark.parametrize("field,value", [("pre_ecc_ser", 1.5), ("evm", -0.1), ("side", "up"),
                                         ("label_acc", -0.01)])
def test_row_validation(tmp_path, field, value):
    row = ad.MetricsRow(0, 0.5, 0.0, "tx", 0.01, 0.005, 0.0, 0.1, 0.999, True, 0.04)
    path = ex.write_metrics(tmp_path / "m.csv", [dataclasses.replace(row, **{field: value})])
    with pytest.raises(ValueError):
        ex.read_metrics(path)


def test_bad_header(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        ex.read_metrics(p)


@pytest.mark.parametrize("name", ["custom", "fig4", "fig5", "fig3", "fig6"])
def test_run_writes_valid_outputs(tmp_path, tiny_ckpt, name):
    out = ex.run_experiment(tiny(name, tiny_ckpt, tmp_path / name))
    csvs = sorted(out.glob("metrics_*.csv"))
    assert csvs
    for p in csvs:
        assert ex.read_metrics(p)
    assert (out / f"{name}.svg").exists()
    manifest = (out / "manifest.txt").read_text()
    assert ex.sha256_file(tiny_ckpt) in manifest
    # the manifest parses back to the config that produced it
    assert cf.loads(manifest) == tiny(name, tiny_ckpt, tmp_path / name)


def test_fig3_rows(tmp_path, tiny_ckpt):
    out = ex.run_experiment(tiny("fig3", tiny_ckpt, tmp_path))
    names = {p.stem for p in out.glob("metrics_*.csv")}
    assert names == {"metrics_baseline", "metrics_corrupted", "metrics_detect_only",
                     "metrics_ecc_corrected"}
    ecc = ex.read_metrics(out / "metrics_ecc_corrected.csv")
    assert len(ecc) == 3 and not ecc[0].finetune and all(r.finetune for r in ecc[1:])
    assert all(r.param_beta == 0.65 for r in ecc)


def test_fig4_has_frozen_reference(tmp_path, tiny_ckpt):
    out = ex.run_experiment(tiny("fig4", tiny_ckpt, tmp_path))
    names = {p.stem for p in out.glob("metrics_*.csv")}
    assert names == {"metrics_tx", "metrics_tx_frozen", "metrics_rx", "metrics_rx_frozen"}


def test_same_seed_byte_identical(tmp_path, tiny_ckpt):
    a = ex.run_experiment(tiny("fig4", tiny_ckpt, tmp_path / "a"))
    b = ex.run_experiment(tiny("fig4", tiny_ckpt, tmp_path / "b"))
    c = ex.run_experiment(tiny("fig4", tiny_ckpt, tmp_path / "c", seed=2))
    for p in a.glob("metrics_*.csv"):
        assert p.read_bytes() == (b / p.name).read_bytes()
    assert (a / "metrics_tx.csv").read_bytes() != (c / "metrics_tx.csv").read_bytes()


def test_ber_sweep_matches_closed_form(tmp_path):
    cfg = dataclasses.replace(ex.preset("ber_sweep"), out=str(tmp_path), sweep_bits=200_000,
                              sweep_db=(0.0, 4.0))
    out = ex.run_experiment(cfg)
    lines = (out / "bersweep.csv").read_text().splitlines()
    assert lines[0] == ",".join(ex.SWEEP_HEADER)
    for line in lines[1:]:
        db, ber, theory, std, n = map(float, line.split(","))
        assert n >= 200_000
        assert abs(ber - theory) <= 3 * std
    assert (out / "ber_sweep.svg").exists()


def test_missing_checkpoint(tmp_path):
    cfg = dataclasses.replace(ex.preset("fig4"), checkpoint=str(tmp_path / "nope.npz"),
                              out=str(tmp_path))
    with pytest.raises(FileNotFoundError):
        ex.run_experiment(cfg)


def test_output_dir_from_env(monkeypatch, tmp_path):
    monkeypatch.setenv(ex.OUT_ENV, str(tmp_path))
    assert ex.default_out(ex.preset("fig5")) == tmp_path / "fig5-seed1"


def test_pretrain_cache_key_tracks_config():
    a = ex.pretrain_key(ad.PretrainConfig(), 62)
    assert a == ex.pretrain_key(ad.PretrainConfig(), 62)
    assert a != ex.pretrain_key(ad.PretrainConfig(steps=10), 62)


def test_pretrain_writes_checkpoint(tmp_path, monkeypatch):
    monkeypatch.setenv(ex.CACHE_ENV, str(tmp_path))
    pcfg = ad.PretrainConfig(steps=3, batch_size=8)
    cfg = dataclasses.replace(ex.preset("custom"), pretrain=pcfg)
    path = ex.pretrained_checkpoint(cfg)
    assert path.parent == tmp_path and path.exists()
    net, adam = nn.load_checkpoint(path)
    assert adam.t == 3 and net.widths == [144, 256, 256, 256, 144]
    # second call reuses the cached file
    mtime = path.stat().st_mtime_ns
    assert ex.pretrained_checkpoint(cfg) == path and path.stat().st_mtime_ns == mtime
