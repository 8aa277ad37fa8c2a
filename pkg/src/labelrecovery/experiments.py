"""Experiment presets and the runner that writes manifest, CSV and SVG outputs."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import os
import platform
from importlib import metadata
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import adaptation as ad
from . import config as cf
from . import convcode, nn, ofdm, plot
from .impairments import RX, TX, ImpairmentState, NoiseSpec, Trajectory, awgn, sigma2_from_ebn0

log = logging.getLogger(__name__)

CSV_HEADER = ("time_step,param_beta,param_gamma,side,pre_ecc_ser,pre_ecc_ber,"
              "post_ecc_ber,evm,label_acc,finetune,loss").split(",")
CSV_SCHEMA_VERSION = 1
SWEEP_HEADER = ["eb_n0_db", "ber", "theory", "std", "n_bits"]

OUT_ENV = "LABELRECOVERY_OUT"
CACHE_ENV = "LABELRECOVERY_CACHE"

# rng stream ids, combined with the seed and an index
_WARM, _COLLECT, _EVAL, _RECORD, _SWEEP = 10, 11, 12, 13, 14


def preset(name: str) -> cf.ExperimentConfig:
    """Built-in configuration for ``name``; ``custom`` is the bare default."""
    base = cf.ExperimentConfig(experiment=name)
    if name == "fig3":
        return dataclasses.replace(
            base, eb_n0_db=5.0, side=TX, sides=(TX,), effect="beta",
            label_modes=(ad.CORRUPTED, ad.DETECT_ONLY, ad.ECC_CORRECTED),
            extra_eval_db=(10.0,),
            finetune=ad.FinetuneConfig(frames_per_step=20_000, accumulate=False))
    if name == "fig4":
        return dataclasses.replace(
            base, eb_n0_db=10.0, sides=(TX, RX), effect="beta", n_steps=19,
            trajectory=Trajectory("scripted", [(0, 0.5), (3, 0.65), (8, 0.5), (11, 0.35),
                                               (16, 0.5)]),
            finetune=ad.FinetuneConfig(frames_per_step=5_000))
    if name == "fig5":
        return dataclasses.replace(
            base, eb_n0_db=14.0, sides=(TX, RX), effect="gamma", n_steps=12,
            trajectory=Trajectory("scripted", [(0, 0.0), (2, 0.6), (5, 0.0), (7, 0.9),
                                               (10, 0.0)]),
            finetune=ad.FinetuneConfig(frames_per_step=20_000))
    if name == "fig6":
        return dataclasses.replace(
            base, eb_n0_db=10.0, side=RX, sides=(RX,), effect="beta", target_value=0.8,
            n_theta=(500, 1000), record_frames=10_000)
    if name in ("ber_sweep", "custom"):
        return base
    raise cf.ConfigError(f"unknown experiment {name!r}")


# --------------------------------------------------------------------------
# files

def write_metrics(path, rows: list[ad.MetricsRow]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            vals = dataclasses.astuple(r)
            w.writerow([repr(v) if isinstance(v, float) else int(v) if isinstance(v, bool) else v
                        for v in vals])
    return path


def read_metrics(path) -> list[ad.MetricsRow]:
    """Parse and validate a metrics CSV."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for lineno, rec in enumerate(reader, 2):
            if len(rec) != len(CSV_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields")
            try:
                row = ad.MetricsRow(int(rec[0]), float(rec[1]), float(rec[2]), rec[3],
                                    *map(float, rec[4:9]), bool(int(rec[9])), float(rec[10]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            validate_row(row)
            rows.append(row)
    return rows


def validate_row(row: ad.MetricsRow) -> None:
    for name in ("pre_ecc_ser", "pre_ecc_ber", "post_ecc_ber", "label_acc"):
        v = getattr(row, name)
        if not (np.isnan(v) or 0.0 <= v <= 1.0):
            raise ValueError(f"{name}={v} outside [0, 1]")
    if not (np.isnan(row.evm) or row.evm >= 0):
        raise ValueError(f"evm={row.evm} negative")
    if row.side not in (TX, RX, "both"):
        raise ValueError(f"bad side {row.side!r}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def code_version() -> str:
    try:
        ver = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        ver = "unknown"
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{ver}+src.{h.hexdigest()[:12]}"


def default_out(cfg: cf.ExperimentConfig) -> Path:
    if cfg.out:
        return Path(cfg.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / f"{cfg.experiment}-seed{cfg.seed}"


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "labelrecovery"))


# --------------------------------------------------------------------------
# pretrained starting point

def pretrain_key(pcfg: ad.PretrainConfig, k: int) -> str:
    text = "".join(f"{f.name}={getattr(pcfg, f.name)!r};" for f in dataclasses.fields(pcfg))
    return hashlib.sha256(f"{text}k={k}".encode()).hexdigest()[:16]


def pretrain(pcfg: ad.PretrainConfig, k: int = convcode.DEFAULT_K, path=None) -> Path:
    """Run initial training and save the checkpoint (fresh network, α = 0)."""
    net = nn.PreEqNet.create(np.random.default_rng(pcfg.seed))
    every = max(pcfg.steps // 10, 1)

    def progress(step, loss, _net):
        if (step + 1) % every == 0:
            log.info("pretrain step %d/%d loss %.4f alpha %.4f", step + 1, pcfg.steps, loss,
                     float(_net.alpha))

    adam = ad.initial_training(net, pcfg, k, progress=progress)
    path = Path(path) if path else cache_dir() / f"pretrain-{pretrain_key(pcfg, k)}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp.npz")
    nn.save_checkpoint(tmp, net, adam)
    tmp.replace(path)
    return path


def pretrained_checkpoint(cfg: cf.ExperimentConfig) -> Path:
    """Explicit checkpoint if configured, else the cached one (trained on first use)."""
    if cfg.checkpoint:
        path = Path(cfg.checkpoint)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint {path} not found")
        return path
    path = cache_dir() / f"pretrain-{pretrain_key(cfg.pretrain, cfg.k)}.npz"
    if not path.exists():
        log.info("no cached pretrained network, training one (%d steps)", cfg.pretrain.steps)
        pretrain(cfg.pretrain, cfg.k, path)
    return path


def load_net(path) -> nn.PreEqNet:
    # the optimizer state of pretraining is not carried into finetuning
    return nn.load_checkpoint(path)[0]


# --------------------------------------------------------------------------
# helpers

def make_link(side: str, eb_n0_db: float, k: int, beta: float = 0.5,
              gamma: float = 0.0) -> ad.Link:
    return ad.Link(ImpairmentState(beta, gamma, side), NoiseSpec(eb_n0_db), k)


def evaluate(net: nn.PreEqNet, link: ad.Link, n: int, rng: np.random.Generator,
             traceback: int | None = convcode.TRACEBACK) -> tuple[dict, ad.FrameBatch]:
    batch = ad.random_frames(n, link, rng)
    ad.receive_and_decode(net, batch, link, traceback)
    m = ad.frame_metrics(batch)
    m["evm"] = ad.impairment_evm(batch, link)
    m["n_symbols"] = batch.x.shape[0] * ofdm.N_FFT
    return m, batch


def _row(t: int, link: ad.Link, m: dict, finetune: bool, loss: float,
         label_acc: float | None = None) -> ad.MetricsRow:
    st = link.state
    return ad.MetricsRow(t, float(st.beta_iq), float(st.gamma_nl), st.side, m["pre_ecc_ser"],
                         m["pre_ecc_ber"], m["post_ecc_ber"], m["evm"],
                         m["label_acc"] if label_acc is None else label_acc, finetune, loss)


def _set_param(link: ad.Link, effect: str, value: float) -> ad.Link:
    key = "beta_iq" if effect == "beta" else "gamma_nl"
    return link.with_state(link.state.replace(**{key: value}))


# --------------------------------------------------------------------------
# experiments; each returns {file stem: rows}, plus a summary dict

def run_fig3(cfg: cf.ExperimentConfig, net: nn.PreEqNet):
    """Label-quality comparison at one parameter jump.

    The pretrained net is first adapted with genie labels at ``warm_value``;
    frames are then collected once at ``target_value`` and each label mode
    finetunes its own copy of the warmed-up network on them.
    """
    link = make_link(cfg.side, cfg.eb_n0_db, cfg.k)
    warm_link = _set_param(link, cfg.effect, cfg.warm_value)
    warm_cfg = dataclasses.replace(cfg.finetune, accumulate=True)
    adam = nn.AdamState.zeros_like(net.parameters(), cfg.finetune.lr)
    for t in range(cfg.warm_steps):
        batch = ad.random_frames(cfg.warm_frames, warm_link, ad.step_rng(cfg.seed, _WARM, t))
        adam, _ = ad.finetune(net, ad.collect_training_set(batch, ad.GENIE), warm_link,
                              warm_cfg, adam)
    new_link = _set_param(link, cfg.effect, cfg.target_value)
    collected = ad.random_frames(cfg.finetune.frames_per_step, new_link,
                                 ad.step_rng(cfg.seed, _COLLECT, 0))
    ad.receive_and_decode(net, collected, new_link, cfg.traceback)
    summary = {"collection": ad.frame_metrics(collected)}
    one_pass = dataclasses.replace(cfg.finetune, iterations_per_step=1)

    def eval_all(n_, t, finetuned, loss, label_acc):
        m, _ = evaluate(n_, new_link, cfg.eval_frames, ad.step_rng(cfg.seed, _EVAL, 0),
                        cfg.traceback)
        extra = {}
        for db in cfg.extra_eval_db:
            lk = make_link(cfg.side, db, cfg.k, *_params(new_link))
            extra[db], _ = evaluate(n_, lk, cfg.eval_frames, ad.step_rng(cfg.seed, _EVAL, 1),
                                    cfg.traceback)
        return _row(t, new_link, m, finetuned, loss, label_acc), m, extra

    out = {}
    row, m, extra = eval_all(net, 0, False, float("nan"), summary["collection"]["label_acc_pre"])
    out["baseline"] = [row]
    summary["baseline"] = {"final": m, "extra": extra}
    for mode in cfg.label_modes:
        n_ = net.copy()
        a_ = adam.copy()
        data = ad.collect_training_set(collected, mode, cfg.detect_granularity)
        rows = [row]
        m = None
        for it in range(cfg.finetune.iterations_per_step):
            a_, losses = ad.finetune(n_, data, new_link, one_pass, a_)
            r, m, extra = eval_all(n_, it + 1, True, losses[0] if losses else float("nan"),
                                   data.label_bit_accuracy)
            rows.append(r)
        out[mode] = rows
        summary[mode] = {"final": m, "extra": extra, "n_examples": len(data),
                         "label_acc": data.label_bit_accuracy}
        log.info("fig3 %s: ser %.5f", mode, m["pre_ecc_ser"])
    return out, summary


def _params(link: ad.Link) -> tuple[float, float]:
    return float(link.state.beta_iq), float(link.state.gamma_nl)


def run_trajectory(cfg: cf.ExperimentConfig, ckpt: Path, finetune_enabled: bool | None = None):
    """Adaptive link per side, finetuned and frozen (figs 4, 5 and custom)."""
    out, summary = {}, {}
    for side in cfg.sides:
        link = make_link(side, cfg.eb_n0_db, cfg.k)
        variants = [("", True), ("_frozen", False)] if cfg.finetune_enabled else [("_frozen", False)]
        for suffix, ft in variants:
            run = ad.run_adaptive_link(load_net(ckpt), cfg.trajectory, cfg.finetune, link,
                                       cfg.effect, cfg.n_steps, cfg.seed, ft,
                                       cfg.label_modes[0], traceback=cfg.traceback)
            out[f"{side}{suffix}"] = run.rows
    return out, summary


def run_fig6(cfg: cf.ExperimentConfig, ckpt: Path):
    """Posterior finetuning of one recording after a parameter jump."""
    link = make_link(cfg.side, cfg.eb_n0_db, cfg.k)
    link = _set_param(link, cfg.effect, cfg.target_value)
    rec = ad.random_frames(cfg.record_frames, link, ad.step_rng(cfg.seed, _RECORD, 0))
    out, summary = {}, {}
    evm = ad.impairment_evm(rec, link)
    for n_theta in sorted({cfg.record_frames, *cfg.n_theta}, reverse=True):
        u_hat, windows = ad.posterior_finetune(load_net(ckpt), rec, n_theta, link, cfg.finetune,
                                               traceback=cfg.traceback)
        frame_ber = np.mean(u_hat != rec.u, axis=1)
        summary[n_theta] = {"post_ecc_ber": float(frame_ber.mean()),
                            "std": float(frame_ber.std(ddof=1) / np.sqrt(len(frame_ber)))}
        st = link.state
        out[f"ntheta{n_theta}"] = [
            ad.MetricsRow(w.window, float(st.beta_iq), float(st.gamma_nl), st.side,
                          w.pre_ecc_ser, float("nan"), w.post_ecc_ber, evm, w.label_acc, True,
                          w.loss) for w in windows]
        log.info("fig6 N_theta=%d: post-ECC BER %.3e", n_theta, summary[n_theta]["post_ecc_ber"])
    return out, summary


def ber_sweep(eb_n0_db, n_bits: int, seed: int) -> list[dict]:
    """Uncoded QPSK over OFDM and AWGN; BER against Q(sqrt(2 Eb/N0))."""
    frames = -(-n_bits // (2 * ofdm.N_FFT))
    rows = []
    for i, db in enumerate(eb_n0_db):
        rng = ad.step_rng(seed, _SWEEP, i)
        bits = rng.integers(0, 2, (frames, 2 * ofdm.N_FFT), dtype=np.uint8)
        sigma2 = sigma2_from_ebn0(db, rate=1.0)
        y = awgn(ofdm.ofdm_modulate(ofdm.qpsk_map(bits)), sigma2, rng)
        ber = float(np.mean(ofdm.qpsk_demap_hard(ofdm.ofdm_demodulate(y, sigma2)) != bits))
        p = float(norm.sf(np.sqrt(2 * 10 ** (db / 10))))
        rows.append({"eb_n0_db": float(db), "ber": ber, "theory": p,
                     "std": float(np.sqrt(p * (1 - p) / bits.size)), "n_bits": bits.size})
    return rows


# --------------------------------------------------------------------------

def _plot(out_dir: Path, files: dict[str, Path], cfg: cf.ExperimentConfig) -> Path:
    x = "time_step"
    series = {}
    for stem, path in files.items():
        series[stem] = plot.read_series(path, x, ["pre_ecc_ser"])["pre_ecc_ser"]
    title = f"{cfg.experiment} seed {cfg.seed}"
    svg = out_dir / f"{cfg.experiment}.svg"
    svg.write_text(plot.render_svg(series, x, "pre-ECC SER", title, logy=True))
    return svg


def run_experiment(cfg: cf.ExperimentConfig) -> Path:
    """Run ``cfg`` and write manifest, metrics CSV files and an SVG to its output directory."""
    cfg.validate()
    out_dir = default_out(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"code_version": code_version(), "csv_schema": CSV_SCHEMA_VERSION,
            "python": platform.python_version(), "numpy": np.__version__}
    files: dict[str, Path] = {}
    summary: dict = {}
    if cfg.experiment == "ber_sweep":
        rows = ber_sweep(cfg.sweep_db, cfg.sweep_bits, cfg.seed)
        path = out_dir / "bersweep.csv"
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, SWEEP_HEADER, lineterminator="\n")
            w.writeheader()
            w.writerows({k: repr(v) if isinstance(v, float) else v for k, v in r.items()}
                        for r in rows)
        series = {"measured": [(r["eb_n0_db"], r["ber"]) for r in rows],
                  "theory": [(r["eb_n0_db"], r["theory"]) for r in rows]}
        (out_dir / "ber_sweep.svg").write_text(
            plot.render_svg(series, "Eb/N0 [dB]", "BER", "uncoded QPSK", logy=True))
        files["bersweep"] = path
    else:
        ckpt = pretrained_checkpoint(cfg)
        meta["checkpoint"] = str(ckpt)
        meta["checkpoint_sha256"] = sha256_file(ckpt)
        if cfg.experiment == "fig3":
            results, summary = run_fig3(cfg, load_net(ckpt))
        elif cfg.experiment == "fig6":
            results, summary = run_fig6(cfg, ckpt)
        else:
            results, summary = run_trajectory(cfg, ckpt)
        for stem, rows in results.items():
            files[stem] = write_metrics(out_dir / f"metrics_{stem}.csv", rows)
        _plot(out_dir, files, cfg)
    lines = [cf.dumps(cfg), "# run metadata\n"]
    lines += [f"# {k} = {v}\n" for k, v in meta.items()]
    lines += [f"# output = {p.name} sha256 {sha256_file(p)}\n" for p in files.values()]
    lines += [f"# summary {k} = {_fmt(v)}\n" for k, v in summary.items()]
    (out_dir / "manifest.txt").write_text("".join(lines))
    return out_dir


def _fmt(v) -> str:
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}: {_fmt(x)}" for k, x in v.items()) + "}"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
