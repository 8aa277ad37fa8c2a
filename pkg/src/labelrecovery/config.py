"""Experiment configuration as line-oriented ``section.key = value`` text.

Every key has a default; a config file only lists what it changes. The dumped
form of a config is embedded verbatim in each run's manifest.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .adaptation import ECC_CORRECTED, LABEL_MODES, FinetuneConfig, PretrainConfig
from .impairments import SIDES, TX, Trajectory

EXPERIMENTS = ("fig3", "fig4", "fig5", "fig6", "ber_sweep", "custom")
EFFECTS = ("beta", "gamma")


class ConfigError(ValueError):
    """Invalid configuration text or values."""


@dataclass
class ExperimentConfig:
    experiment: str = "custom"
    seed: int = 1
    eb_n0_db: float = 10.0
    side: str = TX
    sides: tuple[str, ...] = (TX,)
    effect: str = "beta"
    k: int = 62
    n_steps: int = 10
    eval_frames: int = 20_000
    label_modes: tuple[str, ...] = (ECC_CORRECTED,)
    finetune_enabled: bool = True
    n_theta: tuple[int, ...] = ()
    traceback: int | None = 15
    # fig3: genie warm-up at warm_value, then a jump to target_value
    warm_value: float = 0.45
    warm_steps: int = 20
    warm_frames: int = 5_000
    detect_granularity: str = "frame"
    target_value: float = 0.65
    extra_eval_db: tuple[float, ...] = ()
    # fig6 recording length (frames)
    record_frames: int = 10_000
    sweep_db: tuple[float, ...] = (0.0, 2.0, 4.0, 6.0, 8.0)
    sweep_bits: int = 1_000_000
    trajectory: Trajectory = field(
        default_factory=lambda: Trajectory("scripted", [(0, 0.5)]))
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    checkpoint: str = ""
    out: str = ""

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        if self.effect not in EFFECTS:
            raise ConfigError(f"effect must be one of {EFFECTS}")
        for s in (self.side, *self.sides):
            if s not in SIDES:
                raise ConfigError(f"side must be one of {SIDES}, got {s!r}")
        for m in self.label_modes:
            if m not in LABEL_MODES:
                raise ConfigError(f"unknown label mode {m!r}")
        if self.detect_granularity not in ("frame", "symbol"):
            raise ConfigError("detect_granularity must be 'frame' or 'symbol'")
        if any(n < 1 for n in self.n_theta):
            raise ConfigError("window sizes must be positive")
        if any(self.record_frames % n for n in self.n_theta):
            raise ConfigError("record_frames must be a multiple of every window size")
        if self.n_steps < 1 or self.eval_frames < 1:
            raise ConfigError("n_steps and eval_frames must be positive")
        return self


def _encode(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, (tuple, list)):
        return ",".join(_encode(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _flatten(cfg: ExperimentConfig) -> dict[str, str]:
    out: dict[str, str] = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "trajectory":
            out["trajectory.mode"] = v.mode
            out["trajectory.points"] = ";".join(f"{t}:{x!r}" for t, x in v.points)
            for key in ("interpolate", "start", "step_std", "lo", "hi"):
                out[f"trajectory.{key}"] = _encode(getattr(v, key))
        elif dataclasses.is_dataclass(v):
            for sub in dataclasses.fields(v):
                out[f"{f.name}.{sub.name}"] = _encode(getattr(v, sub.name))
        else:
            out[f.name] = _encode(v)
    return out


def dumps(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in _flatten(cfg).items())


def _coerce(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"not a boolean: {text!r}")
        return text.lower() in ("true", "1", "yes")
    if isinstance(like, tuple):
        if not text:
            return ()
        items = [s.strip() for s in text.split(",")]
        proto = like[0] if like else None
        if isinstance(proto, (int, float)) and not isinstance(proto, bool):
            return tuple(type(proto)(s) for s in items)
        try:
            return tuple(int(s) for s in items)
        except ValueError:
            try:
                return tuple(float(s) for s in items)
            except ValueError:
                return tuple(items)
    if like is None or isinstance(like, int) and not isinstance(like, bool):
        if text.lower() == "none":
            return None
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def _set(cfg: ExperimentConfig, key: str, value: str) -> None:
    try:
        if key == "trajectory.points":
            pts = []
            for item in filter(None, (s.strip() for s in value.split(";"))):
                t, v = item.split(":")
                pts.append((int(t), float(v)))
            cfg.trajectory = dataclasses.replace(cfg.trajectory, points=pts)
            return
        if "." in key:
            section, name = key.split(".", 1)
            obj = getattr(cfg, section, None)
            if obj is None or not dataclasses.is_dataclass(obj) or not hasattr(obj, name):
                raise ConfigError(f"unknown key {key!r}")
            new = _coerce(value, getattr(obj, name))
            setattr(cfg, section, dataclasses.replace(obj, **{name: new}))
            return
        if not hasattr(cfg, key) or dataclasses.is_dataclass(getattr(cfg, key)):
            raise ConfigError(f"unknown key {key!r}")
        like = getattr(cfg, key)
        if key == "traceback":
            like = 0
        setattr(cfg, key, _coerce(value, like))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from exc


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        _set(cfg, key, value)
    return cfg.validate()


def load(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return loads(Path(path).read_text(), base)


def to_json(cfg: ExperimentConfig) -> str:
    return json.dumps(_flatten(cfg), sort_keys=True)
