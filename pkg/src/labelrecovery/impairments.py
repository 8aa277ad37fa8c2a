"""Hardware impairments, AWGN, parameter drift and EVM."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TX = "tx"
RX = "rx"
BOTH = "both"
SIDES = (TX, RX, BOTH)

CODE_RATE = 0.5
BITS_PER_SYMBOL = 2

NOMINAL_BETA = 0.5
NOMINAL_GAMMA = 0.0


def iq_imbalance(x: np.ndarray, beta: float) -> np.ndarray:
    """``beta * Re(x) + (1 - beta) * j * Im(x)``.

    At ``beta = 0.5`` this is exactly ``0.5 * x``.
    """
    x = np.asarray(x, dtype=np.complex128)
    return beta * x.real + 1j * ((1.0 - beta) * x.imag)


def clip(x: np.ndarray, limit: float = 1.0) -> np.ndarray:
    """Clip magnitudes to ``limit`` keeping the phase."""
    x = np.asarray(x, dtype=np.complex128)
    mag = np.abs(x)
    scale = np.where(mag > limit, limit / np.where(mag > 0, mag, 1.0), 1.0)
    return x * scale


def nonlinearity(x: np.ndarray, gamma: float, normalize: str | float | None = "peak") -> np.ndarray:
    """Third-order AM-AM distortion ``x - gamma |x|^2 x`` after clipping to ``|x| <= 1``.

    ``normalize`` picks the reference amplitude: ``"peak"`` scales each frame
    (last axis) by its peak magnitude before the non-linearity and undoes the
    scaling afterwards; a float is a fixed reference amplitude; ``None`` applies
    the function to ``x`` as is.
    """
    x = np.asarray(x, dtype=np.complex128)
    if normalize is None:
        ref = np.ones(x.shape[:-1] + (1,)) if x.ndim else np.float64(1.0)
    elif normalize == "peak":
        ref = np.max(np.abs(x), axis=-1, keepdims=True)
        ref = np.where(ref > 0, ref, 1.0)
    else:
        ref = float(normalize)
        if ref <= 0:
            raise ValueError("normalization amplitude must be positive")
    xn = clip(x / ref)
    return (xn - gamma * np.abs(xn) ** 2 * xn) * ref


def sigma2_from_ebn0(eb_n0_db: float, rate: float = CODE_RATE,
                     bits_per_symbol: int = BITS_PER_SYMBOL) -> float:
    """Complex noise variance for unit symbol energy."""
    return 1.0 / (rate * bits_per_symbol * 10.0 ** (eb_n0_db / 10.0))


def awgn(x: np.ndarray, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Add circularly symmetric complex Gaussian noise of total variance ``sigma2``."""
    if sigma2 < 0:
        raise ValueError("noise variance must be non-negative")
    x = np.asarray(x, dtype=np.complex128)
    if sigma2 == 0:
        return x.copy()
    std = np.sqrt(sigma2 / 2.0)
    return x + std * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))


def evm(ideal: np.ndarray, distorted: np.ndarray) -> float:
    """RMS error vector normalized by the RMS of ``ideal`` (ratio, not percent)."""
    ideal = np.asarray(ideal)
    distorted = np.asarray(distorted)
    if ideal.shape != distorted.shape:
        raise ValueError("evm needs equal shapes")
    p = np.mean(np.abs(ideal) ** 2)
    if p == 0:
        raise ValueError("ideal signal has zero power")
    return float(np.sqrt(np.mean(np.abs(distorted - ideal) ** 2) / p))


@dataclass
class ImpairmentState:
    """Current impairment parameters and where they act.

    The IQ block is present at each impaired side; at the balanced point
    ``beta = 0.5`` it is a plain 0.5 gain which the receiver knows about.
    """

    beta_iq: float = NOMINAL_BETA
    gamma_nl: float = NOMINAL_GAMMA
    side: str = TX
    nl_normalize: str | float | None = "peak"

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got {self.side!r}")

    def sides(self) -> tuple[str, ...]:
        return (TX, RX) if self.side == BOTH else (self.side,)

    def apply(self, x: np.ndarray, where: str) -> np.ndarray:
        if where not in self.sides():
            return x
        return nonlinearity(iq_imbalance(x, self.beta_iq), self.gamma_nl, self.nl_normalize)

    @property
    def nominal_gain(self) -> float:
        """End-to-end gain of the impairment chain at the design point."""
        return NOMINAL_BETA ** len(self.sides())

    @property
    def tx_nominal_gain(self) -> float:
        return NOMINAL_BETA if TX in self.sides() else 1.0

    def replace(self, **kw) -> "ImpairmentState":
        d = dict(beta_iq=self.beta_iq, gamma_nl=self.gamma_nl, side=self.side,
                 nl_normalize=self.nl_normalize)
        d.update(kw)
        return ImpairmentState(**d)


@dataclass
class NoiseSpec:
    """Eb/N0 operating point; ``sigma2`` is the variance relative to unit received symbol energy."""

    eb_n0_db: float

    @property
    def sigma2(self) -> float:
        return sigma2_from_ebn0(self.eb_n0_db)


SCRIPTED = "scripted"
RANDOM_WALK = "random_walk"


@dataclass
class Trajectory:
    """Time evolution of one impairment parameter.

    Scripted mode holds ``(time_step, value)`` breakpoints; the value is held
    (stepwise) between breakpoints unless ``interpolate`` is set. Random-walk
    mode adds ``N(0, step_std^2)`` per step and reflects into ``[lo, hi]``.
    """

    mode: str = SCRIPTED
    points: list[tuple[int, float]] = field(default_factory=list)
    interpolate: bool = False
    start: float = NOMINAL_BETA
    step_std: float = 0.01
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.mode not in (SCRIPTED, RANDOM_WALK):
            raise ValueError(f"unknown trajectory mode {self.mode!r}")
        times = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("scripted breakpoints must be strictly increasing in time")
        if self.mode == SCRIPTED and not self.points:
            raise ValueError("scripted trajectory needs at least one breakpoint")
        if self.lo > self.hi:
            raise ValueError("lo must not exceed hi")

    def value_at(self, t: int) -> float:
        times = np.array([p[0] for p in self.points], dtype=float)
        vals = np.array([p[1] for p in self.points], dtype=float)
        if self.interpolate:
            return float(np.interp(t, times, vals))
        i = np.searchsorted(times, t, side="right") - 1
        return float(vals[max(i, 0)])

    def initial(self) -> float:
        return self.value_at(0) if self.mode == SCRIPTED else self.start

    def series(self, n_steps: int, rng: np.random.Generator | None = None) -> list[float]:
        """Parameter value for time steps ``0 .. n_steps - 1``."""
        v = self.initial()
        out = [v]
        for t in range(1, n_steps):
            v = random_walk_step(v, self, rng, t)
            out.append(v)
        return out

    @classmethod
    def from_file(cls, path, interpolate: bool = False) -> "Trajectory":
        return cls.from_text(Path(path).read_text(), interpolate)

    @classmethod
    def from_text(cls, text: str, interpolate: bool = False) -> "Trajectory":
        points = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 't value', got {line!r}")
            points.append((int(parts[0]), float(parts[1])))
        return cls(SCRIPTED, points, interpolate)

    def to_text(self) -> str:
        return "".join(f"{t} {v!r}\n" for t, v in self.points)


def reflect(v: float, lo: float, hi: float) -> float:
    if lo == hi:
        return lo
    span = hi - lo
    y = (v - lo) % (2 * span)
    return lo + (y if y <= span else 2 * span - y)


def random_walk_step(value: float, traj: Trajectory, rng: np.random.Generator | None,
                     t: int | None = None) -> float:
    """Advance the parameter by one time step; ``t`` is the new time index (scripted mode)."""
    if traj.mode == SCRIPTED:
        if t is None:
            raise ValueError("scripted trajectories need the time step")
        return traj.value_at(t)
    if traj.step_std == 0:
        return value
    if rng is None:
        raise ValueError("random walk needs an rng")
    return reflect(value + traj.step_std * rng.standard_normal(), traj.lo, traj.hi)
