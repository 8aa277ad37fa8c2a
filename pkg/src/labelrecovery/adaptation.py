"""Online finetuning of the pre-equalizer from labels recovered by the channel code."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import convcode, nn, ofdm
from .impairments import (NOMINAL_BETA, RX, TX, ImpairmentState, NoiseSpec, Trajectory,
                          awgn, evm, random_walk_step)

log = logging.getLogger(__name__)

CORRUPTED = "corrupted"
DETECT_ONLY = "detect_only"
ECC_CORRECTED = "ecc_corrected"
GENIE = "genie"
LABEL_MODES = (CORRUPTED, DETECT_ONLY, ECC_CORRECTED, GENIE)

PERIODIC = "periodic"
BER_THRESHOLD = "ber_threshold"

CHUNK = 2000


@dataclass
class FinetuneConfig:
    iterations_per_step: int = 7
    frames_per_step: int = 5000
    batch_size: int = 1000
    lr: float = 1e-3
    trigger: str = PERIODIC
    ber_threshold: float = 0.05
    # False: one Adam step per mini-batch instead of per pass over the set
    accumulate: bool = True

    def __post_init__(self):
        if self.iterations_per_step < 1:
            raise ValueError("iterations_per_step must be at least 1")
        if self.batch_size < 1 or self.frames_per_step < 1:
            raise ValueError("batch and step sizes must be positive")
        if self.trigger not in (PERIODIC, BER_THRESHOLD):
            raise ValueError(f"unknown trigger {self.trigger!r}")


@dataclass
class Link:
    """Static description of the simulated link at one operating point."""

    state: ImpairmentState
    noise: NoiseSpec
    k: int = convcode.DEFAULT_K

    def __post_init__(self):
        if 2 * ofdm.N_FFT != convcode.codeword_length(self.k):
            raise ValueError(
                f"k={self.k} does not fill one OFDM symbol; use k={ofdm.N_FFT - convcode.MEMORY}")

    @property
    def channel_sigma2(self) -> float:
        # Eb/N0 is referenced to the nominal signal energy on the wire.
        return self.noise.sigma2 * self.state.tx_nominal_gain ** 2

    @property
    def rx_gain(self) -> float:
        return self.state.nominal_gain

    @property
    def rx_noise_var(self) -> float:
        return self.noise.sigma2 * self.rx_gain ** 2

    def with_state(self, state: ImpairmentState) -> "Link":
        return Link(state, self.noise, self.k)


@dataclass
class FrameBatch:
    """Per-frame signals of a block of frames, one row per frame.

    ``u``, ``x`` and ``S`` are the transmitter truth; ``x_tilde``, ``u_hat``,
    ``x_hat`` and ``s_hat`` are filled in by :func:`receive_and_decode`.
    """

    y: np.ndarray
    u: np.ndarray | None = None
    x: np.ndarray | None = None
    S: np.ndarray | None = None
    tx: np.ndarray | None = None
    rx_in: np.ndarray | None = None
    s_hat: np.ndarray | None = None
    x_tilde: np.ndarray | None = None
    u_hat: np.ndarray | None = None
    x_hat: np.ndarray | None = None

    def __len__(self) -> int:
        return self.y.shape[0]

    def subset(self, idx) -> "FrameBatch":
        return FrameBatch(**{k: (None if v is None else v[idx])
                             for k, v in self.__dict__.items()})

    def without_truth(self) -> "FrameBatch":
        return FrameBatch(self.y, s_hat=self.s_hat, x_tilde=self.x_tilde,
                          u_hat=self.u_hat, x_hat=self.x_hat)


def transmit_frames(u: np.ndarray, link: Link, rng: np.random.Generator) -> FrameBatch:
    """Encode, map, modulate, impair and add noise; returns the received frames."""
    x = convcode.encode(u)
    S = ofdm.qpsk_map(x)
    tx = link.state.apply(ofdm.ofdm_modulate(S), TX)
    rx_in = awgn(tx, link.channel_sigma2, rng)
    y = link.state.apply(rx_in, RX)
    return FrameBatch(y=y, u=np.asarray(u, dtype=np.uint8), x=x, S=S, tx=tx, rx_in=rx_in)


def random_frames(n: int, link: Link, rng: np.random.Generator) -> FrameBatch:
    return transmit_frames(rng.integers(0, 2, (n, link.k), dtype=np.uint8), link, rng)


def receive_and_decode(net: nn.PreEqNet, batch: FrameBatch, link: Link,
                       traceback: int | None = convcode.TRACEBACK) -> FrameBatch:
    """Run the receiver on ``batch.y`` and fill in its decisions (in place, also returned)."""
    n = len(batch)
    s_hat = np.empty((n, ofdm.N_FFT), dtype=np.complex128)
    for lo in range(0, n, CHUNK):
        s_hat[lo:lo + CHUNK] = nn.receiver_forward(net, batch.y[lo:lo + CHUNK],
                                                   link.rx_noise_var, link.rx_gain)
    batch.s_hat = s_hat
    batch.x_tilde = ofdm.qpsk_demap_hard(s_hat)
    batch.u_hat = convcode.viterbi_decode(batch.x_tilde, traceback)
    batch.x_hat = convcode.reencode(batch.u_hat)
    return batch


# --------------------------------------------------------------------------
# training sets

@dataclass
class TrainingSet:
    """Pre-equalizer inputs with the symbol labels they are trained against.

    ``mask`` (frames x 64, optional) selects the symbols that enter the loss.
    ``truth`` is carried for metrics only.
    """

    y: np.ndarray
    label_codewords: np.ndarray
    truth: np.ndarray | None = None
    mode: str = ECC_CORRECTED
    n_offered: int = 0
    mask: np.ndarray | None = None

    @property
    def label_symbols(self) -> np.ndarray:
        return ofdm.qpsk_map(self.label_codewords)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def n_symbols(self) -> int:
        return int(self.y.shape[0] * ofdm.N_FFT if self.mask is None
                   else np.count_nonzero(self.mask))

    @property
    def label_bit_accuracy(self) -> float:
        if self.truth is None or not self.n_symbols:
            return float("nan")
        eq = self.label_codewords == self.truth
        if self.mask is not None:
            eq = eq[np.repeat(self.mask, 2, axis=1)]
        return float(np.mean(eq))

    def without_truth(self) -> "TrainingSet":
        return TrainingSet(self.y, self.label_codewords, None, self.mode, self.n_offered, self.mask)


def collect_training_set(batch: FrameBatch, mode: str, granularity: str = "frame") -> TrainingSet:
    """Assemble labels according to ``mode``.

    ``detect_only`` models an ideal error detector that flags wrong hard
    decisions without correcting them. With ``granularity="frame"`` (a
    CRC-like check per codeword) every frame containing an error is dropped;
    with ``"symbol"`` only the wrong QPSK symbols are masked out of the loss. ``genie`` uses the transmitted
    codeword itself.
    """
    if mode not in LABEL_MODES:
        raise ValueError(f"unknown label mode {mode!r}")
    y = batch.y
    truth = batch.x
    mask = None
    if mode == CORRUPTED:
        labels = batch.x_tilde
    elif mode == ECC_CORRECTED:
        labels = batch.x_hat
    elif mode == GENIE:
        labels = batch.x
    else:
        if batch.x is None:
            raise ValueError("detect-only labels need the error detector's verdict")
        ok = np.all((batch.x_tilde == batch.x).reshape(len(batch), -1, 2), axis=-1)
        labels = batch.x_tilde
        if granularity == "frame":
            keep = ok.all(axis=1)
            y, labels, truth = y[keep], labels[keep], truth[keep]
            if not keep.any():
                log.warning("detect-only: no error-free frame among %d", len(batch))
        elif granularity == "symbol":
            mask = ok
            if not ok.any():
                log.warning("detect-only: no correct symbol among %d frames", len(batch))
        else:
            raise ValueError(f"unknown granularity {granularity!r}")
    if labels is None:
        raise ValueError(f"frames lack the data needed for {mode!r} labels")
    return TrainingSet(y, labels, truth, mode, len(batch), mask)


# --------------------------------------------------------------------------
# finetuning

def _chunks(data: TrainingSet, batch_size: int):
    for lo in range(0, len(data), batch_size):
        sl = slice(lo, lo + batch_size)
        yield sl, (None if data.mask is None else data.mask[sl])


def accumulated_grads(net: nn.PreEqNet, data: TrainingSet, link: Link,
                      batch_size: int) -> tuple[float, list[np.ndarray]]:
    """Mean loss and gradient over the full set, reduced in frame order."""
    total = [np.zeros_like(p) for p in net.parameters()]
    loss = 0.0
    labels = data.label_symbols
    n = data.n_symbols
    if n == 0:
        return 0.0, total
    for sl, mask in _chunks(data, batch_size):
        part = data.y[sl].shape[0] * ofdm.N_FFT if mask is None else np.count_nonzero(mask)
        if not part:
            continue
        l, g = nn.loss_and_grads(net, data.y[sl], labels[sl], link.rx_noise_var,
                                 link.rx_gain, mask)
        w = part / n
        loss += w * l
        for t, gi in zip(total, g):
            t += w * gi
    return loss, total


def finetune(net: nn.PreEqNet, data: TrainingSet, link: Link, cfg: FinetuneConfig,
             adam: nn.AdamState | None = None) -> tuple[nn.AdamState, list[float]]:
    """``cfg.iterations_per_step`` passes over the set.

    With ``cfg.accumulate`` each pass is one Adam step on the gradient of the
    whole set; otherwise every mini-batch takes its own step. Updates ``net``
    in place and returns the optimizer state and the mean loss of each pass.
    """
    if adam is None:
        adam = nn.AdamState.zeros_like(net.parameters(), cfg.lr)
    if not data.n_symbols:
        log.warning("empty training set, skipping finetune")
        return adam, []
    losses = []
    labels = data.label_symbols
    for _ in range(cfg.iterations_per_step):
        if cfg.accumulate:
            loss, grads = accumulated_grads(net, data, link, cfg.batch_size)
            nn.adam_step(net.parameters(), grads, adam)
        else:
            loss = 0.0
            for sl, mask in _chunks(data, cfg.batch_size):
                part = data.y[sl].shape[0] * ofdm.N_FFT if mask is None else np.count_nonzero(mask)
                if not part:
                    continue
                l, grads = nn.loss_and_grads(net, data.y[sl], labels[sl], link.rx_noise_var,
                                             link.rx_gain, mask)
                loss += l * part / data.n_symbols
                nn.adam_step(net.parameters(), grads, adam)
        losses.append(loss)
    net.check_finite()
    return adam, losses


def should_trigger(cfg: FinetuneConfig, pre_ecc_ber_estimate: float) -> bool:
    if cfg.trigger == PERIODIC:
        return True
    return pre_ecc_ber_estimate > cfg.ber_threshold


# --------------------------------------------------------------------------
# metrics

@dataclass
class MetricsRow:
    time_step: int
    param_beta: float
    param_gamma: float
    side: str
    pre_ecc_ser: float
    pre_ecc_ber: float
    post_ecc_ber: float
    evm: float
    label_acc: float
    finetune: bool
    loss: float


def symbol_errors(batch: FrameBatch) -> np.ndarray:
    """Boolean (frames, symbols) array of pre-ECC symbol decision errors."""
    return np.any(batch.x_tilde.reshape(len(batch), -1, 2) !=
                  batch.x.reshape(len(batch), -1, 2), axis=-1)


def frame_metrics(batch: FrameBatch) -> dict:
    sym_err = symbol_errors(batch)
    return {
        "pre_ecc_ser": float(sym_err.mean()),
        "pre_ecc_ber": float(np.mean(batch.x_tilde != batch.x)),
        "post_ecc_ber": float(np.mean(batch.u_hat != batch.u)),
        "label_acc": float(np.mean(batch.x_hat == batch.x)),
        "label_acc_pre": float(np.mean(batch.x_tilde == batch.x)),
    }


def impairment_evm(batch: FrameBatch, link: Link) -> float:
    """EVM added by the impairment block at the impaired side.

    TX side: transmit signal against the ideal signal at nominal gain. RX side:
    RX block output against its input at nominal gain (noise cancels out).
    With both sides impaired the TX figure is reported.
    """
    sides = link.state.sides()
    if TX in sides:
        return evm(ofdm.ofdm_modulate(batch.S) * link.state.tx_nominal_gain, batch.tx)
    return evm(batch.rx_in * NOMINAL_BETA, batch.y)


def ser_std(ser: float, n_symbols: int) -> float:
    return float(np.sqrt(max(ser * (1 - ser), 1e-12) / n_symbols))


# --------------------------------------------------------------------------
# initial training with genie labels

@dataclass
class PretrainConfig:
    beta_range: tuple[float, float] = (0.3, 0.7)
    gamma_range: tuple[float, float] = (0.0, 0.1)
    snr_db: tuple[float, ...] = (10.0, 14.0)
    sides: tuple[str, ...] = (TX, RX)
    steps: int = 20_000
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 1


def pretrain_batch(cfg: PretrainConfig, k: int, rng: np.random.Generator):
    """One genie-labelled batch: side and SNR drawn per batch, impairments per frame."""
    n = cfg.batch_size
    side = cfg.sides[rng.integers(len(cfg.sides))]
    snr = float(cfg.snr_db[rng.integers(len(cfg.snr_db))])
    state = ImpairmentState(beta_iq=rng.uniform(*cfg.beta_range, size=(n, 1)),
                            gamma_nl=rng.uniform(*cfg.gamma_range, size=(n, 1)),
                            side=side)
    link = Link(state, NoiseSpec(snr), k)
    batch = random_frames(n, link, rng)
    return TrainingSet(batch.y, batch.x, batch.x, GENIE, n), link


def initial_training(net: nn.PreEqNet, cfg: PretrainConfig, k: int = convcode.DEFAULT_K,
                     adam: nn.AdamState | None = None, progress=None) -> nn.AdamState:
    """Genie-label training over a range of impairments (updates ``net`` in place)."""
    rng = np.random.default_rng(cfg.seed)
    if adam is None:
        adam = nn.AdamState.zeros_like(net.parameters(), cfg.lr)
    for step in range(cfg.steps):
        data, link = pretrain_batch(cfg, k, rng)
        loss, grads = accumulated_grads(net, data, link, cfg.batch_size)
        nn.adam_step(net.parameters(), grads, adam)
        if progress is not None:
            progress(step, loss, net)
    net.check_finite()
    return adam


# --------------------------------------------------------------------------
# adaptive link and posterior finetuning

def step_rng(seed: int, stream: int, step: int) -> np.random.Generator:
    """Independent generator per (seed, stream, time step)."""
    return np.random.default_rng([seed, stream, step])


@dataclass
class AdaptiveRun:
    rows: list[MetricsRow]
    net: nn.PreEqNet
    adam: nn.AdamState
    decoded: list[np.ndarray] = field(default_factory=list)
    errors: list[np.ndarray] = field(default_factory=list)


def _state_for(base: ImpairmentState, effect: str, value: float) -> ImpairmentState:
    if effect == "beta":
        return base.replace(beta_iq=value)
    if effect == "gamma":
        return base.replace(gamma_nl=value)
    raise ValueError(f"unknown effect {effect!r}")


def run_adaptive_link(net: nn.PreEqNet, traj: Trajectory, cfg: FinetuneConfig, link: Link,
                      effect: str = "beta", n_steps: int = 10, seed: int = 1,
                      finetune_enabled: bool = True, mode: str = ECC_CORRECTED,
                      adam: nn.AdamState | None = None, collect_metrics: bool = True,
                      keep_decoded: bool = False, keep_errors: bool = False,
                      traceback: int | None = convcode.TRACEBACK) -> AdaptiveRun:
    """Simulate ``n_steps`` time steps of drift with periodic self-labelled finetuning.

    Each step: set the impairment parameter, send ``cfg.frames_per_step``
    frames through the current receiver, record metrics, then finetune on
    labels recovered from those frames. ``net`` is updated in place. With
    ``collect_metrics=False`` the transmitted truth is discarded right after
    transmission and the metric fields are NaN.
    """
    if adam is None:
        adam = nn.AdamState.zeros_like(net.parameters(), cfg.lr)
    walk_rng = step_rng(seed, 2, 0)
    value = traj.initial()
    rows, decoded, errors = [], [], []
    for t in range(n_steps):
        if t > 0:
            value = random_walk_step(value, traj, walk_rng, t)
        step_link = link.with_state(_state_for(link.state, effect, value))
        batch = random_frames(cfg.frames_per_step, step_link, step_rng(seed, 0, t))
        truth = batch
        if not collect_metrics:
            batch = batch.without_truth()
        receive_and_decode(net, batch, step_link, traceback)
        if batch is not truth:
            truth.s_hat, truth.x_tilde = batch.s_hat, batch.x_tilde
            truth.u_hat, truth.x_hat = batch.u_hat, batch.x_hat
        if keep_decoded:
            decoded.append(batch.u_hat.copy())
        if keep_errors and collect_metrics:
            errors.append(symbol_errors(truth))
        if mode in (DETECT_ONLY, GENIE):
            data = collect_training_set(truth, mode)
        else:
            data = collect_training_set(batch.without_truth(), mode)
        est_ber = float(np.mean(batch.x_tilde != batch.x_hat))
        do_update = finetune_enabled and should_trigger(cfg, est_ber)
        losses = []
        if do_update:
            adam, losses = finetune(net, data, step_link, cfg, adam)
        if collect_metrics:
            m = frame_metrics(truth)
            ev = impairment_evm(truth, step_link)
        else:
            m = dict.fromkeys(("pre_ecc_ser", "pre_ecc_ber", "post_ecc_ber", "label_acc"),
                              float("nan"))
            ev = float("nan")
        st = step_link.state
        rows.append(MetricsRow(t, float(st.beta_iq), float(st.gamma_nl), st.side,
                               m["pre_ecc_ser"], m["pre_ecc_ber"], m["post_ecc_ber"], ev,
                               m["label_acc"], do_update,
                               losses[0] if losses else float("nan")))
        log.info("t=%d %s=%.3f ser=%.5f ber=%.2e finetune=%s", t, effect, value,
                 m["pre_ecc_ser"], m["post_ecc_ber"], do_update)
    return AdaptiveRun(rows, net, adam, decoded, errors)


@dataclass
class WindowResult:
    window: int
    pre_ecc_ser: float
    post_ecc_ber: float
    label_acc: float
    loss: float


def posterior_finetune(net: nn.PreEqNet, recording: FrameBatch, n_theta: int, link: Link,
                       cfg: FinetuneConfig, adam: nn.AdamState | None = None,
                       redecode: bool = False,
                       traceback: int | None = convcode.TRACEBACK
                       ) -> tuple[np.ndarray, list[WindowResult]]:
    """Windowed decoding of a recorded sequence with weight updates between windows.

    Window ``j`` is decoded with the weights available at its start, then the
    weights are finetuned on its ECC-recovered labels before window ``j + 1``.
    With ``redecode`` the window is decoded again after its own update and
    those decisions are emitted instead. Metrics need the recording's truth
    (``recording.x``/``u``); without it they are NaN. ``net`` is updated in place.
    """
    n = len(recording)
    if n_theta < 1 or n % n_theta:
        raise ValueError(f"recording of {n} frames is not a multiple of N_theta={n_theta}")
    if adam is None:
        adam = nn.AdamState.zeros_like(net.parameters(), cfg.lr)
    decisions = []
    results = []
    for j in range(n // n_theta):
        window = recording.subset(slice(j * n_theta, (j + 1) * n_theta))
        blind = window.without_truth()
        receive_and_decode(net, blind, link, traceback)
        data = collect_training_set(blind, ECC_CORRECTED)
        adam, losses = finetune(net, data, link, cfg, adam)
        if redecode:
            receive_and_decode(net, blind, link, traceback)
        decisions.append(blind.u_hat)
        if window.x is not None:
            window.x_tilde, window.u_hat, window.x_hat = blind.x_tilde, blind.u_hat, blind.x_hat
            m = frame_metrics(window)
            results.append(WindowResult(j, m["pre_ecc_ser"], m["post_ecc_ber"], m["label_acc"],
                                        losses[0] if losses else float("nan")))
        else:
            results.append(WindowResult(j, float("nan"), float("nan"), float("nan"),
                                        losses[0] if losses else float("nan")))
    return np.concatenate(decisions), results
