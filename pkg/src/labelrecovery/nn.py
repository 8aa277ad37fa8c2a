"""Small differentiable engine for the residual pre-equalizer receiver.

Only the operations of the receiver graph are supported: dense layers, ReLU,
the residual add, the fixed OFDM receiver tail (CP removal, DFT, MMSE scaling)
and the MSE loss. Values are float64 numpy arrays; a leading batch axis holds
independent frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ofdm

RELU = "relu"
IDENTITY = "identity"

CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """Raised when NaN/Inf shows up in the network state or activations."""


def _require_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {what}")


def relu(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _require_finite(x, "relu input")
    return np.maximum(x, 0.0)


# --------------------------------------------------------------------------
# complex <-> real reshaping

def complex_to_real(z: np.ndarray, layout: str = "interleaved") -> np.ndarray:
    """(..., n) complex -> (..., 2n) real, either [Re0, Im0, Re1, ...] or [Re..., Im...]."""
    z = np.asarray(z)
    if layout == "interleaved":
        out = np.empty(z.shape[:-1] + (2 * z.shape[-1],), dtype=np.float64)
        out[..., 0::2] = z.real
        out[..., 1::2] = z.imag
        return out
    if layout == "block":
        return np.concatenate([z.real, z.imag], axis=-1).astype(np.float64)
    raise ValueError(f"unknown layout {layout!r}")


def real_to_complex(r: np.ndarray, layout: str = "interleaved") -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if layout == "interleaved":
        return r[..., 0::2] + 1j * r[..., 1::2]
    if layout == "block":
        n = r.shape[-1] // 2
        return r[..., :n] + 1j * r[..., n:]
    raise ValueError(f"unknown layout {layout!r}")


# --------------------------------------------------------------------------
# parameters

@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = IDENTITY

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ValueError(
                f"inconsistent layer shapes W{self.weights.shape} b{self.biases.shape}")
        if self.activation not in (RELU, IDENTITY):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


def dense_forward(layer: DenseLayer, v: np.ndarray) -> np.ndarray:
    """activation(W v + b) on the last axis of ``v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != layer.n_in:
        raise ValueError(f"layer expects {layer.n_in} inputs, got {v.shape[-1]}")
    z = v @ layer.weights.T + layer.biases
    return relu(z) if layer.activation == RELU else z


@dataclass
class PreEqNet:
    """Residual pre-equalizer ``y + alpha * f_nn(y)`` acting on one OFDM frame."""

    layers: list[DenseLayer]
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(()))
    train_alpha: bool = True
    layout: str = "interleaved"

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(())
        widths = self.widths
        for prev, layer in zip(self.layers, self.layers[1:]):
            if prev.n_out != layer.n_in:
                raise ValueError(f"layer widths do not chain: {widths}")
        if widths[0] != widths[-1]:
            raise ValueError("residual add needs equal input and output width")

    @classmethod
    def create(cls, rng: np.random.Generator, width: int = 2 * ofdm.FRAME_LEN,
               hidden: int = 256, n_hidden: int = 3, train_alpha: bool = True,
               layout: str = "interleaved") -> "PreEqNet":
        """Glorot-uniform weights, zero biases, alpha = 0."""
        sizes = [width] + [hidden] * n_hidden + [width]
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            limit = np.sqrt(6.0 / (n_in + n_out))
            act = RELU if i < n_hidden else IDENTITY
            layers.append(DenseLayer(rng.uniform(-limit, limit, (n_out, n_in)),
                                     np.zeros(n_out), act))
        return cls(layers, np.zeros(()), train_alpha, layout)

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].n_in] + [l.n_out for l in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order; alpha last when trainable."""
        params = []
        for layer in self.layers:
            params += [layer.weights, layer.biases]
        if self.train_alpha:
            params.append(self.alpha)
        return params

    def parameter_names(self) -> list[str]:
        names = []
        for i in range(len(self.layers)):
            names += [f"W{i}", f"b{i}"]
        if self.train_alpha:
            names.append("alpha")
        return names

    def copy(self) -> "PreEqNet":
        return PreEqNet([DenseLayer(l.weights.copy(), l.biases.copy(), l.activation)
                         for l in self.layers],
                        self.alpha.copy(), self.train_alpha, self.layout)

    def check_finite(self) -> None:
        for name, p in zip(self.parameter_names(), self.parameters()):
            _require_finite(p, name)
        _require_finite(self.alpha, "alpha")


def nn_path(net: PreEqNet, v: np.ndarray) -> np.ndarray:
    for layer in net.layers:
        v = dense_forward(layer, v)
    return v


def preeq_forward(net: PreEqNet, y_time: np.ndarray) -> np.ndarray:
    """Apply ``y + alpha * f_nn(y)`` to (..., 72) complex frames."""
    y_time = np.asarray(y_time)
    if y_time.shape[-1] != ofdm.FRAME_LEN:
        raise ValueError(f"frame must have {ofdm.FRAME_LEN} samples, got {y_time.shape[-1]}")
    if net.alpha == 0.0:
        # y + 0 * f(y) == y exactly; skip the dense stack.
        return y_time.astype(np.complex128, copy=True)
    r = complex_to_real(y_time, net.layout)
    out = r + net.alpha * nn_path(net, r)
    return real_to_complex(out, net.layout)


def receiver_forward(net: PreEqNet, y_time: np.ndarray, noise_var: float,
                     gain=1.0) -> np.ndarray:
    """Pre-equalizer followed by the fixed OFDM receiver; returns (..., 64) symbols."""
    return ofdm.ofdm_demodulate(preeq_forward(net, y_time), noise_var, gain)


def mse_loss(estimated: np.ndarray, label: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean squared error over all real components (Re and Im counted separately).

    With a boolean symbol ``mask`` the mean runs over the selected symbols only.
    """
    estimated = np.asarray(estimated)
    label = np.asarray(label)
    if estimated.shape != label.shape:
        raise ValueError(f"shape mismatch {estimated.shape} vs {label.shape}")
    d = estimated - label
    sq = d.real ** 2 + d.imag ** 2
    if mask is None:
        return float(np.mean(sq) / 2.0)
    n = np.count_nonzero(mask)
    return float(np.sum(sq[mask]) / (2.0 * n)) if n else 0.0


# --------------------------------------------------------------------------
# recorded computation and reverse mode

@dataclass
class ComputationRecord:
    """Ops executed by :func:`trace_receiver` with the values backward needs.

    Each entry is ``(op_name, cache)``. The list is linear: the residual skip
    branch carries no parameters, so only the NN branch is walked backwards.
    """

    net: PreEqNet
    y_time: np.ndarray
    noise_var: float
    gain: complex
    label: np.ndarray | None
    mask: np.ndarray | None = None
    ops: list[tuple[str, dict]] = field(default_factory=list)
    output: np.ndarray | None = None
    loss: float | None = None


def trace_receiver(net: PreEqNet, y_time: np.ndarray, noise_var: float,
                   label: np.ndarray | None = None, gain=1.0,
                   mask: np.ndarray | None = None) -> ComputationRecord:
    """Forward pass through the receiver recording every primitive op.

    The recorded output is bit-identical to :func:`receiver_forward`.
    """
    y_time = np.asarray(y_time, dtype=np.complex128)
    rec = ComputationRecord(net, y_time, noise_var, gain, label, mask)
    r = complex_to_real(y_time, net.layout)
    rec.ops.append(("to_real", {}))
    v = r
    for i, layer in enumerate(net.layers):
        z = v @ layer.weights.T + layer.biases
        rec.ops.append(("dense", {"index": i, "input": v}))
        if layer.activation == RELU:
            rec.ops.append(("relu", {"mask": z > 0}))
            v = np.maximum(z, 0.0)
        else:
            v = z
    _require_finite(v, "pre-equalizer NN output")
    rec.ops.append(("residual", {"branch": v}))
    if net.alpha == 0.0:
        y_eq = y_time.copy()
    else:
        y_eq = real_to_complex(r + net.alpha * v, net.layout)
    rec.ops.append(("to_complex", {}))
    out = ofdm.ofdm_demodulate(y_eq, noise_var, gain)
    rec.ops.append(("receiver_tail", {}))
    rec.output = out
    if label is not None:
        rec.loss = mse_loss(out, label, mask)
        n_reals = 2 * (out.size if mask is None else np.count_nonzero(mask))
        rec.ops.append(("mse", {"n_reals": max(n_reals, 1)}))
    return rec


def replay(rec: ComputationRecord) -> np.ndarray:
    """Re-run the recorded ops on the recorded input."""
    net = rec.net
    r = v = None
    for name, cache in rec.ops:
        if name == "to_real":
            r = v = complex_to_real(rec.y_time, net.layout)
        elif name == "dense":
            layer = net.layers[cache["index"]]
            v = v @ layer.weights.T + layer.biases
        elif name == "relu":
            v = np.maximum(v, 0.0)
        elif name == "residual":
            v = None if net.alpha == 0.0 else r + net.alpha * v
        elif name == "to_complex":
            v = rec.y_time.copy() if v is None else real_to_complex(v, net.layout)
        elif name == "receiver_tail":
            v = ofdm.ofdm_demodulate(v, rec.noise_var, rec.gain)
    return v


def backward(rec: ComputationRecord) -> list[np.ndarray]:
    """Gradients of the recorded loss w.r.t. ``rec.net.parameters()``."""
    if not rec.ops or rec.ops[-1][0] != "mse":
        raise ValueError("record does not end in a scalar loss")
    net = rec.net
    grads_w: dict[int, np.ndarray] = {}
    grads_b: dict[int, np.ndarray] = {}
    grad_alpha = np.zeros(())
    g = None
    for name, cache in reversed(rec.ops):
        if name == "mse":
            d = rec.output - rec.label
            if rec.mask is not None:
                d = np.where(rec.mask, d, 0.0)
            g = d * (2.0 / cache["n_reals"])  # dL/dRe + j dL/dIm
        elif name == "receiver_tail":
            g = ofdm.ofdm_demodulate_adjoint(g, rec.noise_var, rec.gain)
        elif name == "to_complex":
            g = complex_to_real(g, net.layout)
        elif name == "residual":
            branch = cache["branch"]
            grad_alpha = np.asarray(np.sum(g * branch))
            g = net.alpha * g
        elif name == "relu":
            g = g * cache["mask"]
        elif name == "dense":
            i = cache["index"]
            v = cache["input"]
            g2 = g.reshape(-1, g.shape[-1])
            grads_w[i] = g2.T @ v.reshape(-1, v.shape[-1])
            grads_b[i] = g2.sum(axis=0)
            if i > 0:
                g = g @ net.layers[i].weights
        elif name == "to_real":
            pass
        else:  # pragma: no cover
            raise ValueError(f"unknown op {name!r}")
    grads = []
    for i in range(len(net.layers)):
        grads += [grads_w[i], grads_b[i]]
    if net.train_alpha:
        grads.append(grad_alpha.reshape(()))
    for gi in grads:
        _require_finite(gi, "gradient")
    return grads


def loss_and_grads(net: PreEqNet, y_time: np.ndarray, label: np.ndarray,
                   noise_var: float, gain=1.0,
                   mask: np.ndarray | None = None) -> tuple[float, list[np.ndarray]]:
    rec = trace_receiver(net, y_time, noise_var, label, gain, mask)
    return rec.loss, backward(rec)


# --------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: list[np.ndarray], lr: float = 1e-3) -> "AdamState":
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params], 0, lr)

    def copy(self) -> "AdamState":
        return AdamState([m.copy() for m in self.m], [v.copy() for v in self.v], self.t,
                         self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and state lists differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --------------------------------------------------------------------------
# gradient check

def grad_check(net: PreEqNet, frame: np.ndarray, label: np.ndarray, eps: float = 1e-4,
               noise_var: float = 0.1, gain=1.0, n_samples: int = 100,
               rng: np.random.Generator | None = None,
               grads: list[np.ndarray] | None = None,
               entries: list[tuple[int, int]] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``n_samples`` parameter entries are drawn uniformly over all trainable
    entries unless ``entries`` lists ``(parameter index, flat index)`` pairs.
    ``grads`` overrides the analytic gradients (to test the checker).
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    rng = rng if rng is not None else np.random.default_rng(0)
    params = net.parameters()
    if grads is None:
        _, grads = loss_and_grads(net, frame, label, noise_var, gain)
    if entries is None:
        sizes = np.array([p.size for p in params])
        flat_idx = rng.choice(sizes.sum(), size=min(n_samples, sizes.sum()), replace=False)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        ks = np.searchsorted(offsets, flat_idx, side="right") - 1
        entries = [(int(k), int(fi - offsets[k])) for k, fi in zip(ks, flat_idx)]
    worst = 0.0
    for k, j in entries:
        p = params[k].reshape(-1)  # view, also for the 0-d alpha
        orig = p[j]
        p[j] = orig + eps
        lp = mse_loss(receiver_forward(net, frame, noise_var, gain), label)
        p[j] = orig - eps
        lm = mse_loss(receiver_forward(net, frame, noise_var, gain), label)
        p[j] = orig
        cd = (lp - lm) / (2.0 * eps)
        an = float(grads[k].reshape(-1)[j])
        rel = abs(an - cd) / max(abs(an), abs(cd), 1e-12)
        worst = max(worst, rel)
    return worst


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, net: PreEqNet, adam: AdamState | None = None) -> None:
    """Write weights, biases, alpha and optional Adam state to an ``.npz`` file.

    The JSON header records the format version, layer widths and scalars.
    """
    header = {
        "version": CHECKPOINT_VERSION,
        "widths": net.widths,
        "activations": [l.activation for l in net.layers],
        "train_alpha": net.train_alpha,
        "layout": net.layout,
        "adam": None if adam is None else {
            "t": adam.t, "lr": adam.lr, "beta1": adam.beta1,
            "beta2": adam.beta2, "eps": adam.eps},
    }
    arrays = {"header": np.array(json.dumps(header)), "alpha": net.alpha}
    for i, layer in enumerate(net.layers):
        arrays[f"W{i}"] = layer.weights
        arrays[f"b{i}"] = layer.biases
    if adam is not None:
        for i, (m, v) in enumerate(zip(adam.m, adam.v)):
            arrays[f"adam_m{i}"] = m
            arrays[f"adam_v{i}"] = v
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[PreEqNet, AdamState | None]:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        layers = [DenseLayer(data[f"W{i}"], data[f"b{i}"], act)
                  for i, act in enumerate(header["activations"])]
        net = PreEqNet(layers, data["alpha"], header["train_alpha"], header["layout"])
        if net.widths != header["widths"]:
            raise ValueError("checkpoint widths do not match stored arrays")
        adam = None
        if header["adam"] is not None:
            n = len(net.parameters())
            a = header["adam"]
            adam = AdamState([data[f"adam_m{i}"] for i in range(n)],
                             [data[f"adam_v{i}"] for i in range(n)],
                             a["t"], a["lr"], a["beta1"], a["beta2"], a["eps"])
    return net, adam
