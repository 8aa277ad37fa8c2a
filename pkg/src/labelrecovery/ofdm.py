"""Conventional OFDM baseline: QPSK, unitary DFT, cyclic prefix, MMSE."""

from __future__ import annotations

import numpy as np

N_FFT = 64
N_CP = 8
FRAME_LEN = N_FFT + N_CP

_SQRT2 = np.sqrt(2.0)


def qpsk_map(bits: np.ndarray) -> np.ndarray:
    """Map bit pairs (b0, b1) to ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2).

    Works on the last axis, so a (B, 128) bit array becomes (B, 64) symbols.
    """
    bits = np.asarray(bits)
    if bits.shape[-1] % 2:
        raise ValueError(f"QPSK mapping needs an even number of bits, got {bits.shape[-1]}")
    if bits.size and not np.all((bits == 0) | (bits == 1)):
        raise ValueError("bits must be 0 or 1")
    b = bits.astype(np.float64)
    return ((1.0 - 2.0 * b[..., 0::2]) + 1j * (1.0 - 2.0 * b[..., 1::2])) / _SQRT2


def qpsk_demap_hard(symbols: np.ndarray) -> np.ndarray:
    """Sign decisions inverting :func:`qpsk_map`; an exact zero maps to bit 0."""
    symbols = np.asarray(symbols)
    out = np.empty(symbols.shape[:-1] + (2 * symbols.shape[-1],), dtype=np.uint8)
    out[..., 0::2] = symbols.real < 0
    out[..., 1::2] = symbols.imag < 0
    return out


def _check_len(x: np.ndarray, n: int, what: str) -> None:
    if x.shape[-1] != n:
        raise ValueError(f"{what} expects length {n} on the last axis, got {x.shape[-1]}")


def dft(x: np.ndarray) -> np.ndarray:
    """Unitary 64-point DFT along the last axis."""
    x = np.asarray(x)
    _check_len(x, N_FFT, "dft")
    return np.fft.fft(x, axis=-1, norm="ortho")


def idft(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    _check_len(X, N_FFT, "idft")
    return np.fft.ifft(X, axis=-1, norm="ortho")


def add_cp(body: np.ndarray) -> np.ndarray:
    body = np.asarray(body)
    _check_len(body, N_FFT, "add_cp")
    return np.concatenate([body[..., -N_CP:], body], axis=-1)


def remove_cp(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    _check_len(frame, FRAME_LEN, "remove_cp")
    return frame[..., N_CP:]


def mmse_equalize(Y: np.ndarray, H, noise_var: float) -> np.ndarray:
    """Per-subcarrier MMSE: Y * conj(H) / (|H|^2 + noise_var)."""
    if noise_var < 0:
        raise ValueError("noise_var must be non-negative")
    H = np.asarray(H)
    return Y * (np.conj(H) / (np.abs(H) ** 2 + noise_var))


def ofdm_modulate(S: np.ndarray) -> np.ndarray:
    return add_cp(idft(S))


def ofdm_demodulate(frame: np.ndarray, noise_var: float, gain=1.0) -> np.ndarray:
    """CP removal, DFT and MMSE equalization against a known flat channel ``gain``."""
    return mmse_equalize(dft(remove_cp(frame)), gain, noise_var)


def ofdm_demodulate_adjoint(grad: np.ndarray, noise_var: float, gain=1.0) -> np.ndarray:
    """Adjoint of :func:`ofdm_demodulate` as a complex-linear map.

    For a real loss with ``grad = dL/dRe + j dL/dIm`` at the equalized symbols,
    returns the same quantity at the 72 time samples. The CP positions get zero.
    """
    H = np.asarray(gain)
    scale = H / (np.abs(H) ** 2 + noise_var)
    body = np.fft.ifft(grad * scale, axis=-1, norm="ortho")
    out = np.zeros(grad.shape[:-1] + (FRAME_LEN,), dtype=np.complex128)
    out[..., N_CP:] = body
    return out
