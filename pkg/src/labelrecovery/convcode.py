"""Terminated rate-1/2 NSC convolutional code, memory 2, generators 05/07 (octal).

The shift register holds ``[u_t, u_{t-1}, u_{t-2}]``; generator 05 = 101 taps
``u_t`` and ``u_{t-2}``, generator 07 = 111 taps all three. Each input bit
emits the pair (g0, g1) in that order. Two zero tail bits terminate the
trellis in the all-zero state, so ``N = 2 (k + 2)``.

The trellis state after step ``t`` is ``2 * u_t + u_{t-1}``.
"""

from __future__ import annotations

import itertools

import numpy as np

MEMORY = 2
G0 = 0o5
G1 = 0o7
N_STATES = 1 << MEMORY
TRACEBACK = 5 * (MEMORY + 1)
DEFAULT_K = 62
MAX_BRUTEFORCE_K = 14

_BIG = np.iinfo(np.int32).max // 4


def codeword_length(k: int) -> int:
    return 2 * (k + MEMORY)


def info_length(n: int) -> int:
    if n % 2 or n // 2 < MEMORY:
        raise ValueError(f"{n} is not a valid terminated codeword length")
    return n // 2 - MEMORY


def _tap(g: int, u: int, d1: int, d2: int) -> int:
    return ((g >> 2) & u) ^ ((g >> 1) & d1) ^ (g & d2)


# expected output pair for (previous state, input bit); previous state = 2*d1 + d2
_OUT = np.zeros((N_STATES, 2, 2), dtype=np.int32)
for _s in range(N_STATES):
    for _b in range(2):
        _d1, _d2 = _s >> 1, _s & 1
        _OUT[_s, _b] = (_tap(G0, _b, _d1, _d2), _tap(G1, _b, _d1, _d2))


def encode(u: np.ndarray) -> np.ndarray:
    """Encode (..., k) info bits into (..., 2(k+2)) coded bits."""
    u = np.asarray(u)
    if u.size and not np.all((u == 0) | (u == 1)):
        raise ValueError("information bits must be 0 or 1")
    u = u.astype(np.uint8)
    padded = np.concatenate([u, np.zeros(u.shape[:-1] + (MEMORY,), np.uint8)], axis=-1)
    d1 = np.zeros_like(padded)
    d2 = np.zeros_like(padded)
    d1[..., 1:] = padded[..., :-1]
    d2[..., 2:] = padded[..., :-2]
    out = np.empty(u.shape[:-1] + (2 * padded.shape[-1],), dtype=np.uint8)
    out[..., 0::2] = padded ^ d2
    out[..., 1::2] = padded ^ d1 ^ d2
    return out


# re-encoding is plain encoding of the decoder output
reencode = encode


def _acs(received: np.ndarray):
    """Add-compare-select over all steps.

    Returns (per-step survivor predecessor bit, per-step path metrics) with
    shapes (T, B, 4) and (T + 1, B, 4). On equal metrics the predecessor whose
    oldest register bit is 0 wins.
    """
    B = received.shape[0]
    T = received.shape[1] // 2
    r = received.reshape(B, T, 2).astype(np.int32)
    metrics = np.full((T + 1, B, N_STATES), _BIG, dtype=np.int32)
    metrics[0, :, 0] = 0
    choice = np.zeros((T, B, N_STATES), dtype=np.uint8)
    for t in range(T):
        pm = metrics[t]
        rt = r[:, t, :]
        for s_next in range(N_STATES):
            b, d1 = s_next >> 1, s_next & 1
            # predecessors 2*d1 + d2 for d2 in {0, 1}
            cand = []
            for d2 in range(2):
                s_prev = 2 * d1 + d2
                bm = (rt[:, 0] != _OUT[s_prev, b, 0]).astype(np.int32) + \
                     (rt[:, 1] != _OUT[s_prev, b, 1])
                cand.append(pm[:, s_prev] + bm)
            pick1 = cand[1] < cand[0]
            choice[t, :, s_next] = pick1
            metrics[t + 1, :, s_next] = np.where(pick1, cand[1], cand[0])
        if t >= T - MEMORY:
            # tail steps only carry input 0
            metrics[t + 1, :, 2:] = _BIG
    return choice, metrics


def _trace(choice: np.ndarray, state: np.ndarray, t_end: int, t_stop: int) -> np.ndarray:
    """Follow survivors from ``state`` (after step ``t_end - 1``) back to step ``t_stop``.

    Returns the decided input bits for steps ``t_stop .. t_end - 1``, shape (B, t_end - t_stop).
    """
    B = state.shape[0]
    bits = np.empty((B, t_end - t_stop), dtype=np.uint8)
    s = state.copy()
    rows = np.arange(B)
    for t in range(t_end - 1, t_stop - 1, -1):
        bits[:, t - t_stop] = s >> 1
        d2 = choice[t, rows, s]
        s = 2 * (s & 1) + d2
    return bits


def viterbi_decode(received: np.ndarray, traceback: int | None = TRACEBACK) -> np.ndarray:
    """Hard-decision Viterbi decoding of terminated codewords.

    ``received`` is (N,) or (B, N). With a finite ``traceback`` window, the bit
    of step ``t - traceback + 1`` is released after step ``t`` by tracing back
    from the best state (lowest index on ties); the remaining bits are flushed
    from the known all-zero end state. ``traceback=None`` traces the whole
    block from the end state, which is exact maximum likelihood.
    """
    received = np.asarray(received)
    squeeze = received.ndim == 1
    if squeeze:
        received = received[None]
    k = info_length(received.shape[-1])
    T = k + MEMORY
    choice, metrics = _acs(received)
    B = received.shape[0]
    bits = np.zeros((B, T), dtype=np.uint8)
    released = 0
    if traceback is not None:
        if traceback < 1:
            raise ValueError("traceback must be positive")
        for t in range(traceback - 1, T - 1):
            best = np.argmin(metrics[t + 1], axis=1)
            step = t - traceback + 1
            bits[:, step] = _trace(choice, best, t + 1, step)[:, 0]
            released = step + 1
    end = np.zeros(B, dtype=np.int64)
    bits[:, released:] = _trace(choice, end, T, released)
    out = bits[:, :k]
    return out[0] if squeeze else out


def path_metric(received: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Hamming distance between ``encode(u)`` and the received word(s)."""
    return np.sum(encode(u) != np.asarray(received), axis=-1)


def ml_decode_bruteforce(received: np.ndarray, k: int | None = None) -> np.ndarray:
    """Exhaustive ML decoding; ties go to the smallest ``u`` read as an integer (MSB first)."""
    received = np.asarray(received)
    if k is None:
        k = info_length(received.shape[-1])
    if k > MAX_BRUTEFORCE_K:
        raise ValueError(f"brute force limited to k <= {MAX_BRUTEFORCE_K}, got {k}")
    if codeword_length(k) != received.shape[-1]:
        raise ValueError("received length does not match k")
    words = all_info_words(k)
    dist = np.sum(encode(words) != received, axis=-1)
    return words[int(np.argmin(dist))]


def all_info_words(k: int) -> np.ndarray:
    """All 2^k words, row i is i written MSB first."""
    return np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.uint8).reshape(-1, k)


def free_distance(k: int = 12) -> int:
    words = all_info_words(k)[1:]
    return int(encode(words).sum(axis=-1).min())
