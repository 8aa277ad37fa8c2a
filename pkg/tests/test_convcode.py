import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labelrecovery import convcode as cc


def test_encode_hand_trace():
    # register [u, d1, d2]: g0 = u ^ d2, g1 = u ^ d1 ^ d2
    np.testing.assert_array_equal(cc.encode([1, 0, 0]), [1, 1, 0, 1, 1, 1, 0, 0, 0, 0])


def test_encode_zero_and_length():
    assert not cc.encode(np.zeros(62, np.uint8)).any()
    assert cc.encode(np.zeros(62, np.uint8)).shape == (128,)
    assert cc.codeword_length(62) == 128


def test_encode_rejects_nonbinary():
    with pytest.raises(ValueError):
        cc.encode([0, 2, 1])


def test_encode_linear():
    rng = np.random.default_rng(0)
    u = rng.integers(0, 2, (10_000, 62), dtype=np.uint8)
    v = rng.integers(0, 2, (10_000, 62), dtype=np.uint8)
    np.testing.assert_array_equal(cc.encode(u ^ v), cc.encode(u) ^ cc.encode(v))


def test_free_distance():
    assert cc.free_distance(12) == 5


def test_noiseless_roundtrip_exhaustive_small_k():
    for k in range(1, 13):
        words = cc.all_info_words(k)
        np.testing.assert_array_equal(cc.viterbi_decode(cc.encode(words)), words)


def test_noiseless_roundtrip_k62():
    u = np.random.default_rng(1).integers(0, 2, (10_000, 62), dtype=np.uint8)
    x = cc.encode(u)
    np.testing.assert_array_equal(cc.viterbi_decode(x), u)
    np.testing.assert_array_equal(cc.reencode(cc.viterbi_decode(x)), x)


def test_all_two_bit_flips_corrected():
    u = np.random.default_rng(2).integers(0, 2, 12, dtype=np.uint8)
    x = cc.encode(u)
    pairs = list(itertools.combinations(range(x.size), 2))
    noisy = np.repeat(x[None], len(pairs), axis=0)
    idx = np.array(pairs)
    rows = np.arange(len(pairs))
    noisy[rows, idx[:, 0]] ^= 1
    noisy[rows, idx[:, 1]] ^= 1
    np.testing.assert_array_equal(cc.viterbi_decode(noisy), np.repeat(u[None], len(pairs), 0))


def test_viterbi_matches_bruteforce_metric():
    rng = np.random.default_rng(3)
    k = 10
    u = rng.integers(0, 2, (200, k), dtype=np.uint8)
    x = cc.encode(u)
    r = x ^ (rng.random(x.shape) < 0.12).astype(np.uint8)
    vit = cc.viterbi_decode(r)
    for i in range(len(r)):
        ml = cc.ml_decode_bruteforce(r[i], k)
        assert cc.path_metric(r[i], vit[i]) == cc.path_metric(r[i], ml)


def test_bruteforce_basics():
    u = np.array([1, 0, 1, 1, 0], np.uint8)
    np.testing.assert_array_equal(cc.ml_decode_bruteforce(cc.encode(u)), u)
    np.testing.assert_array_equal(cc.ml_decode_bruteforce(np.zeros(14, np.uint8)), np.zeros(5))
    with pytest.raises(ValueError):
        cc.ml_decode_bruteforce(np.zeros(cc.codeword_length(15), np.uint8))


def test_invalid_length():
    with pytest.raises(ValueError):
        cc.viterbi_decode(np.zeros(7, np.uint8))


def test_full_traceback_is_ml_on_long_words():
    rng = np.random.default_rng(4)
    u = rng.integers(0, 2, (2000, 62), dtype=np.uint8)
    x = cc.encode(u)
    r = x ^ (rng.random(x.shape) < 0.06).astype(np.uint8)
    full = cc.viterbi_decode(r, traceback=None)
    win = cc.viterbi_decode(r)
    # full-block traceback never has a worse path metric than the windowed release
    assert np.all(cc.path_metric(r, full) <= cc.path_metric(r, win))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=80))
def test_decoded_length_and_reencode_valid(bits):
    rng = np.random.default_rng(len(bits))
    x = cc.encode(np.array(bits, np.uint8))
    r = x ^ (rng.random(x.size) < 0.2).astype(np.uint8)
    u_hat = cc.viterbi_decode(r)
    assert u_hat.shape == (len(bits),)
    # a re-encoded word decodes to itself, i.e. it is a codeword
    np.testing.assert_array_equal(cc.viterbi_decode(cc.reencode(u_hat)), u_hat)
