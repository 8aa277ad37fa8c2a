import numpy as np
import pytest
from scipy.stats import norm

from labelrecovery import ofdm
from labelrecovery.impairments import awgn


def test_qpsk_map_points():
    s = ofdm.qpsk_map(np.array([0, 0, 1, 1, 0, 1, 1, 0]))
    r = 1 / np.sqrt(2)
    np.testing.assert_array_equal(s, [r + 1j * r, -r - 1j * r, r - 1j * r, -r + 1j * r])


def test_qpsk_unit_energy():
    bits = np.random.default_rng(0).integers(0, 2, 1000)
    assert np.mean(np.abs(ofdm.qpsk_map(bits)) ** 2) == pytest.approx(1.0, abs=1e-12)


def test_qpsk_odd_length_rejected():
    with pytest.raises(ValueError):
        ofdm.qpsk_map([0, 1, 1])


def test_demap_roundtrip_and_ties():
    for bits in ([0, 0], [0, 1], [1, 0], [1, 1]):
        np.testing.assert_array_equal(ofdm.qpsk_demap_hard(ofdm.qpsk_map(np.array(bits))), bits)
    np.testing.assert_array_equal(ofdm.qpsk_demap_hard(np.array([0.3 - 0.2j])), [0, 1])
    np.testing.assert_array_equal(ofdm.qpsk_demap_hard(np.array([0 + 1j])), [0, 0])


def test_dft_impulse():
    x = np.zeros(64, complex)
    x[0] = 1
    np.testing.assert_allclose(ofdm.dft(x), np.full(64, 1 / 8))


def test_dft_matches_definition():
    rng = np.random.default_rng(1)
    x = rng.normal(size=64) + 1j * rng.normal(size=64)
    n = np.arange(64)
    F = np.exp(-2j * np.pi * np.outer(n, n) / 64) / 8
    np.testing.assert_allclose(ofdm.dft(x), F @ x, atol=1e-12)


def test_dft_inverse_and_parseval():
    rng = np.random.default_rng(2)
    for _ in range(50):
        x = rng.normal(size=64) + 1j * rng.normal(size=64)
        X = ofdm.dft(x)
        np.testing.assert_allclose(ofdm.idft(X), x, atol=1e-12)
        assert np.sum(np.abs(X) ** 2) == pytest.approx(np.sum(np.abs(x) ** 2), abs=1e-12 * 64 * 4)


def test_dft_wrong_length():
    with pytest.raises(ValueError):
        ofdm.dft(np.zeros(32))


def test_cyclic_prefix():
    x = np.arange(64) + 0j
    f = ofdm.add_cp(x)
    assert f.shape == (72,)
    np.testing.assert_array_equal(f[:8], f[64:72])
    np.testing.assert_array_equal(ofdm.remove_cp(f), x)
    with pytest.raises(ValueError):
        ofdm.remove_cp(x)


def test_mmse():
    Y = np.exp(1j * np.linspace(0, 6, 64))
    np.testing.assert_array_equal(ofdm.mmse_equalize(Y, 1.0, 0.0), Y)
    np.testing.assert_allclose(ofdm.mmse_equalize(Y, 1.0, 1.0), Y / 2)
    np.testing.assert_allclose(np.angle(ofdm.mmse_equalize(Y, 1.0, 0.3)), np.angle(Y))


def test_loopback_and_power():
    rng = np.random.default_rng(3)
    bits = rng.integers(0, 2, (10_000, 128))
    S = ofdm.qpsk_map(bits)
    frame = ofdm.ofdm_modulate(S)
    np.testing.assert_allclose(ofdm.ofdm_demodulate(frame, 0.0), S, atol=1e-12)
    np.testing.assert_array_equal(ofdm.qpsk_demap_hard(ofdm.ofdm_demodulate(frame, 0.0)), bits)
    # the CP repeats body samples, so the per-frame body power equals mean |S|^2
    np.testing.assert_allclose(np.mean(np.abs(ofdm.remove_cp(frame)) ** 2, axis=1), 1.0)
    noisy = awgn(frame, 0.0, rng)
    np.testing.assert_array_equal(ofdm.qpsk_demap_hard(ofdm.ofdm_demodulate(noisy, 0.0)), bits)


def test_adjoint_of_demodulate():
    rng = np.random.default_rng(4)
    z = rng.normal(size=72) + 1j * rng.normal(size=72)
    g = rng.normal(size=64) + 1j * rng.normal(size=64)
    lhs = np.vdot(g, ofdm.ofdm_demodulate(z, 0.2, 0.5))
    rhs = np.vdot(ofdm.ofdm_demodulate_adjoint(g, 0.2, 0.5), z)
    assert lhs == pytest.approx(rhs, abs=1e-12)


@pytest.mark.parametrize("ebn0_db", [0.0, 4.0, 8.0])
def test_uncoded_ber_matches_theory(ebn0_db):
    # unit-energy QPSK, 2 bits/symbol, uncoded: N0 = 1 / (2 Eb/N0)
    rng = np.random.default_rng(int(ebn0_db) + 10)
    n_frames = 2000
    bits = rng.integers(0, 2, (n_frames, 128))
    sigma2 = 1.0 / (2 * 10 ** (ebn0_db / 10))
    y = awgn(ofdm.ofdm_modulate(ofdm.qpsk_map(bits)), sigma2, rng)
    ber = np.mean(ofdm.qpsk_demap_hard(ofdm.ofdm_demodulate(y, sigma2)) != bits)
    p = norm.sf(np.sqrt(2 * 10 ** (ebn0_db / 10)))
    assert abs(ber - p) < 3 * np.sqrt(p * (1 - p) / bits.size)
