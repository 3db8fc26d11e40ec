import numpy as np
import pytest
import scipy.signal
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dualstream.prep import Window
from dualstream.spectral import (
    PsdEstimate,
    SpectralError,
    WelchConfig,
    hellinger_distance,
    mean_channel_hd,
    normalize_psd,
    welch,
    welch_psd,
)


def _win(x, rate=100.0):
    return Window(np.atleast_2d(np.asarray(x, dtype=np.float64)), 0, "r", rate)


def _dists(rng, n, k):
    return rng.dirichlet(np.full(k, 0.5), size=n)


def test_default_grid_has_129_bins():
    p = welch_psd(_win(np.random.default_rng(0).standard_normal((2, 3000))))
    assert p.power.shape == (2, 129)
    assert p.freqs[0] == 0 and p.freqs[-1] == 50.0
    assert np.all(np.diff(p.freqs) > 0)
    assert np.all(p.power >= 0)


def test_zero_signal_zero_power():
    assert np.all(welch_psd(_win(np.zeros((1, 3000)))).power == 0)


def test_sinusoid_peak_bin_exact():
    t = np.arange(3000) / 100
    p = welch_psd(_win(np.sin(2 * np.pi * 10 * t)))
    assert np.argmax(p.power[0]) == np.argmin(np.abs(p.freqs - 10.0))


def test_parseval_on_white_noise():
    x = np.random.default_rng(1).standard_normal((1, 3000))
    p = welch_psd(_win(x))
    df = p.freqs[1] - p.freqs[0]
    total = np.sum(p.power[0]) * df
    assert total == pytest.approx(x.var(), rel=0.05)


@pytest.mark.parametrize("seg,overlap,detrend", [(256, 0.5, True), (128, 0.25, False), (255, 0.5, True), (64, 0.0, True)])
def test_matches_scipy_welch(seg, overlap, detrend):
    x = np.random.default_rng(2).standard_normal((2, 3000)) + 0.3
    ours = welch(x, 100.0, WelchConfig(seg, overlap, detrend))
    f, ref = scipy.signal.welch(x, fs=100.0, window="hamming", nperseg=seg, noverlap=seg - int(seg * (1 - overlap)),
                                detrend="constant" if detrend else False, scaling="density", axis=1)
    np.testing.assert_allclose(ours.freqs, f)
    np.testing.assert_allclose(ours.power, ref, rtol=1e-10, atol=1e-14)


def test_segment_longer_than_window():
    with pytest.raises(SpectralError, match="segment_len"):
        welch_psd(_win(np.zeros((1, 100))))


def test_welch_config_validation():
    assert WelchConfig().validate() == []
    assert len(WelchConfig(segment_len=0, overlap=1.0).validate()) == 2


@settings(max_examples=30, deadline=None)
@given(offset=st.floats(-1e3, 1e3), seed=st.integers(0, 2**31))
def test_offset_invariance_with_detrend(offset, seed):
    x = np.random.default_rng(seed).standard_normal((2, 1000))
    a = welch(x, 100.0).power
    b = welch(x + offset, 100.0).power
    np.testing.assert_allclose(b, a, rtol=1e-9, atol=1e-9 * np.max(a))


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 2**31))
def test_scaling_is_quadratic_and_normalisation_invariant(scale, seed):
    x = np.random.default_rng(seed).standard_normal((2, 1000))
    a, b = welch(x, 100.0), welch(scale * x, 100.0)
    np.testing.assert_allclose(b.power, scale**2 * a.power, rtol=1e-9)
    np.testing.assert_allclose(normalize_psd(b), normalize_psd(a), rtol=1e-9, atol=1e-15)


def test_normalize_psd_examples():
    np.testing.assert_allclose(normalize_psd(np.array([2.0, 2.0, 4.0])), [[0.25, 0.25, 0.5]], atol=1e-15)
    p = np.array([[0.1, 0.2, 0.7]])
    np.testing.assert_allclose(normalize_psd(p), p, atol=1e-15)
    with pytest.raises(SpectralError, match="no positive power"):
        normalize_psd(np.array([0.0, 0.0, 0.0]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 40)), elements=st.floats(0, 1e6)))
def test_normalize_psd_sums_to_one(p):
    if np.any(p.sum(axis=1) <= 0):
        with pytest.raises(SpectralError):
            normalize_psd(p)
        return
    q = normalize_psd(p)
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)
    # proportional to the input row by row
    np.testing.assert_allclose(q * p.sum(axis=1, keepdims=True), p, rtol=1e-12, atol=1e-300)


def test_hellinger_worked_values():
    assert hellinger_distance([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert hellinger_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-15)
    d = hellinger_distance([1.0, 0.0], [0.5, 0.5])
    # squared distance also equals 1 - sum(sqrt(p q))
    assert d == pytest.approx(np.sqrt(1 - np.sqrt(0.5)), abs=1e-12)
    assert d == pytest.approx(0.5412, abs=1e-4)
    assert d == pytest.approx(0.541196100146197, abs=1e-6)


def test_hellinger_input_checks():
    with pytest.raises(SpectralError, match="length"):
        hellinger_distance([1.0], [0.5, 0.5])
    with pytest.raises(SpectralError, match="sums"):
        hellinger_distance([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(SpectralError, match="negative"):
        hellinger_distance([1.5, -0.5], [0.5, 0.5])
    with pytest.raises(SpectralError, match="unknown"):
        hellinger_distance([1.0, 0.0], [0.5, 0.5], form="kl")


def test_hellinger_axioms_on_1000_triples():
    rng = np.random.default_rng(0)
    for k in (2, 5, 129):
        P, Q, R = (_dists(rng, 1000, k) for _ in range(3))
        for p, q, r in zip(P, Q, R):
            pq, qp = hellinger_distance(p, q), hellinger_distance(q, p)
            assert pq == qp
            assert 0.0 <= pq <= 1.0
            assert hellinger_distance(p, p) == 0.0
            assert pq <= hellinger_distance(p, r) + hellinger_distance(r, q) + 1e-9


@settings(max_examples=100, deadline=None)
@given(k=st.integers(2, 30), seed=st.integers(0, 2**31))
def test_hellinger_affinity_identity(k, seed):
    p, q = _dists(np.random.default_rng(seed), 2, k)
    d = hellinger_distance(p, q)
    assert d**2 == pytest.approx(max(0.0, 1 - np.sum(np.sqrt(p * q))), abs=1e-9)


def test_l2_form_without_square_roots():
    p, q = np.array([1.0, 0.0]), np.array([0.5, 0.5])
    assert hellinger_distance(p, q, form="l2") == pytest.approx(np.linalg.norm(p - q) / np.sqrt(2), abs=1e-15)


def _psd(power):
    power = np.atleast_2d(np.asarray(power, dtype=np.float64))
    return PsdEstimate(np.arange(power.shape[1], dtype=np.float64), power, 256, 0.5)


def test_mean_channel_hd_examples():
    a = _psd([[1.0, 0.0], [1.0, 0.0]])
    b = _psd([[1.0, 0.0], [0.0, 1.0]])
    assert mean_channel_hd(a, a) == 0.0
    assert mean_channel_hd(a, b) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(SpectralError, match="grid"):
        mean_channel_hd(a, _psd([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_mean_channel_hd_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = _psd(rng.random((2, 20))), _psd(rng.random((2, 20)))
    assert mean_channel_hd(a, b) == mean_channel_hd(b, a)
