import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dualstream.io import Recording, SleepStage, SynthSpec, generate_synthetic
from dualstream.prep import (
    MissingChannelError,
    PrepConfig,
    PrepError,
    Window,
    design_lowpass,
    downsample,
    extract_windows,
    filter_signal,
    normalize_window,
    preprocess,
    select_channels,
)


def _rec(x, rate=200.0, channels=None, anns=None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    channels = channels or [f"c{i}" for i in range(x.shape[0])]
    return Recording(channels, rate, x, anns, "r")


def _dtft_mag(h, f, rate):
    n = np.arange(h.size)
    return abs(np.sum(h * np.exp(-2j * np.pi * f / rate * n)))


@pytest.mark.parametrize("cutoff,order,rate", [(30, 101, 200), (30, 101, 100), (10, 31, 50), (45, 201, 256)])
def test_lowpass_symmetric_unit_gain(cutoff, order, rate):
    h = design_lowpass(cutoff, order, rate)
    assert h.size == order
    np.testing.assert_array_equal(h, h[::-1])
    assert abs(h.sum() - 1.0) < 1e-12


def test_lowpass_passband_and_stopband():
    h = design_lowpass(30, 101, 200)
    assert 0.99 <= _dtft_mag(h, 10.0, 200) <= 1.01
    assert _dtft_mag(h, 60.0, 200) < 0.05


def test_lowpass_rejects_bad_parameters():
    with pytest.raises(PrepError):
        design_lowpass(100, 101, 200)
    with pytest.raises(PrepError):
        design_lowpass(0, 101, 200)
    with pytest.raises(PrepError):
        design_lowpass(30, 100, 200)
    with pytest.raises(PrepError):
        design_lowpass(30, 1, 200)


def test_filter_constant_is_unchanged():
    out = filter_signal(_rec(np.full((2, 500), 3.25)), design_lowpass(30, 101, 200))
    np.testing.assert_allclose(out.data, 3.25, atol=1e-12)


def test_filter_impulse_gives_centred_taps():
    h = design_lowpass(30, 101, 200)
    x = np.zeros(501)
    x[250] = 1.0
    y = filter_signal(_rec(x), h).data[0]
    np.testing.assert_allclose(y[200:301], h, atol=1e-15)
    assert np.all(y[:200] == 0) and np.all(y[301:] == 0)


def test_filter_preserves_length_and_metadata():
    rec = _rec(np.random.default_rng(0).standard_normal((3, 777)), anns=[(0, SleepStage.N2)])
    out = filter_signal(rec, design_lowpass(30, 101, 200))
    assert out.data.shape == rec.data.shape
    assert out.channels == rec.channels and out.stage_annotations == rec.stage_annotations


def test_filter_removes_60hz():
    t = np.arange(6000) / 200
    x10, x60 = np.sin(2 * np.pi * 10 * t), np.sin(2 * np.pi * 60 * t)
    y = filter_signal(_rec(x10 + x60), design_lowpass(30, 101, 200)).data[0]
    spec_in = np.abs(np.fft.rfft(x10 + x60)) ** 2
    spec_out = np.abs(np.fft.rfft(y)) ** 2
    k60 = 60 * 30
    k10 = 10 * 30
    assert spec_out[k60] < 0.01 * spec_in[k60]
    assert spec_out[k10] == pytest.approx(spec_in[k10], rel=0.02)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**31))
def test_filter_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 400)), rng.standard_normal((2, 400))
    h = design_lowpass(30, 101, 200)
    lhs = filter_signal(_rec(a * x + b * y), h).data
    rhs = a * filter_signal(_rec(x), h).data + b * filter_signal(_rec(y), h).data
    scale = max(1.0, np.max(np.abs(rhs)))
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * scale


def test_select_channels():
    rec = _rec(np.arange(6).reshape(2, 3), channels=["F3-M2", "F4-M1"])
    assert select_channels(rec, ["F3-M2", "F4-M1"]) == rec
    one = select_channels(rec, ["F4-M1"])
    assert one.channels == ["F4-M1"]
    np.testing.assert_array_equal(one.data, [[3, 4, 5]])
    with pytest.raises(MissingChannelError, match="X9"):
        select_channels(rec, ["X9"])


def test_downsample_decimates():
    x = np.arange(3000.0)
    out = downsample(_rec(x, anns=[(0, SleepStage.W), (600, SleepStage.N1)]), 100)
    assert out.n_samples == 1500 and out.sample_rate == 100
    np.testing.assert_array_equal(out.data[0], x[::2])
    assert out.stage_annotations == [(0, SleepStage.W), (300, SleepStage.N1)]
    with pytest.raises(PrepError, match="integer multiple"):
        downsample(_rec(x), 150)


def test_extract_windows_floor():
    rec = _rec(np.zeros((1, 9500)), rate=100.0)
    ws = extract_windows(rec, 30)
    assert [w.start_sample for w in ws] == [0, 3000, 6000]
    assert all(w.data.shape == (1, 3000) for w in ws)
    with pytest.raises(PrepError, match="shorter"):
        extract_windows(_rec(np.zeros((1, 2900)), rate=100.0), 30)


def test_window_stage_from_start_sample():
    anns = [(0, SleepStage.W), (4000, SleepStage.N3)]
    ws = extract_windows(_rec(np.zeros((1, 9000)), 100.0, anns=anns), 30)
    assert [w.stage for w in ws] == [SleepStage.W, SleepStage.W, SleepStage.N3]


def test_synthetic_windows_match_epochs():
    spec = SynthSpec(n_recordings=1, duration_s=900)
    rec = generate_synthetic(spec)[0]
    ws = preprocess(rec, PrepConfig())
    assert len(ws) == 30
    for k, w in enumerate(ws):
        assert w.stage == rec.stage_at(k * 6000)


def test_normalize_worked_example():
    w = normalize_window(Window(np.array([[1.0, 2.0, 3.0, 4.0]]), 0, "r", 1.0))
    assert abs(w.data.mean()) < 1e-9 and abs(w.data.std() - 1) < 1e-9
    np.testing.assert_allclose(w.data[0], np.array([-3, -1, 1, 3]) / np.sqrt(5), atol=1e-12)
    assert not w.flagged


def test_normalize_constant_channel_flagged():
    w = normalize_window(Window(np.array([[2.0, 2.0, 2.0], [1.0, 0.0, 2.0]]), 0, "r", 1.0))
    assert w.flagged
    np.testing.assert_array_equal(w.data[0], 0.0)
    assert abs(w.data[1].std() - 1) < 1e-9


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(2, 200)),
              elements=st.floats(-1e4, 1e4, allow_nan=False)))
def test_normalize_idempotent(x):
    once = normalize_window(Window(x, 0, "r", 1.0))
    twice = normalize_window(once)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-9)
    live = ~np.all(once.data == 0, axis=1)
    assert np.all(np.abs(once.data[live].mean(axis=1)) < 1e-9)
    assert np.all(np.abs(once.data[live].std(axis=1) - 1) < 1e-9)


def test_prep_config_validation():
    assert PrepConfig().validate() == []
    errs = PrepConfig(cutoff_hz=60, fir_order=100, window_s=0.005).validate()
    assert len(errs) == 3


def test_pipeline_alignment_with_original_timeline():
    # a ramp keeps absolute time readable after filtering and decimation
    rate = 200.0
    t = np.arange(int(95 * rate)) / rate
    rec = Recording(["F3-M2", "F4-M1"], rate, np.vstack([t, 2 * t]), None, "ramp")
    cfg = PrepConfig(cutoff_hz=30)
    from dualstream.prep import design_lowpass as dl
    filtered = downsample(filter_signal(select_channels(rec, cfg.keep_channels), dl(30, 101, rate)), 100)
    ws = extract_windows(filtered, 30)
    for k, w in enumerate(ws):
        assert w.start_s == 30 * k
        # interior samples of a ramp pass a unit-gain symmetric filter unchanged
        np.testing.assert_allclose(w.data[0, 100:-100], 30 * k + np.arange(100, 2900) / 100, atol=1e-9)
