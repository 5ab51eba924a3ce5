import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from seisbt import dsp
from seisbt.errors import DspError
from seisbt.ingest import WaveformRecord

FS = 40.0


def _rec(x):
    return WaveformRecord(np.atleast_2d(np.asarray(x, dtype=np.float32)), FS)


def test_default_shape():
    assert dsp.StftConfig().shape(3600) == (65, 28)
    rec = _rec(np.random.default_rng(0).normal(size=(3, 3600)))
    s = dsp.spectrogram(rec)
    assert s.tensor.shape == (3, 65, 28)


def test_range_and_joint_normalization(rng):
    x = rng.normal(size=(3, 3600))
    x[2] *= 10
    t = dsp.spectrogram(_rec(x)).tensor
    assert t.min() == 0.0 and t.max() == 1.0
    # joint scaling keeps the loud channel brighter
    assert t[2].mean() > t[0].mean()


def test_vertical_only_pads_zeros(rng):
    s = dsp.spectrogram(_rec(rng.normal(size=3600)))
    assert s.channel_mask.tolist() == [True, False, False]
    assert np.all(s.tensor[1:] == 0) and s.tensor[0].max() == 1.0


def test_constant_input_is_all_zero():
    s = dsp.spectrogram(_rec(np.zeros((3, 3600))))
    assert np.all(s.tensor == 0)


def test_short_record_raises():
    with pytest.raises(DspError):
        dsp.spectrogram(_rec(np.ones(100)))


def test_tone_peaks_at_its_bin():
    t = np.arange(3600) / FS
    s = dsp.spectrogram(_rec(np.sin(2 * np.pi * 5.0 * t)))
    freqs = np.fft.rfftfreq(128, 1 / FS)
    assert freqs[np.argmax(s.tensor[0].mean(axis=1))] == pytest.approx(5.0, abs=FS / 128)


def test_log_power_matches_direct_framing(rng):
    x = rng.normal(size=3600)
    logp = dsp.log_power(_rec(x))
    win = signal.get_window(("tukey", 0.25), 128)
    frame = x[128:256].astype(np.float32).astype(np.float64) * win
    p = np.abs(np.fft.rfft(frame)) ** 2 / win.sum() ** 2
    p[1:-1] *= 2
    np.testing.assert_allclose(logp[0, :, 1], np.log(p + 1e-10), rtol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), gain=st.floats(1e-2, 1e3))
def test_amplitude_scale_invariance(seed, gain):
    x = np.random.default_rng(seed).normal(size=(3, 1024))
    a = dsp.spectrogram(_rec(x)).tensor
    b = dsp.spectrogram(_rec(x * gain)).tensor
    # only the log epsilon breaks invariance: each log bin moves by at most
    # log1p(eps / (min(1, gain^2) * power)), and min-max scaling at most triples that
    logp = dsp.log_power(_rec(x))
    p_min = np.exp(logp.min()) - 1e-10
    shift = np.log1p(1e-10 / (min(1.0, gain**2) * p_min))
    bound = 3 * shift / (logp.max() - logp.min()) + 1e-6
    assert np.max(np.abs(a - b)) <= bound


def test_noise_augmentation(rng):
    s = dsp.spectrogram(_rec(rng.normal(size=3600)))
    same = dsp.augment_noise(s, 0.0, rng)
    assert np.array_equal(same.tensor, s.tensor)
    noisy = dsp.augment_noise(s, 0.1, rng)
    assert np.all(noisy.tensor[1:] == 0)
    assert noisy.tensor.min() >= 0 and noisy.tensor.max() <= 1
    assert not np.array_equal(noisy.tensor[0], s.tensor[0])


def test_zero_pad_horizontals(rng):
    s = dsp.spectrogram(_rec(rng.normal(size=(3, 3600))))
    p = dsp.zero_pad_horizontals(s)
    assert np.all(p.tensor[1:] == 0) and np.array_equal(p.tensor[0], s.tensor[0])
    assert p.channel_mask.tolist() == [True, False, False]
    assert s.channel_mask.tolist() == [True, True, True]


def test_batch_forms_match_single(rng):
    recs = [_rec(rng.normal(size=(3, 1024))), _rec(rng.normal(size=1024))]
    tensors, masks = dsp.spectrogram_stack(recs)
    padded, pmask = dsp.zero_pad_batch(tensors, masks)
    for i, r in enumerate(recs):
        single = dsp.zero_pad_horizontals(dsp.spectrogram(r))
        assert np.array_equal(padded[i], single.tensor)
        assert np.array_equal(pmask[i], single.channel_mask)
    same = dsp.noise_batch(tensors, masks, np.zeros(2), rng)
    assert np.array_equal(same, tensors)


def test_config_round_trip():
    cfg = dsp.StftConfig.from_dict({"nperseg": 64, "window": ["tukey", 0.5]})
    assert cfg.window == ("tukey", 0.5)
    assert dsp.StftConfig.from_dict(cfg.to_dict()) == cfg
