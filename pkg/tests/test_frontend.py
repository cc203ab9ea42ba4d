import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from e2easr import frontend as fe


def tone(freq, seconds=1.0, sr=16000, amp=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return fe.Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


def test_fbank_shape_for_one_second():
    f = fe.compute_fbank(tone(1000))
    assert (f.num_frames, f.dim) == (98, 80)
    assert f.feature_kind == fe.FeatureKind.FBANK80


def test_fbank_silence_is_log_floor():
    f = fe.compute_fbank(fe.Waveform(np.zeros(16000), 16000))
    assert np.all(f.frames == np.log(1e-10))


def test_fbank_sine_peak_bin():
    f = fe.compute_fbank(tone(1000))
    _, centres = fe.mel_filterbank(80, 512, 16000)
    lo = np.searchsorted(centres, 1000.0) - 1
    assert set(np.argmax(f.frames, axis=1)) <= {lo, lo + 1}


def test_fbank_matches_direct_dft_oracle():
    w = tone(440, seconds=0.1, amp=0.3)
    x = w.samples[:400].copy()
    x[1:] -= 0.97 * x[:-1].copy()
    x[0] *= 0.03
    x *= 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(400) / 399)
    n = np.arange(512)
    xp = np.concatenate([x, np.zeros(112)])
    spec = np.array([np.sum(xp * np.exp(-2j * np.pi * k * n / 512)) for k in range(257)])
    power = np.abs(spec) ** 2
    # independent triangle construction
    mel = lambda f: 2595 * np.log10(1 + f / 700)
    imel = lambda m: 700 * (10 ** (m / 2595) - 1)
    edges = imel(np.linspace(mel(20), mel(8000), 82))
    bins = np.arange(257) * 16000 / 512
    energies = []
    for i in range(80):
        wts = []
        for fb in bins:
            if edges[i] <= fb <= edges[i + 1]:
                wts.append((fb - edges[i]) / (edges[i + 1] - edges[i]))
            elif edges[i + 1] < fb <= edges[i + 2]:
                wts.append((edges[i + 2] - fb) / (edges[i + 2] - edges[i + 1]))
            else:
                wts.append(0.0)
        energies.append(np.dot(wts, power))
    expected = np.log(np.maximum(energies, 1e-10))
    np.testing.assert_allclose(fe.compute_fbank(w).frames[0], expected, atol=1e-8)


def test_fbank_errors():
    with pytest.raises(ValueError):
        fe.compute_fbank(fe.Waveform(np.zeros(100), 16000))
    with pytest.raises(ValueError):
        fe.compute_fbank(fe.Waveform(np.zeros(1000), 4000))


def test_fbank_deterministic_and_energy_scaling():
    rng = np.random.default_rng(0)
    w = fe.Waveform(0.1 * rng.standard_normal(8000), 16000)
    a = fe.compute_fbank(w).frames
    assert np.array_equal(a, fe.compute_fbank(w).frames)
    b = fe.compute_fbank(fe.Waveform(2 * w.samples, 16000)).frames
    ratio = np.exp(b).sum(axis=1) / np.exp(a).sum(axis=1)
    np.testing.assert_allclose(ratio, 4.0, rtol=0.01)


def test_pitch_tracks_200hz():
    p = fe.compute_pitch(tone(200))
    f0 = np.exp(p.frames[:, 1])
    assert np.mean(np.abs(f0 - 200) <= 5) >= 0.9
    assert p.num_frames == fe.compute_fbank(tone(200)).num_frames


def test_pitch_delta_zero_for_constant_f0():
    d = fe.compute_pitch(tone(150)).frames[1:-1, 2]
    assert np.max(np.abs(d)) < 1e-3


def test_pitch_voicing_noise_below_tones():
    noise = fe.Waveform(0.3 * np.random.default_rng(1).standard_normal(16000), 16000)
    v_noise = fe.compute_pitch(noise).frames[:, 0].mean()
    for f in (80, 200, 350):
        assert v_noise < fe.compute_pitch(tone(f)).frames[:, 0].mean()


@pytest.mark.parametrize("seconds", [0.025, 0.3, 1.0, 1.37])
def test_pitch_fbank_frame_counts_agree(seconds):
    w = tone(100, seconds=seconds)
    assert fe.compute_pitch(w).num_frames == fe.compute_fbank(w).num_frames


def test_fbank_pitch_is_83_dims():
    f = fe.compute_features(tone(220), "fbank80_pitch3")
    assert f.dim == 83 and f.feature_kind == fe.FeatureKind.FBANK80_PITCH3


def test_mfcc_hires_is_40_dims():
    f = fe.compute_features(tone(220), "mfcc40_hires")
    assert (f.num_frames, f.dim) == (98, 40)


def test_concat_features():
    a = fe.FeatureMatrix(np.ones((98, 80)), feature_kind="fbank80")
    b = fe.FeatureMatrix(np.zeros((98, 3)), feature_kind="pitch3")
    assert fe.concat_features(a, b).dim == 83
    assert fe.concat_features(a, fe.FeatureMatrix(np.zeros((98, 0)))) is a
    with pytest.raises(ValueError):
        fe.concat_features(a, fe.FeatureMatrix(np.zeros((97, 3))))


def test_cmvn():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((50, 4)) * [1, 2, 3, 4] + [5, -1, 0, 2]
    x[:, 3] = 7.0
    out = fe.cmvn(fe.FeatureMatrix(x)).frames
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-10)
    assert np.all(out[:, 3] == 0.0)
    # two-pass oracle
    for d in range(3):
        col = list(x[:, d])
        mean = sum(col) / len(col)
        var = sum((v - mean) ** 2 for v in col) / len(col)
        np.testing.assert_allclose(out[:, d], [(v - mean) / var**0.5 for v in col], atol=1e-12)
    with pytest.raises(ValueError):
        fe.cmvn(fe.FeatureMatrix(np.zeros((1, 3))))


def test_specaugment_zero_policy_is_identity():
    f = fe.FeatureMatrix(np.random.default_rng(4).standard_normal((98, 80)))
    out = fe.apply_specaugment(f, fe.SpecAugmentPolicy(0, 0, 0, 0), np.random.default_rng(0))
    assert np.array_equal(out.frames, f.frames)


def test_specaugment_single_time_mask():
    f = fe.FeatureMatrix(np.random.default_rng(5).standard_normal((98, 80)) + 10)
    for seed in range(30):
        pol = fe.SpecAugmentPolicy(0, 0, 1, 5)
        out = fe.apply_specaugment(f, pol, np.random.default_rng(seed)).frames
        masked = np.where(np.all(out == 0.0, axis=1))[0]
        assert len(masked) <= 5
        if len(masked):
            assert np.array_equal(masked, np.arange(masked[0], masked[0] + len(masked)))


def test_specaugment_two_freq_masks():
    f = fe.FeatureMatrix(np.random.default_rng(6).standard_normal((98, 80)) + 10)
    for seed in range(30):
        out = fe.apply_specaugment(f, fe.SpecAugmentPolicy(2, 10, 0, 0), np.random.default_rng(seed)).frames
        assert np.sum(np.all(out == 0.0, axis=0)) <= 20


def test_specaugment_rejects_oversized_width():
    f = fe.FeatureMatrix(np.zeros((10, 8)))
    with pytest.raises(ValueError):
        fe.apply_specaugment(f, fe.SpecAugmentPolicy(1, 8, 0, 0), np.random.default_rng(0))


@settings(max_examples=200, deadline=None)
@given(
    st.integers(2, 40), st.integers(2, 30), st.integers(0, 3), st.integers(0, 3),
    st.data(), st.sampled_from(["zero", "mean"]), st.integers(0, 2**32 - 1),
)
def test_specaugment_contract(T, D, nf, nt, data, mv, seed):
    F = data.draw(st.integers(0, D - 1))
    W = data.draw(st.integers(0, T - 1))
    pol = fe.SpecAugmentPolicy(nf, F, nt, W, fe.MaskValue(mv))
    f = fe.FeatureMatrix(np.random.default_rng(seed).standard_normal((T, D)))
    out, masks = fe.apply_specaugment(f, pol, np.random.default_rng(seed), return_masks=True)
    assert out.frames.shape == f.frames.shape
    covered = np.zeros((T, D), dtype=bool)
    for m in masks:
        limit = F if m.axis == "freq" else W
        assert 0 <= m.width <= limit
        if m.axis == "freq":
            covered[:, m.start:m.start + m.width] = True
        else:
            covered[m.start:m.start + m.width, :] = True
    assert np.array_equal(out.frames[~covered], f.frames[~covered])


def test_wav_and_feat_round_trip(tmp_path):
    w = tone(300, seconds=0.2)
    fe.write_wav(tmp_path / "a.wav", w)
    back = fe.read_wav(tmp_path / "a.wav")
    assert back.sample_rate_hz == 16000
    np.testing.assert_allclose(back.samples, w.samples, atol=1 / 32768)
    feats = fe.FeatureMatrix(np.random.default_rng(0).standard_normal((7, 3)).astype(np.float32))
    fe.write_feat(tmp_path / "a.feat", feats)
    raw = (tmp_path / "a.feat").read_bytes()
    assert raw[:4] == b"FEAT" and len(raw) == 12 + 7 * 3 * 4
    assert np.array_equal(fe.read_feat(tmp_path / "a.feat").frames, feats.frames)
