"""Acoustic front-end: log-Mel filterbanks, pitch, MFCC, CMVN and SpecAugment.

Also holds the WAV reader/writer and the ``FEAT`` binary container
(magic ``b"FEAT"``, u32 T, u32 D, row-major little-endian float32 payload).
"""

from __future__ import annotations

import enum
import struct
import wave
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.fft import dct

LOG_FLOOR = 1e-10
FEAT_MAGIC = b"FEAT"


class FeatureKind(str, enum.Enum):
    FBANK80 = "fbank80"
    FBANK80_PITCH3 = "fbank80_pitch3"
    MFCC40_HIRES = "mfcc40_hires"
    PITCH3 = "pitch3"
    CONCAT = "concat"
    SYNTHETIC = "synthetic"


_KIND_DIMS = {
    FeatureKind.FBANK80: 80,
    FeatureKind.FBANK80_PITCH3: 83,
    FeatureKind.MFCC40_HIRES: 40,
    FeatureKind.PITCH3: 3,
}


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a non-empty mono signal")


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    frame_shift_ms: float = 10.0
    feature_kind: FeatureKind = FeatureKind.CONCAT

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2:
            raise ValueError("feature matrix must be 2-d (T x D)")
        expected = _KIND_DIMS.get(FeatureKind(self.feature_kind))
        if expected is not None and self.frames.shape[1] != expected:
            raise ValueError(f"{self.feature_kind} expects D={expected}, got {self.frames.shape[1]}")
        if not np.isfinite(self.frames).all():
            raise ValueError("feature matrix contains non-finite values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


class MaskValue(str, enum.Enum):
    ZERO = "zero"
    MEAN = "mean"


@dataclass(frozen=True)
class SpecAugmentPolicy:
    # Masking defaults are engineering choices; time-warping is not implemented.
    num_freq_masks: int = 2
    max_freq_width: int = 10
    num_time_masks: int = 2
    max_time_width: int = 5
    mask_value: MaskValue = MaskValue.ZERO

    def validate(self, f: FeatureMatrix) -> None:
        for name in ("num_freq_masks", "max_freq_width", "num_time_masks", "max_time_width"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.num_freq_masks and self.max_freq_width >= f.dim and self.max_freq_width > 0:
            raise ValueError(f"frequency mask width {self.max_freq_width} >= D={f.dim}")
        if self.num_time_masks and self.max_time_width >= f.num_frames and self.max_time_width > 0:
            raise ValueError(f"time mask width {self.max_time_width} >= T={f.num_frames}")


# ---------------------------------------------------------------------------
# audio IO


def read_wav(path: Union[str, Path]) -> Waveform:
    """Read 16-bit signed PCM mono RIFF WAV."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path: Union[str, Path], w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as out:
        out.setnchannels(1)
        out.setsampwidth(2)
        out.setframerate(w.sample_rate_hz)
        out.writeframes(pcm.tobytes())


def write_feat(path: Union[str, Path], f: Union[FeatureMatrix, np.ndarray]) -> None:
    frames = f.frames if isinstance(f, FeatureMatrix) else np.asarray(f)
    T, D = frames.shape
    with open(path, "wb") as out:
        out.write(FEAT_MAGIC + struct.pack("<II", T, D))
        out.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def read_feat(path: Union[str, Path], feature_kind=FeatureKind.CONCAT) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if data[:4] != FEAT_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    T, D = struct.unpack("<II", data[4:12])
    payload = np.frombuffer(data[12:], dtype="<f4")
    if payload.size != T * D:
        raise ValueError(f"{path}: payload has {payload.size} values, header says {T}x{D}")
    return FeatureMatrix(payload.reshape(T, D).astype(np.float32), feature_kind=feature_kind)


# ---------------------------------------------------------------------------
# framing and filterbanks


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, f_min: float = 20.0,
                   f_max: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Triangular HTK-mel filters, shape (n_mels, n_fft // 2 + 1), and their centre frequencies."""
    f_max = sample_rate / 2.0 if f_max is None else f_max
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bins[None, :] - lo) / (mid - lo)
    down = (hi - bins[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down)), edges[1:-1]


def _frame_params(w: Waveform, win_ms: float, shift_ms: float) -> Tuple[int, int, int]:
    if w.sample_rate_hz < 8000:
        raise ValueError("sample rate must be at least 8 kHz")
    win = int(round(w.sample_rate_hz * win_ms / 1000.0))
    shift = int(round(w.sample_rate_hz * shift_ms / 1000.0))
    n = w.samples.size
    if n < win:
        raise ValueError(f"waveform of {n} samples is shorter than one {win}-sample window")
    return win, shift, 1 + (n - win) // shift


def frame_signal(x: np.ndarray, win: int, shift: int, num_frames: int) -> np.ndarray:
    idx = np.arange(win)[None, :] + shift * np.arange(num_frames)[:, None]
    return x[idx]


def _power_spectrum(w: Waveform, win_ms: float, shift_ms: float, preemph: float):
    win, shift, T = _frame_params(w, win_ms, shift_ms)
    frames = frame_signal(w.samples, win, shift, T).copy()
    frames[:, 1:] -= preemph * frames[:, :-1]
    frames[:, 0] *= 1.0 - preemph
    frames *= np.hamming(win)[None, :]
    n_fft = 1 << (win - 1).bit_length()
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    return spec.real**2 + spec.imag**2, n_fft


def compute_fbank(w: Waveform, n_mels: int = 80, win_ms: float = 25.0, shift_ms: float = 10.0,
                  preemph: float = 0.97) -> FeatureMatrix:
    power, n_fft = _power_spectrum(w, win_ms, shift_ms, preemph)
    bank, _ = mel_filterbank(n_mels, n_fft, w.sample_rate_hz)
    energies = power @ bank.T
    feats = np.log(np.maximum(energies, LOG_FLOOR))
    kind = FeatureKind.FBANK80 if n_mels == 80 else FeatureKind.CONCAT
    return FeatureMatrix(feats, shift_ms, kind)


def compute_mfcc(w: Waveform, n_ceps: int = 40, n_mels: int = 40, win_ms: float = 25.0,
                 shift_ms: float = 10.0) -> FeatureMatrix:
    """High-resolution MFCC: orthonormal DCT-II of the log-mel energies."""
    logmel = compute_fbank(w, n_mels=n_mels, win_ms=win_ms, shift_ms=shift_ms).frames
    ceps = dct(logmel, type=2, axis=1, norm="ortho")[:, :n_ceps]
    kind = FeatureKind.MFCC40_HIRES if n_ceps == 40 else FeatureKind.CONCAT
    return FeatureMatrix(ceps, shift_ms, kind)


def compute_pitch(w: Waveform, win_ms: float = 25.0, shift_ms: float = 10.0,
                  f0_min: float = 60.0, f0_max: float = 400.0,
                  octave_tolerance: float = 0.9) -> FeatureMatrix:
    """Autocorrelation pitch tracker: (voicing, log f0, delta log f0) per frame.

    Voicing is the normalised autocorrelation at the chosen lag. To avoid
    sub-harmonic picks, the shortest-lag local peak reaching
    ``octave_tolerance`` times the global peak wins.
    """
    win, shift, T = _frame_params(w, win_ms, shift_ms)
    sr = w.sample_rate_hz
    lag_min = max(1, int(np.floor(sr / f0_max)))
    lag_max = min(win - 2, int(np.ceil(sr / f0_min)))
    frames = frame_signal(w.samples, win, shift, T)
    frames = frames - frames.mean(axis=1, keepdims=True)

    voicing = np.zeros(T)
    log_f0 = np.full(T, np.log(sr / lag_max))
    lags = np.arange(lag_min, lag_max + 1)
    for t in range(T):
        x = frames[t]
        r = np.empty(lags.size)
        for i, lag in enumerate(lags):
            a, b = x[:-lag], x[lag:]
            denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
            r[i] = np.dot(a, b) / denom if denom > 1e-12 else 0.0
        peak = r.max()
        if peak <= 0.0:
            continue
        chosen = int(np.argmax(r))
        for i in range(1, lags.size - 1):
            if r[i] >= r[i - 1] and r[i] >= r[i + 1] and r[i] >= octave_tolerance * peak:
                chosen = i
                break
        lag = float(lags[chosen])
        if 0 < chosen < lags.size - 1:
            y0, y1, y2 = r[chosen - 1], r[chosen], r[chosen + 1]
            curv = y0 - 2 * y1 + y2
            if curv < 0:
                lag += 0.5 * (y0 - y2) / curv
        voicing[t] = r[chosen]
        log_f0[t] = np.log(sr / lag)

    padded = np.concatenate([log_f0[:1], log_f0, log_f0[-1:]])
    delta = 0.5 * (padded[2:] - padded[:-2])
    return FeatureMatrix(np.stack([voicing, log_f0, delta], axis=1), shift_ms, FeatureKind.PITCH3)


def concat_features(a: FeatureMatrix, b: FeatureMatrix) -> FeatureMatrix:
    if b.dim == 0:
        return a
    if a.dim == 0:
        return b
    if a.num_frames != b.num_frames:
        raise ValueError(f"frame counts differ: {a.num_frames} vs {b.num_frames}")
    kind = FeatureKind.CONCAT
    if {FeatureKind(a.feature_kind), FeatureKind(b.feature_kind)} == {FeatureKind.FBANK80, FeatureKind.PITCH3} \
            and FeatureKind(a.feature_kind) == FeatureKind.FBANK80:
        kind = FeatureKind.FBANK80_PITCH3
    return FeatureMatrix(np.concatenate([a.frames, b.frames], axis=1), a.frame_shift_ms, kind)


def compute_features(w: Waveform, kind: Union[str, FeatureKind]) -> FeatureMatrix:
    kind = FeatureKind(kind)
    if kind == FeatureKind.FBANK80:
        return compute_fbank(w)
    if kind == FeatureKind.FBANK80_PITCH3:
        return concat_features(compute_fbank(w), compute_pitch(w))
    if kind == FeatureKind.MFCC40_HIRES:
        return compute_mfcc(w)
    if kind == FeatureKind.PITCH3:
        return compute_pitch(w)
    raise ValueError(f"cannot compute features of kind {kind.value!r} from audio")


# ---------------------------------------------------------------------------
# normalisation and augmentation


def cmvn(f: FeatureMatrix, var_floor: float = 1e-8) -> FeatureMatrix:
    if f.num_frames < 2:
        raise ValueError("CMVN needs at least two frames")
    x = np.asarray(f.frames, dtype=np.float64)
    mean = x.mean(axis=0)
    var = np.maximum(x.var(axis=0), var_floor)
    return replace(f, frames=(x - mean) / np.sqrt(var))


@dataclass
class AppliedMask:
    axis: str  # "time" or "freq"
    start: int
    width: int


def apply_specaugment(f: FeatureMatrix, policy: SpecAugmentPolicy, rng: np.random.Generator,
                      return_masks: bool = False):
    """Mask random contiguous frequency bands and time spans.

    Each mask width is uniform on ``[0, max_width]``; the start is uniform over
    the positions where the band fits. Cells outside every mask are copied
    unchanged.
    """
    policy.validate(f)
    out = np.array(f.frames, copy=True)
    fill = 0.0 if MaskValue(policy.mask_value) == MaskValue.ZERO else float(np.mean(f.frames))
    T, D = out.shape
    masks: List[AppliedMask] = []
    for _ in range(policy.num_freq_masks):
        width = int(rng.integers(0, policy.max_freq_width + 1))
        start = int(rng.integers(0, D - width + 1))
        out[:, start:start + width] = fill
        masks.append(AppliedMask("freq", start, width))
    for _ in range(policy.num_time_masks):
        width = int(rng.integers(0, policy.max_time_width + 1))
        start = int(rng.integers(0, T - width + 1))
        out[start:start + width, :] = fill
        masks.append(AppliedMask("time", start, width))
    result = replace(f, frames=out)
    return (result, masks) if return_masks else result
