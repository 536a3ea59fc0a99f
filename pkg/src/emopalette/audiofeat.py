"""Audio loading and the 539-row standardized feature matrix.

All extractors share one frame grid: n_fft=2048, hop=512, periodic Hann,
centered frames with reflect padding, at the canonical 22,050 Hz rate. The
row layout is fixed:

    mel x128 | chroma x12 | spectral contrast x7 | tonnetz x6 |
    tempogram x384 | rms x1 | pitch x1

After stacking, every row is z-scored over time; constant rows become zeros.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

from .errors import DataError, UsageError

SAMPLE_RATE = 22050
N_FFT = 2048
HOP = 512
N_MELS = 128
N_CHROMA = 12
N_CONTRAST = 7
N_TONNETZ = 6
TEMPOGRAM_WINDOW = 384
N_FEATURE_ROWS = 539

ROW_LAYOUT = (
    ("mel", N_MELS),
    ("chroma", N_CHROMA),
    ("spectral_contrast", N_CONTRAST),
    ("tonnetz", N_TONNETZ),
    ("tempogram", TEMPOGRAM_WINDOW),
    ("rms", 1),
    ("pitch", 1),
)

CACHE_MAGIC = b"M2PF"
CACHE_VERSION = 1

_LOG_EPS = 1e-10
PITCH_MIN_MAGNITUDE = 1e-4


@dataclass(frozen=True)
class MusicClip:
    samples: np.ndarray  # mono float64 in [-1, 1]
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError("clip must hold a non-empty mono sample array")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def load_audio(path, max_seconds: float | None = None) -> MusicClip:
    """Read a PCM or float WAV, mix to mono and resample to 22,050 Hz.

    Resampling uses the polyphase windowed-sinc resampler; files already at
    the canonical rate pass through untouched.
    """
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read WAV file {path}: {exc}") from exc
    if data.size == 0:
        raise DataError(f"{path}: zero-length audio")

    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported WAV sample format {data.dtype}")

    if samples.ndim == 2:
        samples = samples.mean(axis=1)

    if rate != SAMPLE_RATE:
        g = math.gcd(int(rate), SAMPLE_RATE)
        samples = resample_poly(samples, SAMPLE_RATE // g, int(rate) // g)
    if max_seconds is not None:
        samples = samples[: int(max_seconds * SAMPLE_RATE)]
    if samples.size == 0:
        raise DataError(f"{path}: no samples left after truncation")
    return MusicClip(samples=samples, sample_rate=SAMPLE_RATE)


# -- STFT plumbing -----------------------------------------------------------


def _framed(samples: np.ndarray, frame_length: int = N_FFT) -> np.ndarray:
    """Centered frames (T, frame_length) with reflect padding; T = 1 + n//hop."""
    if samples.size < frame_length:
        raise DataError(
            f"clip too short: {samples.size} samples < one {frame_length}-sample window"
        )
    pad = frame_length // 2
    padded = np.pad(samples, pad, mode="reflect")
    frames = sliding_window_view(padded, frame_length)[::HOP]
    return frames


def stft_power(clip: MusicClip) -> np.ndarray:
    """One-sided power spectrogram, shape (1 + n_fft/2, T)."""
    window = get_window("hann", N_FFT, fftbins=True)
    frames = _framed(clip.samples) * window
    spec = np.fft.rfft(frames, axis=1)
    return (spec.real**2 + spec.imag**2).T


def stft_magnitude(clip: MusicClip) -> np.ndarray:
    return np.sqrt(stft_power(clip))


def n_frames(n_samples: int) -> int:
    return 1 + n_samples // HOP


def fft_bin_frequencies() -> np.ndarray:
    return np.arange(N_FFT // 2 + 1) * (SAMPLE_RATE / N_FFT)


# -- mel ---------------------------------------------------------------------


def _hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    mel = f / (200.0 / 3.0)
    log_region = f >= 1000.0
    mel = np.where(
        log_region, 15.0 + np.log(np.maximum(f, 1e-12) / 1000.0) / np.log(6.4) * 27.0, mel
    )
    return mel


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = m * (200.0 / 3.0)
    log_region = m >= 15.0
    return np.where(log_region, 1000.0 * np.exp(np.log(6.4) * (m - 15.0) / 27.0), f)


def mel_filterbank(n_mels: int = N_MELS, fmin: float = 0.0, fmax: float = SAMPLE_RATE / 2):
    """Slaney-style triangular filters with area normalization, (n_mels, bins)."""
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    freqs = fft_bin_frequencies()
    weights = np.zeros((n_mels, freqs.size))
    for i in range(n_mels):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - freqs) / max(hi - center, 1e-12)
        weights[i] = np.maximum(0.0, np.minimum(rising, falling))
        weights[i] *= 2.0 / (hi - lo)
    return weights


def mel_spectrogram(clip: MusicClip) -> np.ndarray:
    """128-band mel power spectrogram on the shared frame grid."""
    return mel_filterbank() @ stft_power(clip)


# -- chroma and harmony --------------------------------------------------------


def _chroma_fold() -> np.ndarray:
    """(12, bins) matrix summing STFT bin energy into pitch classes; C = 0."""
    freqs = fft_bin_frequencies()
    fold = np.zeros((N_CHROMA, freqs.size))
    for k in range(1, freqs.size):
        pc = (int(round(12.0 * math.log2(freqs[k] / 440.0))) + 9) % 12
        fold[pc, k] = 1.0
    return fold


def chroma(clip: MusicClip) -> np.ndarray:
    """Pitch-class energy profile, per-frame max-normalized (A440, C = class 0)."""
    raw = _chroma_fold() @ stft_power(clip)
    peak = raw.max(axis=0, keepdims=True)
    return np.where(peak > 0, raw / np.where(peak > 0, peak, 1.0), 0.0)


CONTRAST_BAND_EDGES = (0.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 6400.0, SAMPLE_RATE / 2)
CONTRAST_QUANTILE = 0.02


def spectral_contrast(clip: MusicClip) -> np.ndarray:
    """Peak-to-valley log-power contrast: sub-band row plus 6 octave bands."""
    power = stft_power(clip)
    freqs = fft_bin_frequencies()
    out = np.zeros((N_CONTRAST, power.shape[1]))
    for i in range(N_CONTRAST):
        lo, hi = CONTRAST_BAND_EDGES[i], CONTRAST_BAND_EDGES[i + 1]
        mask = (freqs >= lo) & ((freqs < hi) if i < N_CONTRAST - 1 else (freqs <= hi))
        band = np.sort(power[mask], axis=0)
        k = max(1, int(CONTRAST_QUANTILE * band.shape[0]))
        valley = band[:k].mean(axis=0)
        peak = band[-k:].mean(axis=0)
        out[i] = np.log(peak + _LOG_EPS) - np.log(valley + _LOG_EPS)
    return out


def _tonnetz_basis() -> np.ndarray:
    p = np.arange(N_CHROMA, dtype=np.float64)
    return np.stack(
        [
            np.sin(p * 7.0 * np.pi / 6.0),
            np.cos(p * 7.0 * np.pi / 6.0),
            np.sin(p * 3.0 * np.pi / 2.0),
            np.cos(p * 3.0 * np.pi / 2.0),
            0.5 * np.sin(p * 2.0 * np.pi / 3.0),
            0.5 * np.cos(p * 2.0 * np.pi / 3.0),
        ]
    )


def tonnetz(clip: MusicClip) -> np.ndarray:
    """Tonal centroid: L1-normalized chroma projected on the standard
    fifth/minor-third/major-third sinusoidal basis."""
    ch = chroma(clip)
    norms = ch.sum(axis=0, keepdims=True)
    ch = ch / np.where(norms > 0, norms, 1.0)
    return _tonnetz_basis() @ ch


# -- rhythm, energy, pitch ----------------------------------------------------


ONSET_SMOOTH_FRAMES = 7


def onset_strength(clip: MusicClip) -> np.ndarray:
    """Half-wave rectified log-mel flux averaged over bands; length T.

    The flux is smoothed with a centered 7-frame Hann kernel (~0.16 s) so
    periodicity mass concentrates at the beat period instead of leaking to
    frame-grid rasterization harmonics.
    """
    logmel = np.log(mel_spectrogram(clip) + _LOG_EPS)
    flux = np.maximum(0.0, np.diff(logmel, axis=1)).mean(axis=0)
    env = np.concatenate([[0.0], flux])
    kernel = get_window("hann", ONSET_SMOOTH_FRAMES, fftbins=False)
    kernel /= kernel.sum()
    return np.convolve(env, kernel, mode="same")


def tempogram(clip: MusicClip) -> np.ndarray:
    """Local autocorrelation of the onset envelope; 384 lag rows.

    Each frame takes a centered, Hann-windowed 384-frame segment of the
    onset envelope and stores its (linear) autocorrelation over lags
    0..383. Columns are left unnormalized; the feature matrix z-scoring
    standardizes them.
    """
    env = onset_strength(clip)
    w = TEMPOGRAM_WINDOW
    padded = np.pad(env, w // 2, mode="constant")
    segments = sliding_window_view(padded, w)[: env.size]
    segments = segments * get_window("hann", w, fftbins=True)
    fft_size = 1 << int(np.ceil(np.log2(2 * w - 1)))
    spec = np.fft.rfft(segments, fft_size, axis=1)
    acf = np.fft.irfft(spec.real**2 + spec.imag**2, fft_size, axis=1)[:, :w]
    return acf.T


def rms(clip: MusicClip) -> np.ndarray:
    """Per-frame root-mean-square on the shared (centered) frame grid."""
    frames = _framed(clip.samples)
    return np.sqrt(np.mean(frames**2, axis=1))[None, :]


def pitch(clip: MusicClip) -> np.ndarray:
    """Dominant spectral peak frequency per frame, refined by parabolic
    interpolation; 0 where the peak magnitude falls below 1e-4."""
    mag = stft_magnitude(clip)
    n_bins, t = mag.shape
    inner = mag[1 : n_bins - 1]
    idx = inner.argmax(axis=0) + 1
    cols = np.arange(t)
    m0 = mag[idx - 1, cols]
    m1 = mag[idx, cols]
    m2 = mag[idx + 1, cols]
    denom = m0 - 2.0 * m1 + m2
    delta = np.where(np.abs(denom) > 1e-30, 0.5 * (m0 - m2) / np.where(denom == 0, 1, denom), 0.0)
    delta = np.clip(delta, -0.5, 0.5)
    freq = (idx + delta) * (SAMPLE_RATE / N_FFT)
    return np.where(m1 >= PITCH_MIN_MAGNITUDE, freq, 0.0)[None, :]


# -- assembly ------------------------------------------------------------------


def _align(block: np.ndarray, t: int) -> np.ndarray:
    """Truncate or edge-pad a feature block to t frames."""
    if block.shape[1] == t:
        return block
    if block.shape[1] > t:
        return block[:, :t]
    return np.pad(block, ((0, 0), (0, t - block.shape[1])), mode="edge")


def build_feature_matrix(clip: MusicClip) -> np.ndarray:
    """Stack all extractors in the fixed row order and z-score each row.

    Returns float32, shape (539, T). Constant rows map to zeros.
    """
    mel = mel_spectrogram(clip)
    t = mel.shape[1]
    blocks = [
        mel,
        chroma(clip),
        spectral_contrast(clip),
        tonnetz(clip),
        tempogram(clip),
        rms(clip),
        pitch(clip),
    ]
    stacked = np.vstack([_align(b, t) for b in blocks])
    assert stacked.shape[0] == N_FEATURE_ROWS

    mean = stacked.mean(axis=1, keepdims=True)
    std = stacked.std(axis=1, keepdims=True)
    constant = std < 1e-12
    z = np.where(constant, 0.0, (stacked - mean) / np.where(constant, 1.0, std))
    if not np.all(np.isfinite(z)):
        raise DataError("feature matrix contains non-finite values")
    return z.astype(np.float32)


# -- cache file ----------------------------------------------------------------


def write_feature_cache(path, matrix: np.ndarray) -> None:
    """Binary cache: magic 'M2PF', version u16, rows u32, cols u32, then
    row-major little-endian float32 data."""
    m = np.ascontiguousarray(matrix, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<HII", CACHE_VERSION, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def read_feature_cache(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CACHE_MAGIC:
                raise DataError(f"{path}: not a feature cache (bad magic {magic!r})")
            version, rows, cols = struct.unpack("<HII", fh.read(10))
            if version != CACHE_VERSION:
                raise DataError(f"{path}: unsupported cache version {version}")
            data = fh.read(rows * cols * 4)
    except OSError as exc:
        raise DataError(f"cannot read feature cache {path}: {exc}") from exc
    if len(data) != rows * cols * 4:
        raise DataError(f"{path}: truncated feature cache")
    return np.frombuffer(data, dtype="<f4").reshape(rows, cols).copy()
