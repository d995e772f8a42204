"""Audio frontend: raw mono audio to the fixed-size log-mel matrix the scorer expects.

Framing rule: analysis frames start every hop; a signal of L samples yields
floor(L / hop) frames, and each window is zero-padded past the signal end.
Ten seconds at 16 kHz with a 10 ms hop therefore gives exactly 1000 frames,
and appending less than one hop of trailing silence to a hop-aligned signal
leaves the output unchanged.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .datamodel import Spectrogram
from .errors import ValidationError
from .validation import check_positive

# Energies are floored before the log so silence maps to log(EPS), not -inf.
LOG_EPS = 1e-10
LOG_FLOOR = float(np.log(LOG_EPS))


@dataclass(frozen=True)
class FrontendParams:
    n_mels: int = 128
    win_ms: float = 25.0
    hop_ms: float = 10.0
    target_frames: int = 1024
    norm_mean: float = 0.0
    norm_std: float = 1.0

    def __post_init__(self):
        check_positive(self.n_mels, "n_mels")
        check_positive(self.win_ms, "win_ms")
        check_positive(self.hop_ms, "hop_ms")
        check_positive(self.target_frames, "target_frames")
        if self.hop_ms > self.win_ms:
            raise ValidationError(
                f"hop_ms ({self.hop_ms}) must not exceed win_ms ({self.win_ms})",
                code="OUT_OF_RANGE",
            )
        if self.norm_std <= 0:
            raise ValidationError("norm_std must be positive", code="ZERO_STD")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: float, n_fft: int, n_mels: int) -> np.ndarray:
    """Triangular mel filters spanning 0 Hz to Nyquist, shape (n_mels, n_fft//2 + 1)."""
    n_bins = n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * sample_rate / n_fft
    mel_edges = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_edges = mel_to_hz(mel_edges)
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = hz_edges[m], hz_edges[m + 1], hz_edges[m + 2]
        rising = (fft_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - fft_freqs) / max(hi - center, 1e-12)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def _hann(win_length: int) -> np.ndarray:
    # Periodic von-Hann window.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win_length) / win_length)


def compute_logmel(waveform, sample_rate: float, p: FrontendParams) -> Spectrogram:
    """Log-mel spectrogram of a mono waveform, one row per hop.

    Each frame is the mel-filtered power spectrum of a Hann-windowed slice,
    floored at LOG_EPS and taken through the natural log.
    """
    x = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValidationError("waveform is empty", code="EMPTY_AUDIO")
    if not np.isfinite(x).all():
        raise ValidationError("waveform holds non-finite samples", code="NON_FINITE_SAMPLES")
    check_positive(sample_rate, "sample_rate")

    win = int(round(p.win_ms * sample_rate / 1000.0))
    hop = int(round(p.hop_ms * sample_rate / 1000.0))
    win = max(win, 1)
    hop = max(hop, 1)
    n_fft = 1
    while n_fft < win:
        n_fft *= 2

    n_frames = max(x.size // hop, 1)
    needed = (n_frames - 1) * hop + win
    padded = np.zeros(needed)
    take = min(needed, x.size)
    padded[:take] = x[:take]

    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * _hann(win)[None, :]
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    mel = power @ mel_filterbank(sample_rate, n_fft, p.n_mels).T
    values = np.log(np.maximum(mel, LOG_EPS))
    return Spectrogram(values=values, frame_hop_ms=p.hop_ms, n_mels=p.n_mels)


def fit_to_length(s: Spectrogram, t_target: int, pad_value: float = LOG_FLOOR) -> Spectrogram:
    """Truncate or floor-pad a spectrogram to exactly t_target frames."""
    check_positive(t_target, "t_target")
    t, f = s.shape
    if t == t_target:
        return s
    if t > t_target:
        return s.with_values(s.values[:t_target])
    out = np.full((t_target, f), pad_value)
    out[:t] = s.values
    return s.with_values(out)


def normalize(s: Spectrogram, mean: float, std: float) -> Spectrogram:
    """Elementwise (x - mean) / std."""
    if std <= 0:
        raise ValidationError(f"std must be positive, got {std}", code="ZERO_STD")
    return s.with_values((s.values - mean) / std)


def prepare(s: Spectrogram, p: FrontendParams) -> Spectrogram:
    """Full post-processing chain: fixed length, then standardization."""
    s = fit_to_length(s, p.target_frames)
    if p.norm_mean != 0.0 or p.norm_std != 1.0:
        s = normalize(s, p.norm_mean, p.norm_std)
    return s


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read an uncompressed PCM wave file; channels are averaged to mono.

    Returns float64 samples in [-1, 1] and the sample rate. 16- and 32-bit
    signed and 8-bit unsigned PCM are supported.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"audio file not found: {path}", code="EMPTY_AUDIO")
    with wave.open(str(path), "rb") as w:
        n_channels = w.getnchannels()
        width = w.getsampwidth()
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    if width == 2:
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 4:
        samples = np.frombuffer(raw, dtype="<i4").astype(np.float64) / 2147483648.0
    elif width == 1:
        samples = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    else:
        raise ValidationError(f"unsupported PCM sample width {width}", code="EMPTY_AUDIO")
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return samples, rate


def load_audio(path, decoder: Callable[[Path], tuple[np.ndarray, int]] | None = None):
    """Read audio, delegating non-wave formats to a pluggable decoder hook."""
    path = Path(path)
    if path.suffix.lower() == ".wav" or decoder is None:
        return read_wav(path)
    return decoder(path)
