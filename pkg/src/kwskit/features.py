"""Log-mel filterbank frontend with context stacking."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer

_DUMP_MAGIC = b"KWSF"


@dataclass(frozen=True)
class FeatureConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    num_mel_bins: int = 20
    fft_size: int = 512
    context_left: int = 3
    context_right: int = 3
    log_floor: float = 1e-10

    def __post_init__(self) -> None:
        if not (self.window_ms >= self.hop_ms > 0):
            raise ValueError("need window_ms >= hop_ms > 0")
        if self.num_mel_bins < 2:
            raise ValueError("num_mel_bins must be >= 2")
        if self.context_left < 0 or self.context_right < 0:
            raise ValueError("context sizes must be >= 0")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def stacked_dim(self) -> int:
        return self.num_mel_bins * (self.context_left + 1 + self.context_right)


@dataclass(frozen=True)
class FeatureMatrix:
    """frames x dims grid of stacked log-mel features."""

    data: np.ndarray
    hop_ms: float

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"feature data must be 2-D, got shape {data.shape}")
        if data.size and not np.isfinite(data).all():
            raise ValueError("feature data contains NaN or Inf")
        object.__setattr__(self, "data", data)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_bins: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters (HTK scale) spanning 0 Hz to Nyquist.

    Returns a (num_bins, fft_size // 2 + 1) weight matrix.
    """
    n_fft_bins = fft_size // 2 + 1
    fft_freqs = np.arange(n_fft_bins) * (sample_rate / fft_size)
    edges_hz = mel_to_hz(np.linspace(0.0, float(hz_to_mel(sample_rate / 2.0)), num_bins + 2))
    weights = np.zeros((num_bins, n_fft_bins))
    for b in range(num_bins):
        left, center, right = edges_hz[b], edges_hz[b + 1], edges_hz[b + 2]
        rising = (fft_freqs - left) / max(center - left, 1e-12)
        falling = (right - fft_freqs) / max(right - center, 1e-12)
        weights[b] = np.maximum(0.0, np.minimum(rising, falling))
    return weights


def num_frames(n_samples: int, window_samples: int, hop_samples: int) -> int:
    """Closed-form frame count: 1 + floor((N - window) / hop)."""
    if n_samples < window_samples:
        raise ValueError(
            f"audio too short: {n_samples} samples < one window of {window_samples}"
        )
    return 1 + (n_samples - window_samples) // hop_samples


def compute_features(audio: AudioBuffer, config: FeatureConfig) -> FeatureMatrix:
    """Framed log-mel energies, per-utterance mean-normalized, context-stacked.

    Pipeline: Hann window, magnitude-squared FFT, triangular mel filterbank,
    natural log with a floor, per-bin mean subtraction over the utterance,
    then stacking of [t-left .. t+right] with edge-frame replication.
    """
    sr = audio.sample_rate
    win = int(round(config.window_ms * sr / 1000.0))
    hop = int(round(config.hop_ms * sr / 1000.0))
    if config.fft_size < win:
        raise ValueError(f"fft_size {config.fft_size} < window of {win} samples")
    frames = num_frames(len(audio), win, hop)

    idx = hop * np.arange(frames)[:, None] + np.arange(win)[None, :]
    windowed = audio.samples[idx] * np.hanning(win)[None, :]
    power = np.abs(np.fft.rfft(windowed, n=config.fft_size, axis=1)) ** 2
    mel_energy = power @ mel_filterbank(config.num_mel_bins, config.fft_size, sr).T
    log_mel = np.log(np.maximum(mel_energy, config.log_floor))
    log_mel = log_mel - log_mel.mean(axis=0)

    offsets = range(-config.context_left, config.context_right + 1)
    stacked = np.concatenate(
        [log_mel[np.clip(np.arange(frames) + off, 0, frames - 1)] for off in offsets],
        axis=1,
    )
    return FeatureMatrix(stacked, config.hop_ms)


def write_feature_dump(features: FeatureMatrix, path: str | Path) -> None:
    """Debug dump: 16-byte header (magic, u32 frames, u32 dims, u32 reserved)
    followed by row-major little-endian float32 data."""
    data = features.data.astype("<f4")
    header = _DUMP_MAGIC + struct.pack("<III", data.shape[0], data.shape[1], 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_feature_dump(path: str | Path, hop_ms: float = 10.0) -> FeatureMatrix:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != _DUMP_MAGIC:
            raise ValueError(f"{path}: not a feature dump (bad magic)")
        frames, dims, _ = struct.unpack("<III", header[4:])
        data = np.frombuffer(fh.read(frames * dims * 4), dtype="<f4")
    if data.size != frames * dims:
        raise ValueError(f"{path}: truncated feature dump")
    return FeatureMatrix(data.reshape(frames, dims).astype(np.float64), hop_ms)
