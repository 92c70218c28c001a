"""Mono audio buffers, 16-bit WAV I/O, and energy/scaling primitives."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Canonical rate for the whole toolkit; operations that combine two buffers
# require equal rates and never resample.
SAMPLE_RATE = 16000

PCM_FULL_SCALE = 32768.0


class WavFormatError(ValueError):
    """A WAV file is not mono 16-bit linear PCM."""


@dataclass(frozen=True)
class AudioBuffer:
    """Immutable mono signal; float64 samples, nominal range [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=np.float64, copy=True)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if samples.size and not np.isfinite(samples).all():
            raise ValueError("samples contain NaN or Inf")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_seconds(self) -> float:
        return self.samples.size / self.sample_rate


def load_wav(path: str | Path) -> AudioBuffer:
    """Read a mono 16-bit PCM WAV file; samples are scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as reader:
            channels = reader.getnchannels()
            sample_width = reader.getsampwidth()
            sample_rate = reader.getframerate()
            n_frames = reader.getnframes()
            if channels != 1:
                raise WavFormatError(
                    f"{path}: expected mono audio, got {channels} channels"
                )
            if sample_width != 2:
                raise WavFormatError(
                    f"{path}: expected 16-bit PCM, got {8 * sample_width}-bit"
                )
            raw = reader.readframes(n_frames)
    except wave.Error as exc:
        raise WavFormatError(f"{path}: not a supported PCM WAV file ({exc})") from exc
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float64) / PCM_FULL_SCALE, sample_rate)


def save_wav(buffer: AudioBuffer, path: str | Path) -> None:
    """Write mono 16-bit PCM; samples are clipped to [-1, 1] then rounded."""
    clipped = np.clip(buffer.samples, -1.0, 1.0)
    pcm = np.rint(clipped * PCM_FULL_SCALE)
    pcm = np.clip(pcm, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as writer:
        writer.setnchannels(1)
        writer.setsampwidth(2)
        writer.setframerate(buffer.sample_rate)
        writer.writeframes(pcm.tobytes())


def energy(buffer: AudioBuffer) -> float:
    """Sum of squared samples (empty buffer has zero energy)."""
    if not len(buffer):
        return 0.0
    return float(np.dot(buffer.samples, buffer.samples))


def scale(buffer: AudioBuffer, factor: float) -> AudioBuffer:
    """Multiply every sample by `factor`; length and rate are preserved."""
    if not np.isfinite(factor):
        raise ValueError(f"scale factor must be finite, got {factor}")
    return AudioBuffer(buffer.samples * float(factor), buffer.sample_rate)
