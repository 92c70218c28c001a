"""Corruption model: reverberate interference, pick a target SIR, scale, mix.

The pipeline per utterance is: convolve an interference clip with a room
impulse response, crop the result to the utterance length, compute the scale
factor that realizes a target speech-to-interference ratio, and add the scaled
interference to the clean speech. Everything is keyed off per-utterance seeds
so corpora are reproducible file-for-file regardless of processing order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .audio import SAMPLE_RATE, AudioBuffer, energy, load_wav, save_wav
from .manifest import read_manifest, resolve_wav_path, write_manifest
from .seeds import derive_seed


@dataclass(frozen=True)
class RoomImpulseResponse:
    """FIR filter characterizing a room; convolution simulates far-field capture."""

    taps: np.ndarray
    sample_rate: int = SAMPLE_RATE
    label: str = "rir"

    def __post_init__(self) -> None:
        taps = np.array(self.taps, dtype=np.float64, copy=True)
        if taps.ndim != 1 or taps.size < 1:
            raise ValueError("RIR needs at least one tap")
        if not np.isfinite(taps).all():
            raise ValueError("RIR taps contain NaN or Inf")
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)


@dataclass(frozen=True)
class SirRange:
    low_db: float
    high_db: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.low_db) and math.isfinite(self.high_db)):
            raise ValueError("SIR bounds must be finite")
        if self.low_db > self.high_db:
            raise ValueError(f"SIR range inverted: [{self.low_db}, {self.high_db}]")


@dataclass
class AugmentationSpec:
    """Everything that determines a corruption run."""

    sir_range: SirRange
    interference_manifest: Path
    rir_set: list[RoomImpulseResponse]
    master_seed: int

    def __post_init__(self) -> None:
        if not self.rir_set:
            raise ValueError("rir_set must be non-empty")


@dataclass
class CorruptionRecord:
    """Provenance of one corrupted utterance, enough to rebuild it exactly."""

    utterance_id: str
    interference_id: str
    rir_label: str
    target_sir_db: float
    alpha: float
    crop_offset: int


def convolve(signal: AudioBuffer, rir: RoomImpulseResponse) -> AudioBuffer:
    """Full linear convolution; output length is len(signal) + len(taps) - 1."""
    if signal.sample_rate != rir.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: signal {signal.sample_rate} Hz vs RIR {rir.sample_rate} Hz"
        )
    out = fftconvolve(signal.samples, rir.taps, mode="full")
    return AudioBuffer(out, signal.sample_rate)


def synth_rir(
    rt60_seconds: float,
    length_samples: int,
    seed: int,
    sample_rate: int = SAMPLE_RATE,
    label: str | None = None,
) -> RoomImpulseResponse:
    """Synthetic RIR: seeded white noise under an exponential RT60 decay.

    The envelope reaches -60 dB (amplitude 1e-3) at rt60_seconds; the first
    tap is forced to 1 before peak normalization so there is always a direct
    path.
    """
    if rt60_seconds <= 0:
        raise ValueError("rt60 must be positive")
    if length_samples < 1:
        raise ValueError("length_samples must be >= 1")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(length_samples)
    noise[0] = 1.0
    n = np.arange(length_samples)
    envelope = np.exp(-(3.0 * math.log(10.0)) * n / (rt60_seconds * sample_rate))
    taps = noise * envelope
    taps /= np.max(np.abs(taps))
    if label is None:
        label = f"synth-rt60-{rt60_seconds:g}s-seed{seed}"
    return RoomImpulseResponse(taps, sample_rate, label)


def sample_sir(sir_range: SirRange, rng: np.random.Generator) -> float:
    """Uniform draw from the configured SIR range, in dB."""
    return float(rng.uniform(sir_range.low_db, sir_range.high_db))


def crop_random(
    interference: AudioBuffer, length: int, rng: np.random.Generator
) -> tuple[AudioBuffer, int]:
    """Contiguous crop of exactly `length` samples at a uniform random offset.

    Interference shorter than `length` is tiled by repetition first, which
    forces offset 0.
    """
    if length < 1:
        raise ValueError("crop length must be >= 1")
    if not len(interference):
        raise ValueError("cannot crop an empty interference buffer")
    samples = interference.samples
    if samples.size < length:
        reps = -(-length // samples.size)
        samples = np.tile(samples, reps)[:length]
    max_offset = samples.size - length
    offset = int(rng.integers(0, max_offset + 1))
    return AudioBuffer(samples[offset : offset + length], interference.sample_rate), offset


def compute_alpha(
    speech: AudioBuffer, interference: AudioBuffer, target_sir_db: float
) -> float:
    """Scale factor that realizes the target SIR when applied to interference.

    alpha = sqrt(E_speech) / sqrt(E_interference) * 10^(-SIR/20).
    """
    if len(speech) != len(interference):
        raise ValueError(
            f"length mismatch: speech {len(speech)} vs interference {len(interference)}"
        )
    e_speech = energy(speech)
    e_interf = energy(interference)
    if e_interf <= 0.0:
        raise ValueError("interference has zero energy; cannot realize any SIR")
    if e_speech <= 0.0:
        # alpha = 0 would silently leave the audio clean, which lies about the
        # corpus contents.
        raise ValueError("speech has zero energy; refusing to emit a clean mixture")
    return math.sqrt(e_speech) / math.sqrt(e_interf) * 10.0 ** (-target_sir_db / 20.0)


def measure_sir(speech: AudioBuffer, scaled_interference: AudioBuffer) -> float:
    """SIR in dB over whole buffers: 20*log10 of the energy-root ratio."""
    if len(speech) != len(scaled_interference):
        raise ValueError(
            f"length mismatch: speech {len(speech)} vs interference {len(scaled_interference)}"
        )
    e_speech = energy(speech)
    e_interf = energy(scaled_interference)
    if e_speech <= 0.0 or e_interf <= 0.0:
        raise ValueError("SIR is undefined for a zero-energy operand")
    return 20.0 * math.log10(math.sqrt(e_speech) / math.sqrt(e_interf))


def mix(utterance: AudioBuffer, interference: AudioBuffer, alpha: float) -> AudioBuffer:
    """Additive corruption: utterance + alpha * interference, no clipping here."""
    if utterance.sample_rate != interference.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: {utterance.sample_rate} vs {interference.sample_rate}"
        )
    if len(utterance) != len(interference):
        raise ValueError(
            f"length mismatch: {len(utterance)} vs {len(interference)}"
        )
    return AudioBuffer(
        utterance.samples + float(alpha) * interference.samples, utterance.sample_rate
    )


# ---------------------------------------------------------------------------
# Whole-corpus corruption


class _Corruptor:
    """Per-worker state for corrupting utterances; reverb results are cached."""

    def __init__(self, spec: AugmentationSpec, clean_manifest_path: Path, out_dir: Path):
        self.spec = spec
        self.clean_manifest_path = Path(clean_manifest_path)
        self.out_dir = Path(out_dir)
        self.interference_entries = sorted(
            read_manifest(spec.interference_manifest), key=lambda e: e["id"]
        )
        if not self.interference_entries:
            raise ValueError(f"interference manifest {spec.interference_manifest} is empty")
        self._reverb_cache: dict[tuple[str, str], AudioBuffer] = {}

    def _reverberated(self, interference_entry: dict, rir: RoomImpulseResponse) -> AudioBuffer:
        key = (interference_entry["id"], rir.label)
        cached = self._reverb_cache.get(key)
        if cached is None:
            wav = load_wav(resolve_wav_path(self.spec.interference_manifest, interference_entry))
            cached = convolve(wav, rir)
            self._reverb_cache[key] = cached
        return cached

    def corrupt_one(self, entry: dict) -> tuple[dict, CorruptionRecord]:
        utt_id = entry["id"]
        rng = np.random.default_rng(derive_seed(self.spec.master_seed, utt_id))
        interference_entry = self.interference_entries[
            int(rng.integers(0, len(self.interference_entries)))
        ]
        rir = self.spec.rir_set[int(rng.integers(0, len(self.spec.rir_set)))]

        speech = load_wav(resolve_wav_path(self.clean_manifest_path, entry))
        reverberated = self._reverberated(interference_entry, rir)
        cropped, offset = crop_random(reverberated, len(speech), rng)
        target_sir = sample_sir(self.spec.sir_range, rng)
        alpha = compute_alpha(speech, cropped, target_sir)
        corrupted = mix(speech, cropped, alpha)

        wav_rel = Path("wavs") / f"{utt_id}.wav"
        save_wav(corrupted, self.out_dir / wav_rel)

        record = CorruptionRecord(
            utterance_id=utt_id,
            interference_id=interference_entry["id"],
            rir_label=rir.label,
            target_sir_db=target_sir,
            alpha=alpha,
            crop_offset=offset,
        )
        out_entry = dict(entry)
        out_entry["wav"] = wav_rel.as_posix()
        out_entry["target_sir_db"] = target_sir
        out_entry["interference_id"] = record.interference_id
        out_entry["rir_label"] = record.rir_label
        out_entry["alpha"] = alpha
        out_entry["crop_offset"] = offset
        return out_entry, record


_worker_state: _Corruptor | None = None


def _init_worker(spec: AugmentationSpec, clean_manifest_path: Path, out_dir: Path) -> None:
    global _worker_state
    _worker_state = _Corruptor(spec, clean_manifest_path, out_dir)


def _corrupt_in_worker(entry: dict):
    assert _worker_state is not None
    try:
        return _worker_state.corrupt_one(entry)
    except Exception as exc:  # collected and re-judged by the caller
        return (entry["id"], f"{type(exc).__name__}: {exc}")


def augment_corpus(
    clean_manifest_path: str | Path,
    spec: AugmentationSpec,
    output_dir: str | Path,
    jobs: int = 1,
) -> tuple[list[dict], list[CorruptionRecord]]:
    """Corrupt every utterance in a clean manifest; write WAVs and a manifest.

    Per-utterance randomness is seeded by hash(master_seed, utterance_id), so
    results do not depend on manifest order or worker scheduling. Individual
    failures are skipped; the run aborts only if more than 1% of utterances
    fail. Returns the corrupted manifest entries (sorted by id) and their
    corruption records.
    """
    clean_manifest_path = Path(clean_manifest_path)
    output_dir = Path(output_dir)
    (output_dir / "wavs").mkdir(parents=True, exist_ok=True)
    entries = read_manifest(clean_manifest_path)
    if not entries:
        raise ValueError(f"clean manifest {clean_manifest_path} is empty")

    results: list[tuple[dict, CorruptionRecord]] = []
    failures: list[tuple[str, str]] = []
    if jobs > 1:
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_init_worker,
            initargs=(spec, clean_manifest_path, output_dir),
        ) as pool:
            for outcome in pool.map(_corrupt_in_worker, entries, chunksize=16):
                if isinstance(outcome[1], CorruptionRecord):
                    results.append(outcome)
                else:
                    failures.append(outcome)
    else:
        corruptor = _Corruptor(spec, clean_manifest_path, output_dir)
        for entry in entries:
            try:
                results.append(corruptor.corrupt_one(entry))
            except Exception as exc:
                failures.append((entry["id"], f"{type(exc).__name__}: {exc}"))

    if len(failures) > 0.01 * len(entries):
        detail = "; ".join(f"{uid}: {msg}" for uid, msg in failures[:5])
        raise RuntimeError(
            f"{len(failures)}/{len(entries)} utterances failed corruption: {detail}"
        )

    results.sort(key=lambda pair: pair[0]["id"])
    out_entries = [entry for entry, _ in results]
    records = [record for _, record in results]
    write_manifest(output_dir / "manifest.jsonl", out_entries)
    return out_entries, records
