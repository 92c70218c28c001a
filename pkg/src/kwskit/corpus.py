"""Synthetic corpus and interference generation, manifest splitting, targets.

Utterances are rendered as concatenated two-tone phone segments bracketed by
low-level noise pads, so frame-level training targets are known exactly from
the construction. Positives embed the keyword phone sequence exactly once;
negatives are guaranteed not to contain it contiguously.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter

from .audio import SAMPLE_RATE, AudioBuffer, save_wav
from .decoder import BG_NONSPEECH, BG_SPEECH, DecodingGraph
from .manifest import write_manifest
from .seeds import derive_seed

SILENCE = "sil"


@dataclass(frozen=True)
class PhoneSet:
    """Toy phones, each with a distinct two-tone spectral signature."""

    symbols: tuple[str, ...]
    formants_hz: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.symbols) != len(set(self.symbols)):
            raise ValueError("phone symbols must be unique")
        if len(self.symbols) != len(self.formants_hz):
            raise ValueError("each phone needs a signature")
        nyquist = SAMPLE_RATE / 2.0
        for pair in self.formants_hz:
            if not all(0.0 < f < nyquist for f in pair):
                raise ValueError(f"signature {pair} outside (0, {nyquist}) Hz")
        if len(set(self.formants_hz)) != len(self.formants_hz):
            raise ValueError("phone signatures must be pairwise distinct")

    def index(self, symbol: str) -> int:
        return self.symbols.index(symbol)

    @property
    def num_aux_classes(self) -> int:
        # phones plus one silence class for the auxiliary head
        return len(self.symbols) + 1

    @property
    def silence_class(self) -> int:
        return len(self.symbols)


# Tone pairs sit near mel filterbank centers and are pairwise distinct, so a
# small DNN can separate them from 20-bin log-mel features.
DEFAULT_PHONE_SET = PhoneSet(
    symbols=("ax", "l", "eh", "k", "s", "ah", "iy", "m", "t", "r", "n", "ow"),
    formants_hz=(
        (430.0, 1620.0),
        (300.0, 1920.0),
        (580.0, 2250.0),
        (1130.0, 3050.0),
        (1360.0, 3530.0),
        (740.0, 1620.0),
        (300.0, 2630.0),
        (430.0, 2250.0),
        (1130.0, 2630.0),
        (580.0, 1920.0),
        (920.0, 2250.0),
        (740.0, 1920.0),
    ),
)

DEFAULT_KEYWORD = ("ax", "l", "eh", "k", "s", "ah")


@dataclass
class CorpusConfig:
    keyword: tuple[str, ...] = DEFAULT_KEYWORD
    phone_set: PhoneSet = field(default_factory=lambda: DEFAULT_PHONE_SET)
    # (positives, negatives) per split
    counts: dict = field(
        default_factory=lambda: {"train": (500, 500), "dev": (100, 100), "test": (200, 200)}
    )
    phone_duration_ms: tuple[float, float] = (60.0, 120.0)
    silence_ms: tuple[float, float] = (80.0, 160.0)
    filler_phones: tuple[int, int] = (2, 5)
    tone_amplitudes: tuple[float, float] = (0.35, 0.25)
    noise_level: float = 0.004
    seed: int = 0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        if not self.keyword:
            raise ValueError("keyword phone sequence is empty")
        unknown = [p for p in self.keyword if p not in self.phone_set.symbols]
        if unknown:
            raise ValueError(f"keyword uses unknown phones: {unknown}")
        for split, (pos, neg) in self.counts.items():
            if pos < 1 or neg < 1:
                raise ValueError(f"split {split!r} needs at least one of each label")


def _contains_contiguous(sequence: list[str], needle: tuple[str, ...]) -> int:
    count = 0
    n = len(needle)
    for i in range(len(sequence) - n + 1):
        if tuple(sequence[i : i + n]) == needle:
            count += 1
    return count


def _positive_phones(config: CorpusConfig, rng: np.random.Generator) -> list[str]:
    symbols = config.phone_set.symbols
    lo, hi = config.filler_phones
    for _ in range(200):
        n_fill = int(rng.integers(lo, hi + 1))
        n_before = int(rng.integers(0, n_fill + 1))
        fillers = [symbols[int(rng.integers(0, len(symbols)))] for _ in range(n_fill)]
        phones = fillers[:n_before] + list(config.keyword) + fillers[n_before:]
        if _contains_contiguous(phones, config.keyword) == 1:
            return phones
    raise RuntimeError("could not construct a single-occurrence positive")


def _negative_phones(config: CorpusConfig, rng: np.random.Generator) -> list[str]:
    symbols = config.phone_set.symbols
    lo, hi = config.filler_phones
    n_phones = len(config.keyword) + int(rng.integers(lo, hi + 1))
    for _ in range(200):
        phones = [symbols[int(rng.integers(0, len(symbols)))] for _ in range(n_phones)]
        if _contains_contiguous(phones, config.keyword) == 0:
            return phones
    raise RuntimeError("could not construct a keyword-free negative")


def render_utterance(
    phones: list[str], config: CorpusConfig, rng: np.random.Generator
) -> tuple[AudioBuffer, list[list]]:
    """Render a phone sequence; returns audio and [symbol, start, end) segments."""
    sr = config.sample_rate
    dur_lo, dur_hi = config.phone_duration_ms
    sil_lo, sil_hi = config.silence_ms
    a1, a2 = config.tone_amplitudes

    plan = [SILENCE] + list(phones) + [SILENCE]
    pieces = []
    segments = []
    cursor = 0
    for symbol in plan:
        if symbol == SILENCE:
            dur_ms = rng.uniform(sil_lo, sil_hi)
        else:
            dur_ms = rng.uniform(dur_lo, dur_hi)
        n = max(1, int(round(dur_ms * sr / 1000.0)))
        piece = config.noise_level * rng.standard_normal(n)
        if symbol != SILENCE:
            f1, f2 = config.phone_set.formants_hz[config.phone_set.index(symbol)]
            t = np.arange(n) / sr
            piece = piece + a1 * np.sin(
                2.0 * math.pi * f1 * t + rng.uniform(0.0, 2.0 * math.pi)
            )
            piece = piece + a2 * np.sin(
                2.0 * math.pi * f2 * t + rng.uniform(0.0, 2.0 * math.pi)
            )
        pieces.append(piece)
        segments.append([symbol, cursor, cursor + n])
        cursor += n
    return AudioBuffer(np.concatenate(pieces), sr), segments


def generate_corpus(config: CorpusConfig, out_dir: str | Path) -> dict[str, list[dict]]:
    """Render all splits to <out_dir>/wavs plus one JSONL manifest per split.

    Rendering is keyed by per-utterance seeds derived from the config seed
    and the utterance id, so the corpus is byte-identical across runs and
    unaffected by generation order.
    """
    out_dir = Path(out_dir)
    (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
    manifests: dict[str, list[dict]] = {}
    for split, (n_pos, n_neg) in sorted(config.counts.items()):
        entries = []
        for label, count in (("keyword", n_pos), ("non-keyword", n_neg)):
            short = "pos" if label == "keyword" else "neg"
            for i in range(count):
                utt_id = f"{split}-{short}-{i:04d}"
                rng = np.random.default_rng(derive_seed(config.seed, utt_id))
                if label == "keyword":
                    phones = _positive_phones(config, rng)
                else:
                    phones = _negative_phones(config, rng)
                audio, segments = render_utterance(phones, config, rng)
                wav_rel = Path("wavs") / f"{utt_id}.wav"
                save_wav(audio, out_dir / wav_rel)
                entries.append(
                    {
                        "id": utt_id,
                        "wav": wav_rel.as_posix(),
                        "label": label,
                        "phones": phones,
                        "split": split,
                        "segments": segments,
                    }
                )
        write_manifest(out_dir / f"{split}.jsonl", entries)
        manifests[split] = sorted(entries, key=lambda e: e["id"])
    return manifests


# ---------------------------------------------------------------------------
# Interference material


def _render_music(total_samples: int, sr: int, rng: np.random.Generator):
    """Chords of a fundamental plus two overtones, 0.5-2 s per chord."""
    pieces, segments, cursor = [], [], 0
    while cursor < total_samples:
        n = int(round(rng.uniform(0.5, 2.0) * sr))
        n = min(n, total_samples - cursor)
        f0 = rng.uniform(180.0, 600.0)
        t = np.arange(n) / sr
        chord = np.zeros(n)
        for harmonic, amp in ((1, 0.4), (2, 0.25), (3, 0.15)):
            chord += amp * np.sin(2.0 * math.pi * harmonic * f0 * t + rng.uniform(0, 2 * math.pi))
        pieces.append(chord)
        segments.append(["chord", cursor, cursor + n, round(f0, 3)])
        cursor += n
    return np.concatenate(pieces), segments


def _render_movie(total_samples: int, sr: int, rng: np.random.Generator):
    """Alternating low-passed noise bursts and isolated tones."""
    pieces, segments, cursor = [], [], 0
    burst = True
    while cursor < total_samples:
        if burst:
            n = int(round(rng.uniform(0.4, 1.2) * sr))
            n = min(n, total_samples - cursor)
            cutoff = rng.uniform(800.0, 2000.0)
            b, a = butter(2, cutoff / (sr / 2.0), btype="low")
            noise = lfilter(b, a, rng.standard_normal(n))
            rms = math.sqrt(float(np.mean(noise**2))) or 1.0
            piece = 0.15 * noise / rms
            segments.append(["noise", cursor, cursor + n, round(cutoff, 3)])
        else:
            n = int(round(rng.uniform(0.2, 0.8) * sr))
            n = min(n, total_samples - cursor)
            freq = rng.uniform(300.0, 3000.0)
            t = np.arange(n) / sr
            piece = 0.3 * np.sin(2.0 * math.pi * freq * t + rng.uniform(0, 2 * math.pi))
            segments.append(["tone", cursor, cursor + n, round(freq, 3)])
        pieces.append(piece)
        cursor += n
        burst = not burst
    return np.concatenate(pieces), segments


def generate_interference(
    kind: str,
    total_seconds: float,
    seed: int,
    out_dir: str | Path,
    clip_seconds: float = 10.0,
    sample_rate: int = SAMPLE_RATE,
) -> list[dict]:
    """Render interference clips of one kind and write WAVs plus a manifest."""
    if kind not in ("music", "movie"):
        raise ValueError(f"unknown interference kind {kind!r}")
    if total_seconds < 1:
        raise ValueError("total_seconds must be >= 1")
    out_dir = Path(out_dir)
    (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
    render = _render_music if kind == "music" else _render_movie

    n_clips = max(1, int(round(total_seconds / clip_seconds)))
    clip_samples = int(round(total_seconds * sample_rate / n_clips))
    entries = []
    for i in range(n_clips):
        clip_id = f"{kind}-{i:03d}"
        rng = np.random.default_rng(derive_seed(seed, clip_id))
        samples, segments = render(clip_samples, sample_rate, rng)
        peak = float(np.max(np.abs(samples)))
        if peak > 0.9:
            samples = samples * (0.9 / peak)
        wav_rel = Path("wavs") / f"{clip_id}.wav"
        save_wav(AudioBuffer(samples, sample_rate), out_dir / wav_rel)
        entries.append(
            {
                "id": clip_id,
                "wav": wav_rel.as_posix(),
                "kind": kind,
                "segments": segments,
            }
        )
    write_manifest(out_dir / "manifest.jsonl", entries)
    return entries


def split_manifest(
    entries: list[dict], ratios: tuple[float, float, float], seed: int
) -> dict[str, list[dict]]:
    """Stratified seeded split into train/dev/test with the given ratios."""
    if any(r <= 0 for r in ratios):
        raise ValueError("all split ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    rng = np.random.default_rng(seed)
    names = ("train", "dev", "test")
    out: dict[str, list[dict]] = {name: [] for name in names}
    labels = sorted({e["label"] for e in entries})
    for label in labels:
        group = sorted((e for e in entries if e["label"] == label), key=lambda e: e["id"])
        order = rng.permutation(len(group))
        n = len(group)
        bounds = [int(round(n * ratios[0])), int(round(n * (ratios[0] + ratios[1])))]
        chunks = (order[: bounds[0]], order[bounds[0] : bounds[1]], order[bounds[1] :])
        for name, chunk in zip(names, chunks):
            for idx in chunk:
                entry = dict(group[idx])
                entry["split"] = name
                out[name].append(entry)
    for name in names:
        if not out[name]:
            raise ValueError(f"split {name!r} would be empty with ratios {ratios}")
        out[name].sort(key=lambda e: e["id"])
    return out


# ---------------------------------------------------------------------------
# Frame-level targets from construction-time segment boundaries


def keyword_span(phones: list[str], keyword: tuple[str, ...]) -> tuple[int, int] | None:
    """(start, end) phone indices of the unique keyword occurrence, if any."""
    hits = [
        i
        for i in range(len(phones) - len(keyword) + 1)
        if tuple(phones[i : i + len(keyword)]) == tuple(keyword)
    ]
    if not hits:
        return None
    if len(hits) > 1:
        raise ValueError("utterance contains the keyword more than once")
    return hits[0], hits[0] + len(keyword)


def targets_from_segments(
    segments: list[list],
    keyword: tuple[str, ...],
    phone_set: PhoneSet,
    graph: DecodingGraph,
    n_frames: int,
    window_samples: int,
    hop_samples: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame (keyword-state, aux-phone) targets from segment boundaries.

    A frame belongs to the segment containing its center sample. Keyword
    phones map onto the chain states (split evenly across sub-states when a
    phone has several); other speech maps to the background-speech state and
    pads to the background non-speech state.
    """
    spp = graph.topology.states_per_phone if graph.topology else 1
    phones = [symbol for symbol, _, _ in segments if symbol != SILENCE]
    span = keyword_span(phones, keyword)

    # keyword position for each segment index, or -1
    kw_pos_of_segment = []
    speech_i = 0
    for symbol, _, _ in segments:
        if symbol == SILENCE:
            kw_pos_of_segment.append(-1)
            continue
        pos = speech_i - span[0] if span and span[0] <= speech_i < span[1] else -1
        kw_pos_of_segment.append(pos)
        speech_i += 1

    starts = np.array([start for _, start, _ in segments])
    kw_targets = np.empty(n_frames, dtype=np.int64)
    aux_targets = np.empty(n_frames, dtype=np.int64)
    for t in range(n_frames):
        center = t * hop_samples + window_samples // 2
        seg = int(np.searchsorted(starts, center, side="right")) - 1
        seg = min(max(seg, 0), len(segments) - 1)
        symbol, seg_start, seg_end = segments[seg][0], segments[seg][1], segments[seg][2]
        if symbol == SILENCE:
            kw_targets[t] = BG_NONSPEECH
            aux_targets[t] = phone_set.silence_class
            continue
        aux_targets[t] = phone_set.index(symbol)
        pos = kw_pos_of_segment[seg]
        if pos < 0:
            kw_targets[t] = BG_SPEECH
        else:
            frac = (center - seg_start) / max(seg_end - seg_start, 1)
            sub = min(spp - 1, int(frac * spp))
            kw_targets[t] = graph.chain_states[pos * spp + sub]
    return kw_targets, aux_targets


def forced_chain_from_segments(
    segments: list[list],
    keyword: tuple[str, ...],
    phone_set: PhoneSet,
    graph: DecodingGraph,
) -> tuple[list[int], list[int]]:
    """Ground-truth (state, phone) chain for forced alignment, one entry per
    segment (keyword phones expand to their sub-states)."""
    spp = graph.topology.states_per_phone if graph.topology else 1
    phones = [symbol for symbol, _, _ in segments if symbol != SILENCE]
    span = keyword_span(phones, keyword)
    chain_states: list[int] = []
    chain_phones: list[int] = []
    speech_i = 0
    for symbol, _, _ in segments:
        if symbol == SILENCE:
            chain_states.append(BG_NONSPEECH)
            chain_phones.append(phone_set.silence_class)
            continue
        if span and span[0] <= speech_i < span[1]:
            pos = speech_i - span[0]
            for sub in range(spp):
                chain_states.append(graph.chain_states[pos * spp + sub])
                chain_phones.append(phone_set.index(symbol))
        else:
            chain_states.append(BG_SPEECH)
            chain_phones.append(phone_set.index(symbol))
        speech_i += 1
    return chain_states, chain_phones
