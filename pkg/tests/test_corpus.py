import numpy as np
import pytest

from kwskit.audio import load_wav
from kwskit.corpus import (
    DEFAULT_KEYWORD,
    DEFAULT_PHONE_SET,
    CorpusConfig,
    PhoneSet,
    SILENCE,
    _contains_contiguous,
    forced_chain_from_segments,
    generate_corpus,
    generate_interference,
    keyword_span,
    render_utterance,
    split_manifest,
    targets_from_segments,
)
from kwskit.decoder import BG_NONSPEECH, BG_SPEECH, HmmTopology, build_kws_graph


def tiny_config(**overrides):
    defaults = dict(
        counts={"train": (6, 6), "dev": (2, 2), "test": (3, 3)},
        seed=99,
    )
    defaults.update(overrides)
    return CorpusConfig(**defaults)


class TestPhoneSet:
    def test_default_is_valid(self):
        assert len(DEFAULT_PHONE_SET.symbols) == 12
        assert DEFAULT_PHONE_SET.num_aux_classes == 13

    def test_rejects_duplicate_symbols(self):
        with pytest.raises(ValueError):
            PhoneSet(symbols=("a", "a"), formants_hz=((100, 200), (300, 400)))

    def test_rejects_duplicate_signatures(self):
        with pytest.raises(ValueError):
            PhoneSet(symbols=("a", "b"), formants_hz=((100, 200), (100, 200)))

    def test_rejects_out_of_band(self):
        with pytest.raises(ValueError):
            PhoneSet(symbols=("a",), formants_hz=((100, 9000),))


class TestGenerateCorpus:
    def test_negatives_never_contain_keyword(self, tmp_path):
        manifests = generate_corpus(tiny_config(), tmp_path)
        for split_entries in manifests.values():
            for entry in split_entries:
                hits = _contains_contiguous(entry["phones"], DEFAULT_KEYWORD)
                if entry["label"] == "keyword":
                    assert hits == 1
                else:
                    assert hits == 0

    def test_deterministic(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        manifests_a = generate_corpus(tiny_config(), a_dir)
        manifests_b = generate_corpus(tiny_config(), b_dir)
        assert manifests_a == manifests_b
        for split in ("train", "dev", "test"):
            assert (a_dir / f"{split}.jsonl").read_bytes() == (b_dir / f"{split}.jsonl").read_bytes()
        entry = manifests_a["train"][0]
        assert (a_dir / entry["wav"]).read_bytes() == (b_dir / entry["wav"]).read_bytes()

    def test_amplitude_headroom(self, tmp_path):
        manifests = generate_corpus(tiny_config(), tmp_path)
        for entry in manifests["train"]:
            audio = load_wav(tmp_path / entry["wav"])
            assert np.max(np.abs(audio.samples)) <= 0.9

    def test_segments_partition_audio(self, tmp_path):
        manifests = generate_corpus(tiny_config(), tmp_path)
        for entry in manifests["train"][:4]:
            audio = load_wav(tmp_path / entry["wav"])
            segments = entry["segments"]
            assert segments[0][1] == 0
            assert segments[-1][2] == len(audio)
            for (_, _, end), (_, start, _) in zip(segments, segments[1:]):
                assert end == start
            assert segments[0][0] == SILENCE and segments[-1][0] == SILENCE

    def test_split_counts(self, tmp_path):
        manifests = generate_corpus(tiny_config(), tmp_path)
        assert len(manifests["train"]) == 12
        assert len(manifests["dev"]) == 4
        assert len(manifests["test"]) == 6


class TestRenderUtterance:
    def test_phone_energy_at_signature_frequencies(self):
        config = tiny_config(phone_duration_ms=(400.0, 400.0), noise_level=0.0001)
        rng = np.random.default_rng(5)
        audio, segments = render_utterance(["k"], config, rng)
        symbol, start, end = segments[1]
        assert symbol == "k"
        segment = audio.samples[start:end]
        spectrum = np.abs(np.fft.rfft(segment))
        freqs = np.fft.rfftfreq(len(segment), 1.0 / 16000)
        top2 = freqs[np.argsort(spectrum)[-2:]]
        f1, f2 = DEFAULT_PHONE_SET.formants_hz[DEFAULT_PHONE_SET.index("k")]
        resolution = 16000 / len(segment)
        assert sorted(top2) == pytest.approx([f1, f2], abs=2 * resolution)


class TestGenerateInterference:
    def test_music_spectrum_harmonics(self, tmp_path):
        entries = generate_interference("music", 12.0, seed=4, out_dir=tmp_path)
        entry = entries[0]
        audio = load_wav(tmp_path / entry["wav"])
        # pick the longest chord segment for good frequency resolution
        segment = max(entry["segments"], key=lambda s: s[2] - s[1])
        _, start, end, f0 = segment
        chunk = audio.samples[start:end]
        spectrum = np.abs(np.fft.rfft(chunk))
        freqs = np.fft.rfftfreq(len(chunk), 1.0 / 16000)
        bin_hz = 16000 / len(chunk)
        # greedy peak picking with sidelobe suppression around each find
        remaining = spectrum.copy()
        peaks = []
        for _ in range(3):
            k = int(np.argmax(remaining))
            peaks.append(freqs[k])
            remaining[max(0, k - 5) : k + 6] = 0.0
        for harmonic, freq in zip((1, 2, 3), sorted(peaks)):
            assert freq == pytest.approx(harmonic * f0, abs=1.5 * bin_hz)

    def test_movie_alternates_noise_and_tones(self, tmp_path):
        entries = generate_interference("movie", 8.0, seed=2, out_dir=tmp_path)
        kinds = [s[0] for s in entries[0]["segments"]]
        assert set(kinds) == {"noise", "tone"}
        for a, b in zip(kinds, kinds[1:]):
            assert a != b

    def test_zero_length_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            generate_interference("music", 0.5, seed=0, out_dir=tmp_path)

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ValueError, match="kind"):
            generate_interference("podcast", 10.0, seed=0, out_dir=tmp_path)

    def test_deterministic(self, tmp_path):
        a = generate_interference("music", 6.0, seed=8, out_dir=tmp_path / "a")
        b = generate_interference("music", 6.0, seed=8, out_dir=tmp_path / "b")
        assert a == b
        assert (tmp_path / "a" / a[0]["wav"]).read_bytes() == (
            tmp_path / "b" / b[0]["wav"]
        ).read_bytes()

    def test_headroom(self, tmp_path):
        for kind in ("music", "movie"):
            entries = generate_interference(kind, 6.0, seed=3, out_dir=tmp_path / kind)
            for entry in entries:
                audio = load_wav(tmp_path / kind / entry["wav"])
                assert np.max(np.abs(audio.samples)) <= 0.9


class TestSplitManifest:
    def _entries(self, n=100):
        return [
            {"id": f"u{i:03d}", "label": "keyword" if i % 2 == 0 else "non-keyword"}
            for i in range(n)
        ]

    def test_sizes_80_10_10(self):
        out = split_manifest(self._entries(100), (0.8, 0.1, 0.1), seed=0)
        assert len(out["train"]) == 80
        assert len(out["dev"]) == 10
        assert len(out["test"]) == 10

    def test_class_balance(self):
        out = split_manifest(self._entries(200), (0.6, 0.2, 0.2), seed=1)
        for split, entries in out.items():
            pos = sum(1 for e in entries if e["label"] == "keyword")
            assert abs(pos / len(entries) - 0.5) <= 0.05

    def test_deterministic(self):
        a = split_manifest(self._entries(60), (0.5, 0.25, 0.25), seed=7)
        b = split_manifest(self._entries(60), (0.5, 0.25, 0.25), seed=7)
        assert a == b

    def test_degenerate_ratio_rejected(self):
        with pytest.raises(ValueError):
            split_manifest(self._entries(10), (1.0, 0.0, 0.0), seed=0)

    def test_ratios_must_sum(self):
        with pytest.raises(ValueError, match="sum"):
            split_manifest(self._entries(10), (0.5, 0.2, 0.2), seed=0)


class TestTargets:
    def _setup(self, states_per_phone=1):
        graph = build_kws_graph(
            DEFAULT_KEYWORD,
            HmmTopology(states_per_phone=states_per_phone),
            known_phones=DEFAULT_PHONE_SET.symbols,
        )
        return graph

    def test_keyword_span(self):
        assert keyword_span(["m", "ax", "l"], ("ax", "l")) == (1, 3)
        assert keyword_span(["m", "t"], ("ax", "l")) is None
        with pytest.raises(ValueError):
            keyword_span(["ax", "l", "ax", "l"], ("ax", "l"))

    def test_targets_cover_all_frames(self, tmp_path):
        config = tiny_config()
        manifests = generate_corpus(config, tmp_path)
        graph = self._setup()
        for entry in manifests["train"][:6]:
            total = entry["segments"][-1][2]
            n_frames = 1 + (total - 400) // 160
            kw_t, aux_t = targets_from_segments(
                entry["segments"], config.keyword, config.phone_set, graph, n_frames, 400, 160
            )
            assert len(kw_t) == n_frames
            assert kw_t.min() >= 0 and kw_t.max() < graph.n_states
            assert aux_t.min() >= 0 and aux_t.max() < config.phone_set.num_aux_classes
            if entry["label"] == "keyword":
                assert set(graph.chain_states) <= set(kw_t.tolist())
            else:
                assert not (set(graph.chain_states) & set(kw_t.tolist()))

    def test_silence_maps_to_nonspeech(self):
        graph = self._setup()
        segments = [[SILENCE, 0, 1600], ["m", 1600, 3200], [SILENCE, 3200, 4800]]
        kw_t, aux_t = targets_from_segments(
            segments, DEFAULT_KEYWORD, DEFAULT_PHONE_SET, graph, 28, 400, 160
        )
        assert kw_t[0] == BG_NONSPEECH
        assert aux_t[0] == DEFAULT_PHONE_SET.silence_class
        mid = 12  # frame centered inside the 'm' segment
        assert kw_t[mid] == BG_SPEECH
        assert aux_t[mid] == DEFAULT_PHONE_SET.index("m")

    def test_keyword_chain_targets_in_order(self):
        graph = self._setup()
        segments = [[SILENCE, 0, 800]]
        cursor = 800
        for phone in DEFAULT_KEYWORD:
            segments.append([phone, cursor, cursor + 1600])
            cursor += 1600
        segments.append([SILENCE, cursor, cursor + 800])
        n_frames = 1 + (cursor + 800 - 400) // 160
        kw_t, _ = targets_from_segments(
            segments, DEFAULT_KEYWORD, DEFAULT_PHONE_SET, graph, n_frames, 400, 160
        )
        seen = [s for s in kw_t if s in graph.chain_states]
        # chain states appear in strict left-to-right order
        assert seen == sorted(seen)
        assert set(seen) == set(graph.chain_states)

    def test_substates_split_segment(self):
        graph = self._setup(states_per_phone=3)
        segments = [[SILENCE, 0, 800]]
        cursor = 800
        for phone in DEFAULT_KEYWORD:
            segments.append([phone, cursor, cursor + 1600])
            cursor += 1600
        segments.append([SILENCE, cursor, cursor + 800])
        n_frames = 1 + (cursor + 800 - 400) // 160
        kw_t, _ = targets_from_segments(
            segments, DEFAULT_KEYWORD, DEFAULT_PHONE_SET, graph, n_frames, 400, 160
        )
        seen = [s for s in kw_t if s in graph.chain_states]
        assert seen == sorted(seen)
        assert len(set(seen)) == 18

    def test_forced_chain_structure(self):
        graph = self._setup()
        segments = [[SILENCE, 0, 800], ["m", 800, 2400]]
        for i, phone in enumerate(DEFAULT_KEYWORD):
            segments.append([phone, 2400 + i * 1600, 2400 + (i + 1) * 1600])
        segments.append([SILENCE, segments[-1][2], segments[-1][2] + 800])
        states, phones = forced_chain_from_segments(
            segments, DEFAULT_KEYWORD, DEFAULT_PHONE_SET, graph
        )
        assert states[0] == BG_NONSPEECH
        assert states[1] == BG_SPEECH
        assert states[2:8] == graph.chain_states
        assert states[-1] == BG_NONSPEECH
        assert phones[0] == DEFAULT_PHONE_SET.silence_class
        assert phones[1] == DEFAULT_PHONE_SET.index("m")
