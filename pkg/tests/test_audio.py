import numpy as np
import pytest

from kwskit.audio import AudioBuffer, WavFormatError, energy, load_wav, save_wav, scale


def test_buffer_rejects_nan():
    with pytest.raises(ValueError):
        AudioBuffer([0.0, np.nan])


def test_buffer_rejects_bad_rate():
    with pytest.raises(ValueError):
        AudioBuffer([0.0], sample_rate=0)


def test_buffer_is_immutable():
    buf = AudioBuffer([0.1, 0.2])
    with pytest.raises(ValueError):
        buf.samples[0] = 1.0


def test_energy_alternating():
    assert energy(AudioBuffer([1.0, -1.0, 1.0, -1.0])) == 4.0


def test_energy_empty():
    assert energy(AudioBuffer([])) == 0.0


def test_energy_quarters():
    # 4 * 0.25 by hand
    assert energy(AudioBuffer([0.5, 0.5, 0.5, 0.5])) == pytest.approx(1.0)


def test_energy_permutation_invariant():
    rng = np.random.default_rng(11)
    x = rng.uniform(-1, 1, 257)
    shuffled = x[rng.permutation(x.size)]
    assert energy(AudioBuffer(x)) == pytest.approx(energy(AudioBuffer(shuffled)), rel=1e-12)


def test_scale_zero_and_identity():
    buf = AudioBuffer([1.0, 2.0])
    assert scale(buf, 0.0).samples.tolist() == [0.0, 0.0]
    assert scale(buf, 1.0).samples.tolist() == [1.0, 2.0]


def test_scale_elementwise():
    out = scale(AudioBuffer([0.1, -0.2]), 0.5)
    np.testing.assert_allclose(out.samples, [0.05, -0.1])


def test_scale_energy_quadratic():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = AudioBuffer(rng.uniform(-1, 1, int(rng.integers(1, 500))))
        a = float(rng.uniform(-3, 3))
        assert energy(scale(x, a)) == pytest.approx(a * a * energy(x), rel=1e-9)


def test_scale_rejects_nonfinite_factor():
    with pytest.raises(ValueError):
        scale(AudioBuffer([1.0]), float("inf"))


def test_wav_zero_roundtrip(tmp_path):
    path = tmp_path / "zeros.wav"
    save_wav(AudioBuffer(np.zeros(16)), path)
    loaded = load_wav(path)
    assert loaded.samples.tolist() == [0.0] * 16
    assert loaded.sample_rate == 16000


def test_wav_full_scale_sample(tmp_path):
    import struct
    import wave

    path = tmp_path / "fs.wav"
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(struct.pack("<h", 32767))
    loaded = load_wav(path)
    assert loaded.samples[0] == pytest.approx(32767 / 32768)


def test_wav_clipping_and_quantization(tmp_path):
    path = tmp_path / "clip.wav"
    save_wav(AudioBuffer([1.5, 0.0, 0.25]), path)
    import wave

    with wave.open(str(path), "rb") as w:
        pcm = np.frombuffer(w.readframes(3), dtype="<i2")
    assert pcm.tolist() == [32767, 0, 8192]


def test_wav_sine_roundtrip(tmp_path):
    t = np.arange(1600) / 16000.0
    x = AudioBuffer(0.8 * np.sin(2 * np.pi * 1000.0 * t))
    path = tmp_path / "sine.wav"
    save_wav(x, path)
    loaded = load_wav(path)
    assert len(loaded) == len(x)
    assert np.max(np.abs(loaded.samples - x.samples)) <= 1.0 / 32768


def test_wav_random_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    x = AudioBuffer(rng.uniform(-1, 1, 777))
    path = tmp_path / "r.wav"
    save_wav(x, path)
    assert np.max(np.abs(load_wav(path).samples - x.samples)) <= 1.0 / 32768


def test_load_rejects_stereo(tmp_path):
    import wave

    path = tmp_path / "stereo.wav"
    with wave.open(str(path), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(b"\x00\x00" * 8)
    with pytest.raises(WavFormatError, match="channels"):
        load_wav(path)


def test_load_rejects_8bit(tmp_path):
    import wave

    path = tmp_path / "8bit.wav"
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(1)
        w.setframerate(16000)
        w.writeframes(b"\x80" * 8)
    with pytest.raises(WavFormatError, match="8-bit"):
        load_wav(path)


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "garbage.wav"
    path.write_bytes(b"not a riff file at all")
    with pytest.raises(WavFormatError):
        load_wav(path)


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_wav(tmp_path / "nope.wav")
