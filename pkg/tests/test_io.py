import json
import struct

import numpy as np
import pytest

from beamkit.io import (
    Manifest,
    ManifestEntry,
    load_manifest,
    read_wav,
    save_manifest,
    write_wav,
)
from beamkit.stft import MultichannelWaveform


def _random_wave(seed, channels=2, n=1000, sr=16000):
    rng = np.random.default_rng(seed)
    samples = np.clip(rng.standard_normal((channels, n)) * 0.2, -1.0, 1.0)
    # keep values exactly representable in float32
    return MultichannelWaveform(samples.astype(np.float32).astype(np.float64), sr)


def test_float32_round_trip_identical(tmp_path):
    wave = _random_wave(0, channels=3)
    path = str(tmp_path / "a.wav")
    write_wav(path, wave)
    back = read_wav(path)
    assert back.sample_rate == wave.sample_rate
    np.testing.assert_array_equal(back.samples, wave.samples)


def test_pcm16_full_scale_sine_within_one_lsb(tmp_path):
    t = np.arange(16000) / 16000.0
    sine = np.sin(2 * np.pi * 440.0 * t)[None, :]
    path = str(tmp_path / "s.wav")
    write_wav(path, MultichannelWaveform(sine, 16000), encoding="pcm16")
    back = read_wav(path)
    assert np.abs(back.samples - sine).max() <= 2.0**-15


def test_pcm16_clips_out_of_range(tmp_path):
    samples = np.array([[2.0, -2.0, 0.0]])
    path = str(tmp_path / "c.wav")
    write_wav(path, samples, sample_rate=8000, encoding="pcm16")
    back = read_wav(path)
    np.testing.assert_allclose(
        back.samples, [[1.0, -32768.0 / 32767.0, 0.0]], atol=1e-12
    )


def test_bare_array_needs_sample_rate(tmp_path):
    path = str(tmp_path / "b.wav")
    with pytest.raises(ValueError):
        write_wav(path, np.zeros(8))
    write_wav(path, np.zeros(8), sample_rate=8000)
    back = read_wav(path)
    assert back.samples.shape == (1, 8)
    assert back.sample_rate == 8000


def test_unknown_encoding_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_wav(str(tmp_path / "x.wav"), np.zeros((1, 4)), 8000, encoding="pcm24")


def test_read_rejects_non_wav(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"OggS" + b"\x00" * 40)
    with pytest.raises(ValueError):
        read_wav(str(path))


def test_read_rejects_truncated_data(tmp_path):
    path = tmp_path / "t.wav"
    write_wav(str(path), _random_wave(1))
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 100])
    with pytest.raises(ValueError):
        read_wav(str(path))


def test_read_rejects_partial_frame(tmp_path):
    fmt = struct.pack("<HHIIHH", 3, 2, 8000, 64000, 8, 32)
    data = b"\x00" * 12  # 12 bytes is 1.5 frames of 2ch float32
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt
    body += b"data" + struct.pack("<I", len(data)) + data
    path = tmp_path / "p.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(ValueError):
        read_wav(str(path))


def test_read_rejects_unsupported_format_code(tmp_path):
    fmt = struct.pack("<HHIIHH", 2, 1, 8000, 8000, 1, 8)  # ADPCM-ish
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt
    body += b"data" + struct.pack("<I", 4) + b"\x00" * 4
    path = tmp_path / "u.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(ValueError):
        read_wav(str(path))


def test_read_skips_unknown_chunks(tmp_path):
    path = tmp_path / "extra.wav"
    wave = _random_wave(2, channels=1, n=64)
    write_wav(str(path), wave)
    raw = path.read_bytes()
    # splice a LIST chunk between fmt and data
    insert_at = 12 + 8 + 16
    extra = b"LIST" + struct.pack("<I", 6) + b"INFOab"
    patched = raw[:insert_at] + extra + raw[insert_at:]
    patched = (
        patched[:4]
        + struct.pack("<I", struct.unpack_from("<I", raw, 4)[0] + len(extra))
        + patched[8:]
    )
    path.write_bytes(patched)
    back = read_wav(str(path))
    np.testing.assert_array_equal(back.samples, wave.samples)


def test_missing_data_chunk(tmp_path):
    fmt = struct.pack("<HHIIHH", 3, 1, 8000, 32000, 4, 32)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt
    path = tmp_path / "m.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(ValueError):
        read_wav(str(path))


def test_manifest_round_trip_and_resolution(tmp_path):
    sub = tmp_path / "data"
    sub.mkdir()
    manifest = Manifest(
        sample_rate=16000,
        entries=(
            ManifestEntry(
                name="ex0",
                task="sep2",
                mixture="ex0_mix.wav",
                images=("ex0_src0.wav", "ex0_src1.wav"),
                scene="ex0_scene.json",
            ),
            ManifestEntry(
                name="ex1",
                task="sep2",
                mixture="/abs/ex1_mix.wav",
                images=("/abs/ex1_src0.wav",),
            ),
        ),
    )
    path = str(sub / "manifest.json")
    save_manifest(path, manifest)
    loaded = load_manifest(path)
    assert loaded.sample_rate == 16000
    assert len(loaded.entries) == 2
    e0, e1 = loaded.entries
    assert e0.mixture == str(sub / "ex0_mix.wav")
    assert e0.images == (str(sub / "ex0_src0.wav"), str(sub / "ex0_src1.wav"))
    assert e0.scene == str(sub / "ex0_scene.json")
    assert e1.mixture == "/abs/ex1_mix.wav"
    assert e1.scene is None


def test_manifest_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValueError):
        load_manifest(str(bad))

    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"schema_version": 99, "sample_rate": 16000,
                                 "entries": []}))
    with pytest.raises(ValueError):
        load_manifest(str(wrong))

    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({"schema_version": 1, "sample_rate": 16000,
                                   "entries": [{"name": "x"}]}))
    with pytest.raises(ValueError):
        load_manifest(str(missing))
