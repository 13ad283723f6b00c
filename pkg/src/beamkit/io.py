"""WAV file round-tripping and dataset manifests.

Only the two encodings this toolkit produces are supported: 16-bit PCM and
32-bit IEEE float, interleaved multichannel RIFF/WAVE. Parsing is strict;
malformed or truncated files raise ValueError rather than returning partial
audio.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .stft import MultichannelWaveform

__all__ = [
    "read_wav",
    "write_wav",
    "ManifestEntry",
    "Manifest",
    "save_manifest",
    "load_manifest",
]

MANIFEST_SCHEMA_VERSION = 1

_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3


def write_wav(
    path: str,
    waveform: "MultichannelWaveform | np.ndarray",
    sample_rate: int | None = None,
    encoding: str = "float32",
) -> None:
    """Write (M, n) audio as an interleaved RIFF/WAVE file.

    encoding is "float32" (lossless for our float64 pipeline up to float32
    precision) or "pcm16" (samples scaled by 32767 and rounded; values
    outside [-1, 1] clip).
    """
    if isinstance(waveform, MultichannelWaveform):
        samples = waveform.samples
        sample_rate = waveform.sample_rate if sample_rate is None else sample_rate
    else:
        samples = np.atleast_2d(np.asarray(waveform, dtype=np.float64))
        if sample_rate is None:
            raise ValueError("sample_rate is required for bare arrays")
    if samples.ndim != 2:
        raise ValueError(f"expected (channels, samples), got shape {samples.shape}")
    channels, n = samples.shape
    interleaved = samples.T  # frame-major on disk

    if encoding == "float32":
        fmt_code = _FMT_IEEE_FLOAT
        bits = 32
        payload = interleaved.astype("<f4").tobytes()
    elif encoding == "pcm16":
        fmt_code = _FMT_PCM
        bits = 16
        scaled = np.round(interleaved * 32767.0)
        payload = np.clip(scaled, -32768, 32767).astype("<i2").tobytes()
    else:
        raise ValueError(f"unknown encoding {encoding!r}")

    block_align = channels * bits // 8
    byte_rate = sample_rate * block_align
    fmt_chunk = struct.pack(
        "<HHIIHH", fmt_code, channels, sample_rate, byte_rate, block_align, bits
    )
    data_size = len(payload)
    riff_size = 4 + (8 + len(fmt_chunk)) + (8 + data_size + (data_size & 1))
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", riff_size) + b"WAVE")
        fh.write(b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk)
        fh.write(b"data" + struct.pack("<I", data_size) + payload)
        if data_size & 1:
            fh.write(b"\x00")


def read_wav(path: str) -> MultichannelWaveform:
    """Read a PCM16 or float32 RIFF/WAVE file into (M, n) float64."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise ValueError(f"{path}: truncated {cid!r} chunk")
        if cid == b"fmt ":
            if size < 16:
                raise ValueError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)

    if fmt is None or data is None:
        raise ValueError(f"{path}: missing fmt or data chunk")
    fmt_code, channels, sample_rate, _byte_rate, block_align, bits = fmt
    if channels < 1:
        raise ValueError(f"{path}: invalid channel count {channels}")
    if fmt_code == _FMT_PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif fmt_code == _FMT_IEEE_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise ValueError(
            f"{path}: unsupported format (code {fmt_code}, {bits}-bit)"
        )
    frame_size = channels * dtype.itemsize
    if block_align not in (0, frame_size):
        raise ValueError(f"{path}: block align {block_align} != {frame_size}")
    if len(data) % frame_size:
        raise ValueError(
            f"{path}: data size {len(data)} is not a whole number of frames"
        )
    flat = np.frombuffer(data, dtype=dtype)
    frames = flat.reshape(-1, channels)
    if fmt_code == _FMT_PCM:
        samples = frames.astype(np.float64) / 32767.0
    else:
        samples = frames.astype(np.float64)
    return MultichannelWaveform(np.ascontiguousarray(samples.T), sample_rate)


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    task: str
    mixture: str
    images: "tuple[str, ...]"
    scene: str | None = None


@dataclass(frozen=True)
class Manifest:
    sample_rate: int
    entries: "tuple[ManifestEntry, ...]" = field(default_factory=tuple)


def save_manifest(path: str, manifest: Manifest) -> None:
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "sample_rate": manifest.sample_rate,
        "entries": [
            {
                "name": e.name,
                "task": e.task,
                "mixture": e.mixture,
                "images": list(e.images),
                **({"scene": e.scene} if e.scene is not None else {}),
            }
            for e in manifest.entries
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str) -> Manifest:
    """Load a dataset manifest, resolving entry paths against its directory."""
    base = os.path.dirname(os.path.abspath(path))

    def _resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid manifest JSON ({exc})") from exc
    try:
        version = doc["schema_version"]
        if version != MANIFEST_SCHEMA_VERSION:
            raise ValueError(
                f"{path}: unsupported manifest schema_version {version}"
            )
        entries = tuple(
            ManifestEntry(
                name=e["name"],
                task=e["task"],
                mixture=_resolve(e["mixture"]),
                images=tuple(_resolve(p) for p in e["images"]),
                scene=_resolve(e["scene"]) if "scene" in e else None,
            )
            for e in doc["entries"]
        )
        return Manifest(sample_rate=int(doc["sample_rate"]), entries=entries)
    except KeyError as exc:
        raise ValueError(f"{path}: manifest missing key {exc}") from exc
