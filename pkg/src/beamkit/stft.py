"""Short-time Fourier analysis and synthesis.

Two window families are supported: the square-root Hann window used for the
masking and beamforming transforms, and the Vorbis window used to weight
half-overlapping processing blocks. Both satisfy the Princen-Bradley
condition w^2[n] + w^2[n + N/2] = 1, so a window applied once at analysis
and once at synthesis overlap-adds to unity at 50% overlap.

Shape conventions: waveforms are (M, n) with M channels and n samples,
spectrograms are (M, T, F) with T frames and F = fft_size // 2 + 1 bins.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "WindowKind",
    "StftConfig",
    "MultichannelWaveform",
    "MultichannelSpectrogram",
    "make_window",
    "stft",
    "istft",
]


class WindowKind(enum.Enum):
    SQRT_HANN = "sqrt_hann"
    VORBIS = "vorbis"


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def make_window(kind: WindowKind, win_len: int) -> np.ndarray:
    """Return the analysis/synthesis window as a float64 vector.

    Arguments
        kind: window family.
        win_len: even window length in samples, >= 2.

    Both families are defined on half-sample centres x = (n + 0.5) / N:
        sqrt_hann: sqrt(0.5 - 0.5 cos(2 pi x))
        vorbis:    sin(pi/2 * sin^2(pi x))
    """
    if win_len < 2 or win_len % 2 != 0:
        raise ValueError(f"window length must be even and >= 2, got {win_len}")
    x = (np.arange(win_len, dtype=np.float64) + 0.5) / win_len
    if kind is WindowKind.SQRT_HANN:
        return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * x))
    if kind is WindowKind.VORBIS:
        return np.sin(0.5 * np.pi * np.sin(np.pi * x) ** 2)
    raise ValueError(f"unknown window kind: {kind!r}")


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters for one transform domain.

    fft_size must be a power of two >= win_len and hop must divide win_len;
    these are validated at construction so downstream code can rely on them.
    """

    window: WindowKind
    win_len: int
    hop: int
    fft_size: int
    sample_rate: int = 16000

    def __post_init__(self) -> None:
        if self.win_len < 2 or self.win_len % 2 != 0:
            raise ValueError(f"win_len must be even and >= 2, got {self.win_len}")
        if self.hop < 1 or self.hop > self.win_len:
            raise ValueError(f"hop must be in [1, win_len], got {self.hop}")
        if self.win_len % self.hop != 0:
            raise ValueError(
                f"hop {self.hop} must divide win_len {self.win_len}"
            )
        if self.fft_size < self.win_len:
            raise ValueError(
                f"fft_size {self.fft_size} must be >= win_len {self.win_len}"
            )
        if self.fft_size & (self.fft_size - 1) != 0:
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.sample_rate < 1:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @classmethod
    def from_milliseconds(
        cls,
        window: WindowKind,
        win_ms: float,
        hop_ms: float,
        sample_rate: int = 16000,
        fft_size: int | None = None,
    ) -> "StftConfig":
        win_len = int(round(win_ms * sample_rate / 1000.0))
        hop = int(round(hop_ms * sample_rate / 1000.0))
        if fft_size is None:
            fft_size = _next_pow2(win_len)
        return cls(window, win_len, hop, fft_size, sample_rate)

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        """Frame count for a signal of num_samples under the padding policy."""
        if num_samples < 1:
            raise ValueError(f"num_samples must be positive, got {num_samples}")
        return math.ceil((num_samples + self.win_len - self.hop) / self.hop)

    def window_array(self) -> np.ndarray:
        return make_window(self.window, self.win_len)


def masking_stft_config(sample_rate: int = 16000) -> StftConfig:
    """Default transform for the masking stages: 32 ms sqrt-Hann, 8 ms hop."""
    return StftConfig.from_milliseconds(WindowKind.SQRT_HANN, 32.0, 8.0, sample_rate)


def beamforming_stft_config(win_ms: float, sample_rate: int = 16000) -> StftConfig:
    """Beamforming transform: sqrt-Hann with a half-window hop."""
    return StftConfig.from_milliseconds(
        WindowKind.SQRT_HANN, win_ms, win_ms / 2.0, sample_rate
    )


@dataclass(frozen=True)
class MultichannelWaveform:
    """Time-domain signal, shape (M, n), float64, finite."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValueError(f"samples must be 2-D (M, n), got shape {samples.shape}")
        if samples.shape[0] < 1 or samples.shape[1] < 1:
            raise ValueError(f"samples must be non-empty, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain non-finite values")
        if self.sample_rate < 1:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @classmethod
    def from_mono(cls, samples: np.ndarray, sample_rate: int = 16000) -> "MultichannelWaveform":
        return cls(np.asarray(samples, dtype=np.float64)[None, :], sample_rate)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate


@dataclass(frozen=True)
class MultichannelSpectrogram:
    """Complex STFT coefficients, shape (M, T, F).

    num_samples records the length of the analyzed signal so that synthesis
    can trim the analysis padding exactly; T alone only determines the
    original length up to one hop.
    """

    data: np.ndarray
    config: StftConfig
    num_samples: int

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"data must be 3-D (M, T, F), got shape {data.shape}")
        if not np.iscomplexobj(data):
            data = data.astype(np.complex128)
        if data.shape[2] != self.config.num_bins:
            raise ValueError(
                f"bin count {data.shape[2]} does not match fft_size "
                f"{self.config.fft_size} (expected {self.config.num_bins})"
            )
        expected_t = self.config.num_frames(self.num_samples)
        if data.shape[1] != expected_t:
            raise ValueError(
                f"frame count {data.shape[1]} inconsistent with num_samples "
                f"{self.num_samples} (expected {expected_t})"
            )
        object.__setattr__(self, "data", data)

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    @property
    def num_bins(self) -> int:
        return self.data.shape[2]


def _as_samples(wave: "MultichannelWaveform | np.ndarray") -> np.ndarray:
    if isinstance(wave, MultichannelWaveform):
        return wave.samples
    samples = np.asarray(wave, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[None, :]
    if samples.ndim != 2:
        raise ValueError(f"expected (M, n) samples, got shape {samples.shape}")
    if samples.shape[0] < 1 or samples.shape[1] < 1:
        raise ValueError("empty input")
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples contain non-finite values")
    return samples


def stft(
    wave: "MultichannelWaveform | np.ndarray", config: StftConfig
) -> MultichannelSpectrogram:
    """Analyze a waveform into (M, T, F) complex coefficients.

    The signal is zero-padded with win_len - hop samples at the start and
    enough at the end that the final frame is complete and every real sample
    receives full window-overlap coverage; T = ceil((n + win_len - hop) / hop).
    """
    samples = _as_samples(wave)
    num_channels, num_samples = samples.shape
    win = config.window_array()
    num_frames = config.num_frames(num_samples)
    lead = config.win_len - config.hop
    padded_len = (num_frames - 1) * config.hop + config.win_len

    padded = np.zeros((num_channels, padded_len), dtype=np.float64)
    padded[:, lead:lead + num_samples] = samples

    frames = np.lib.stride_tricks.sliding_window_view(
        padded, config.win_len, axis=1
    )[:, ::config.hop]  # M x T x win_len
    data = np.fft.rfft(frames * win, n=config.fft_size, axis=2)
    return MultichannelSpectrogram(data, config, num_samples)


def istft(
    spec: MultichannelSpectrogram, length: int | None = None
) -> MultichannelWaveform:
    """Resynthesize a waveform by windowed overlap-add.

    Applies the same window at synthesis, overlap-adds, divides by the
    summed squared-window envelope and trims the analysis padding. With the
    supported windows the envelope is exactly constant over the real-sample
    region, so istft(stft(x)) reproduces x to round-off.
    """
    config = spec.config
    n = spec.num_samples if length is None else int(length)
    if n < 1:
        raise ValueError(f"length must be positive, got {n}")
    num_frames = spec.num_frames
    if length is not None and config.num_frames(n) != num_frames:
        raise ValueError(
            f"length {n} inconsistent with frame count {num_frames} "
            f"(expected T = {config.num_frames(n)})"
        )
    win = config.window_array()
    lead = config.win_len - config.hop
    padded_len = (num_frames - 1) * config.hop + config.win_len

    frames = np.fft.irfft(spec.data, n=config.fft_size, axis=2)[:, :, :config.win_len]
    frames = frames * win

    out = np.zeros((spec.num_channels, padded_len), dtype=np.float64)
    envelope = np.zeros(padded_len, dtype=np.float64)
    win_sq = win * win
    for t in range(num_frames):
        start = t * config.hop
        out[:, start:start + config.win_len] += frames[:, t]
        envelope[start:start + config.win_len] += win_sq
    envelope = np.maximum(envelope, 1e-12 * envelope.max())
    out /= envelope

    return MultichannelWaveform(out[:, lead:lead + n], config.sample_rate)
