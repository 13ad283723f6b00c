"""Time-frequency masks, oracle mask construction and mask providers.

Masks are real tensors of shape (S, T, F) with values in [0, 1]. A
Wiener-like mask is the per-source power fraction
    A[s, t, f] = |X_s|^2 / (sum_s' |X_s'|^2 + floor)
and a binary mask assigns each (t, f) cell to the source with the largest
magnitude (ties go to the lowest source index).
"""

from __future__ import annotations

import abc
import enum
import struct
from dataclasses import dataclass

import numpy as np

from .stft import MultichannelSpectrogram, MultichannelWaveform, StftConfig, istft, stft

__all__ = [
    "MaskTensor",
    "OracleMaskKind",
    "MaskProvider",
    "OracleMaskProvider",
    "ExternalEstimateProvider",
    "ExternalMaskProvider",
    "wiener_like_mask",
    "oracle_masks_from_sources",
    "apply_mask",
    "mixture_consistency_projection",
    "read_mask_file",
    "write_mask_file",
]

DEFAULT_MASK_FLOOR = 1e-10

_MASK_MAGIC = b"MSK1"


@dataclass(frozen=True)
class MaskTensor:
    """Per-source mask values, shape (S, T, F), each value in [0, 1]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"mask must be 3-D (S, T, F), got shape {data.shape}")
        if data.shape[0] < 1:
            raise ValueError("mask needs at least one source")
        if not np.all(np.isfinite(data)):
            raise ValueError("mask contains non-finite values")
        if data.min() < -1e-9 or data.max() > 1.0 + 1e-9:
            raise ValueError(
                f"mask values outside [0, 1]: min {data.min():.3g}, max {data.max():.3g}"
            )
        object.__setattr__(self, "data", np.clip(data, 0.0, 1.0))

    @property
    def num_sources(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    @property
    def num_bins(self) -> int:
        return self.data.shape[2]


class OracleMaskKind(enum.Enum):
    WIENER_LIKE = "wiener_like"
    BINARY = "binary"


def wiener_like_mask(
    source_specs: np.ndarray, floor: float = DEFAULT_MASK_FLOOR
) -> MaskTensor:
    """Power-fraction masks from per-source spectrograms.

    Arguments
        source_specs: (S, T, F) complex spectrograms of the source signals
            or estimates.
        floor: small additive constant in the denominator; keeps silent
            cells at mask 0 for every source instead of 0/0.
    """
    specs = np.asarray(source_specs)
    if specs.ndim != 3 or specs.shape[0] < 1:
        raise ValueError(f"expected (S, T, F) spectrograms, got shape {specs.shape}")
    if floor <= 0.0:
        raise ValueError(f"floor must be positive, got {floor}")
    power = np.abs(specs) ** 2
    return MaskTensor(power / (power.sum(axis=0, keepdims=True) + floor))


def binary_mask(source_specs: np.ndarray) -> MaskTensor:
    """One-hot masks assigning each cell to the strongest source."""
    specs = np.asarray(source_specs)
    if specs.ndim != 3 or specs.shape[0] < 1:
        raise ValueError(f"expected (S, T, F) spectrograms, got shape {specs.shape}")
    # argmax returns the lowest index on ties, which is the tie rule here.
    winner = np.argmax(np.abs(specs), axis=0)
    data = np.zeros(specs.shape, dtype=np.float64)
    s_idx = winner[None, :, :] == np.arange(specs.shape[0])[:, None, None]
    data[s_idx] = 1.0
    return MaskTensor(data)


def oracle_masks_from_sources(
    sources: np.ndarray,
    config: StftConfig,
    kind: OracleMaskKind = OracleMaskKind.WIENER_LIKE,
    floor: float = DEFAULT_MASK_FLOOR,
) -> MaskTensor:
    """Masks computed from ground-truth source signals at the reference mic.

    Arguments
        sources: (S, n) per-source time-domain signals (reference channel of
            the reverberant images).
        config: analysis transform for the mask domain.
    """
    sources = np.asarray(sources, dtype=np.float64)
    if sources.ndim == 1:
        sources = sources[None, :]
    if sources.ndim != 2 or sources.shape[0] < 1:
        raise ValueError(f"expected (S, n) sources with S >= 1, got shape {sources.shape}")
    specs = stft(sources, config).data  # S x T x F
    if kind is OracleMaskKind.WIENER_LIKE:
        return wiener_like_mask(specs, floor=floor)
    if kind is OracleMaskKind.BINARY:
        return binary_mask(specs)
    raise ValueError(f"unknown oracle mask kind: {kind!r}")


def apply_mask(mask: MaskTensor, mixture_ref: np.ndarray) -> np.ndarray:
    """Multiply each source mask onto the mixture reference spectrogram.

    Arguments
        mask: (S, T, F) mask tensor.
        mixture_ref: (T, F) complex spectrogram of the mixture reference
            channel.
    Return
        (S, T, F) complex masked spectrograms.
    """
    mixture_ref = np.asarray(mixture_ref)
    if mixture_ref.shape != (mask.num_frames, mask.num_bins):
        raise ValueError(
            f"mixture spectrogram shape {mixture_ref.shape} does not match mask "
            f"({mask.num_frames}, {mask.num_bins})"
        )
    return mask.data * mixture_ref[None, :, :]


def mixture_consistency_projection(
    estimates: np.ndarray, mixture_ref: np.ndarray
) -> np.ndarray:
    """Distribute the residual mixture evenly so estimates sum to the mixture.

    x_s <- x_s + (y - sum_s' x_s') / S. Idempotent; exact by construction.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    mixture_ref = np.asarray(mixture_ref, dtype=np.float64)
    if estimates.ndim != 2:
        raise ValueError(f"estimates must be (S, n), got shape {estimates.shape}")
    if mixture_ref.ndim != 1 or mixture_ref.shape[0] != estimates.shape[1]:
        raise ValueError(
            f"mixture length {mixture_ref.shape} does not match estimates "
            f"{estimates.shape}"
        )
    residual = mixture_ref - estimates.sum(axis=0)
    return estimates + residual[None, :] / estimates.shape[0]


class MaskProvider(abc.ABC):
    """Source-estimate provider driving the masking stages.

    Implementations map the mixture reference channel (and, from the second
    stage on, the per-source beamformed estimates of the previous stage) to
    per-source time-domain estimates at the same length and rate.
    """

    @abc.abstractmethod
    def estimate_sources(
        self,
        mixture_ref: np.ndarray,
        *,
        stage: int,
        prior_estimates: np.ndarray | None = None,
    ) -> np.ndarray:
        """Return (S, n) estimates for the given masking stage (1-based)."""

    @property
    @abc.abstractmethod
    def num_sources(self) -> int:
        ...


class OracleMaskProvider(MaskProvider):
    """Oracle masks computed from ground-truth reference-channel images.

    Every stage applies a real-valued mask to the mixture reference channel.
    Stage 1 uses the Wiener-like (or binary) mask from the truth images. At
    later stages, once beamformed priors exist, a plain power-ratio mask
    cannot get any better, so with refine_with_prior=True the provider
    switches to an amplitude mask min(|X^(s)|/|Y_ref|, 1): the masked mixture
    then reproduces the true source magnitudes wherever the mixture can
    express them. Estimates with truthful magnitudes give the next
    beamforming stage near-ideal power fractions to build covariances from,
    mirroring how later-stage estimators sharpen once spatial evidence is
    available. Binary-kind providers never refine.
    """

    def __init__(
        self,
        truth_ref: np.ndarray,
        config: StftConfig,
        kind: OracleMaskKind = OracleMaskKind.WIENER_LIKE,
        floor: float = DEFAULT_MASK_FLOOR,
        refine_with_prior: bool = True,
    ) -> None:
        truth_ref = np.asarray(truth_ref, dtype=np.float64)
        if truth_ref.ndim != 2 or truth_ref.shape[0] < 1:
            raise ValueError(
                f"truth_ref must be (S, n) with S >= 1, got shape {truth_ref.shape}"
            )
        self.config = config
        self.kind = kind
        self.refine_with_prior = refine_with_prior
        self._num_sources = truth_ref.shape[0]
        self._num_samples = truth_ref.shape[1]
        self._truth_mag = np.abs(stft(truth_ref, config).data)  # S x T x F
        self.masks = oracle_masks_from_sources(truth_ref, config, kind=kind, floor=floor)

    @property
    def num_sources(self) -> int:
        return self._num_sources

    def estimate_sources(
        self,
        mixture_ref: np.ndarray,
        *,
        stage: int,
        prior_estimates: np.ndarray | None = None,
    ) -> np.ndarray:
        mixture_ref = np.asarray(mixture_ref, dtype=np.float64)
        if mixture_ref.ndim != 1:
            raise ValueError(f"mixture_ref must be 1-D, got shape {mixture_ref.shape}")
        if mixture_ref.shape[0] != self._num_samples:
            raise ValueError(
                f"mixture length {mixture_ref.shape[0]} does not match the oracle "
                f"truth length {self._num_samples}"
            )
        mix_spec = stft(mixture_ref[None, :], self.config).data[0]
        refine = (
            prior_estimates is not None
            and self.refine_with_prior
            and self.kind is not OracleMaskKind.BINARY
        )
        if refine:
            amp = self._truth_mag / np.maximum(np.abs(mix_spec), 1e-30)
            masks = MaskTensor(np.minimum(amp, 1.0))
        else:
            masks = self.masks
        masked = apply_mask(masks, mix_spec)
        out = istft(
            MultichannelSpectrogram(masked, self.config, self._num_samples)
        )
        return out.samples


class ExternalEstimateProvider(MaskProvider):
    """Precomputed per-source estimates, optionally different per stage."""

    def __init__(self, estimates_by_stage: "dict[int, np.ndarray] | np.ndarray") -> None:
        if isinstance(estimates_by_stage, dict):
            table = {int(k): np.asarray(v, dtype=np.float64) for k, v in estimates_by_stage.items()}
        else:
            table = {0: np.asarray(estimates_by_stage, dtype=np.float64)}
        if not table:
            raise ValueError("no external estimates given")
        shapes = {v.shape for v in table.values()}
        for arr in table.values():
            if arr.ndim != 2 or arr.shape[0] < 1:
                raise ValueError(f"external estimates must be (S, n), got {arr.shape}")
        if len({s[0] for s in shapes}) != 1:
            raise ValueError(f"inconsistent source counts across stages: {shapes}")
        self._table = table
        self._num_sources = next(iter(table.values())).shape[0]

    @property
    def num_sources(self) -> int:
        return self._num_sources

    def estimate_sources(
        self,
        mixture_ref: np.ndarray,
        *,
        stage: int,
        prior_estimates: np.ndarray | None = None,
    ) -> np.ndarray:
        if stage in self._table:
            est = self._table[stage]
        elif 0 in self._table:
            est = self._table[0]
        else:
            raise ValueError(f"no external estimates supplied for stage {stage}")
        if est.shape[1] != np.asarray(mixture_ref).shape[-1]:
            raise ValueError(
                f"external estimate length {est.shape[1]} does not match the "
                f"mixture length {np.asarray(mixture_ref).shape[-1]}"
            )
        return est


class ExternalMaskProvider(MaskProvider):
    """A fixed externally supplied mask tensor applied to the mixture."""

    def __init__(self, mask: MaskTensor, config: StftConfig) -> None:
        self.mask = mask
        self.config = config

    @property
    def num_sources(self) -> int:
        return self.mask.num_sources

    def estimate_sources(
        self,
        mixture_ref: np.ndarray,
        *,
        stage: int,
        prior_estimates: np.ndarray | None = None,
    ) -> np.ndarray:
        mixture_ref = np.asarray(mixture_ref, dtype=np.float64)
        if mixture_ref.ndim != 1:
            raise ValueError(f"mixture_ref must be 1-D, got shape {mixture_ref.shape}")
        n = mixture_ref.shape[0]
        mix_spec = stft(mixture_ref[None, :], self.config)
        if mix_spec.data.shape[1] != self.mask.num_frames:
            raise ValueError(
                f"mask frame count {self.mask.num_frames} does not match the "
                f"mixture analysis ({mix_spec.data.shape[1]} frames)"
            )
        masked = apply_mask(self.mask, mix_spec.data[0])
        return istft(MultichannelSpectrogram(masked, self.config, n)).samples


def write_mask_file(path: str, mask: MaskTensor) -> None:
    """Serialize a mask tensor: magic 'MSK1', u32 S/T/F, float32 row-major."""
    s, t, f = mask.data.shape
    with open(path, "wb") as fh:
        fh.write(_MASK_MAGIC)
        fh.write(struct.pack("<III", s, t, f))
        fh.write(mask.data.astype("<f4").tobytes(order="C"))


def read_mask_file(path: str) -> MaskTensor:
    """Read a mask tensor written by write_mask_file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != _MASK_MAGIC:
        raise ValueError(f"{path}: not a mask tensor file (bad magic)")
    s, t, f = struct.unpack("<III", blob[4:16])
    expected = 16 + 4 * s * t * f
    if len(blob) != expected:
        raise ValueError(
            f"{path}: declared {s}x{t}x{f} values but file has "
            f"{len(blob) - 16} payload bytes (expected {expected - 16})"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=16).reshape(s, t, f)
    return MaskTensor(data.astype(np.float64))
