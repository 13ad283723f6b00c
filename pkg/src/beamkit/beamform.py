"""Multi-frame multichannel Wiener filtering.

The context expansion treats neighbouring STFT frames as extra microphones:
for M channels and a context of a past and b future frames (c = a + b + 1),
the stacked observation at frame t is

    Y_bar[t, f] = [Y[t-a, f]; ...; Y[t, f]; ...; Y[t+b, f]]  in C^{cM}

laid out frame-major, so entry k*M + m is channel m of frame offset k - a.
Weights solve

    (Phi_y + delta * tr(Phi_y)/cM * I) w_s = Phi_s u_ref

per frequency (time-invariant filter) or per time-frequency cell
(time-varying factorized filter, where Phi_s[t, f] is a per-cell PSD times a
time-invariant normalized coherence matrix). Block-based processing applies
the filters on half-overlapping Vorbis-windowed groups of frames.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .masking import MaskTensor
from .stft import MultichannelSpectrogram, StftConfig, WindowKind, make_window

__all__ = [
    "ContextConfig",
    "ContextSpectrogram",
    "RefSelector",
    "CovarianceKind",
    "CovarianceField",
    "WeightField",
    "FilterKind",
    "TvfNormalization",
    "expand_context",
    "estimate_covariances",
    "ti_mcwf_weights",
    "apply_weights",
    "tvf_source_covariance",
    "tvf_mcwf",
    "block_beamform",
]

logger = logging.getLogger(__name__)

DEFAULT_LOADING = 1e-4

# Absolute guard for normalizers; covariances this small are treated as silent.
_TINY = 1e-30


@dataclass(frozen=True)
class ContextConfig:
    """Temporal context: a past frames, b future frames, c = a + b + 1."""

    a: int = 0
    b: int = 0

    def __post_init__(self) -> None:
        if self.a < 0 or self.b < 0:
            raise ValueError(f"context offsets must be >= 0, got a={self.a} b={self.b}")

    @property
    def c(self) -> int:
        return self.a + self.b + 1

    @classmethod
    def from_total(cls, c: int) -> "ContextConfig":
        """Split a total context size; for even c the past side gets the
        extra frame (a = b + 1)."""
        if c < 1:
            raise ValueError(f"total context must be >= 1, got {c}")
        b = (c - 1) // 2
        return cls(a=c - 1 - b, b=b)


@dataclass(frozen=True)
class RefSelector:
    """One-hot selector for the reference channel inside a context vector."""

    vector: np.ndarray
    ref_channel: int

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1:
            raise ValueError(f"selector must be a vector, got shape {vec.shape}")
        nz = np.nonzero(vec)[0]
        if len(nz) != 1 or vec[nz[0]] != 1.0:
            raise ValueError("selector must be one-hot with a single unit entry")
        object.__setattr__(self, "vector", vec)

    @classmethod
    def build(cls, ctx: ContextConfig, num_channels: int, ref_channel: int) -> "RefSelector":
        if not 0 <= ref_channel < num_channels:
            raise ValueError(
                f"ref_channel {ref_channel} out of range for {num_channels} channels"
            )
        vec = np.zeros(ctx.c * num_channels, dtype=np.float64)
        vec[ctx.a * num_channels + ref_channel] = 1.0
        return cls(vec, ref_channel)


@dataclass(frozen=True)
class ContextSpectrogram:
    """Context-expanded observations, shape (T, F, cM)."""

    data: np.ndarray
    ctx: ContextConfig
    num_channels: int
    config: StftConfig
    num_samples: int

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"context data must be (T, F, cM), got {data.shape}")
        if data.shape[2] != self.ctx.c * self.num_channels:
            raise ValueError(
                f"stacked dimension {data.shape[2]} does not match "
                f"c*M = {self.ctx.c * self.num_channels}"
            )
        object.__setattr__(self, "data", data)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    @property
    def stacked_channels(self) -> int:
        return self.data.shape[2]


class CovarianceKind(enum.Enum):
    MIXTURE = "mixture"
    SOURCE = "source"


@dataclass(frozen=True)
class CovarianceField:
    """Spatial covariance estimates.

    Either dense matrices of shape (F, cM, cM) (time-invariant) or
    (T, F, cM, cM) (time-varying), or the factored time-varying form
    psd (T, F) x coherence (F, cM, cM) which avoids materializing a matrix
    per cell.
    """

    kind: CovarianceKind
    matrices: np.ndarray | None = None
    psd: np.ndarray | None = None
    coherence: np.ndarray | None = None
    loading: float = 0.0

    def __post_init__(self) -> None:
        if self.matrices is None and (self.psd is None or self.coherence is None):
            raise ValueError("need either dense matrices or psd + coherence")
        if self.matrices is not None:
            mats = np.asarray(self.matrices)
            if mats.ndim not in (3, 4) or mats.shape[-1] != mats.shape[-2]:
                raise ValueError(f"matrices must be (F, d, d) or (T, F, d, d), got {mats.shape}")
            object.__setattr__(self, "matrices", mats)
        if self.psd is not None:
            psd = np.asarray(self.psd, dtype=np.float64)
            coh = np.asarray(self.coherence)
            if psd.ndim != 2:
                raise ValueError(f"psd must be (T, F), got {psd.shape}")
            if coh.ndim != 3 or coh.shape[0] != psd.shape[1] or coh.shape[1] != coh.shape[2]:
                raise ValueError(
                    f"coherence must be (F, d, d) with F={psd.shape[1]}, got {coh.shape}"
                )
            object.__setattr__(self, "psd", psd)
            object.__setattr__(self, "coherence", coh)

    @property
    def is_time_varying(self) -> bool:
        if self.matrices is not None:
            return self.matrices.ndim == 4
        return True

    @property
    def dim(self) -> int:
        if self.matrices is not None:
            return self.matrices.shape[-1]
        return self.coherence.shape[-1]

    def dense(self) -> np.ndarray:
        """Materialize the matrices (may be large for the factored form)."""
        if self.matrices is not None:
            return self.matrices
        return self.psd[:, :, None, None] * self.coherence[None, :, :, :]


@dataclass(frozen=True)
class WeightField:
    """Beamforming weights: (F, cM) time-invariant or (T, F, cM) varying."""

    weights: np.ndarray
    loading: float
    fallback_cells: int = 0

    def __post_init__(self) -> None:
        w = np.asarray(self.weights)
        if w.ndim not in (2, 3):
            raise ValueError(f"weights must be (F, cM) or (T, F, cM), got {w.shape}")
        object.__setattr__(self, "weights", w)

    @property
    def is_time_varying(self) -> bool:
        return self.weights.ndim == 3


class FilterKind(enum.Enum):
    TI = "ti"
    TVF = "tvf"


class TvfNormalization(enum.Enum):
    FULL_DIAGONAL = "full_diagonal"
    FAR_FIELD = "far_field"


def expand_context(
    spec: MultichannelSpectrogram, ctx: ContextConfig
) -> ContextSpectrogram:
    """Stack each frame with its a past and b future neighbours.

    Frames beyond either edge are zero. Entry layout is frame-major: index
    k*M + m holds channel m at frame offset (k - a).
    """
    data = spec.data  # M x T x F
    num_channels, num_frames, num_bins = data.shape
    c = ctx.c
    padded = np.zeros(
        (num_channels, num_frames + ctx.a + ctx.b, num_bins), dtype=data.dtype
    )
    padded[:, ctx.a:ctx.a + num_frames] = data
    out = np.empty((num_frames, num_bins, c * num_channels), dtype=data.dtype)
    for k in range(c):
        # frame offset k - a, all channels
        block = padded[:, k:k + num_frames]  # M x T x F
        out[:, :, k * num_channels:(k + 1) * num_channels] = block.transpose(1, 2, 0)
    return ContextSpectrogram(out, ctx, num_channels, spec.config, spec.num_samples)


def _mask_array(masks: "MaskTensor | np.ndarray") -> np.ndarray:
    if isinstance(masks, MaskTensor):
        return masks.data
    return np.asarray(masks, dtype=np.float64)


def estimate_covariances(
    ctx_spec: ContextSpectrogram,
    masks: "MaskTensor | np.ndarray | None" = None,
    frame_weights: np.ndarray | None = None,
) -> "tuple[CovarianceField, list[CovarianceField]]":
    """Sample mixture and per-source spatial covariances.

    Phi_y[f]   = 1/T sum_t Y_bar Y_bar^H
    Phi_s[f]   = 1/T sum_t A_s[t, f] Y_bar Y_bar^H

    The mixture matrix carries no mask (and no stage dependence). Masked
    matrices partition the mixture matrix exactly when the masks sum to one
    across sources at every cell. frame_weights optionally scales each
    frame's data vector (used for windowed processing blocks).
    """
    data = ctx_spec.data
    if not np.all(np.isfinite(data)):
        raise ValueError("context spectrogram contains non-finite values")
    num_frames = data.shape[0]
    if frame_weights is not None:
        fw = np.asarray(frame_weights, dtype=np.float64)
        if fw.shape != (num_frames,):
            raise ValueError(
                f"frame_weights shape {fw.shape} does not match T={num_frames}"
            )
        data = data * fw[:, None, None]
    y = data.transpose(1, 0, 2)  # F x T x cM
    y_h = y.conj()
    mix = np.matmul(y.swapaxes(1, 2), y_h) / num_frames  # F x cM x cM
    mix = 0.5 * (mix + mix.conj().swapaxes(1, 2))
    mixture_cov = CovarianceField(CovarianceKind.MIXTURE, matrices=mix)

    source_covs: list[CovarianceField] = []
    if masks is not None:
        mask_data = _mask_array(masks)
        if mask_data.ndim != 3 or mask_data.shape[1:] != data.shape[:2]:
            raise ValueError(
                f"mask shape {mask_data.shape} does not match context frames/bins "
                f"{data.shape[:2]}"
            )
        for s in range(mask_data.shape[0]):
            weighted = y * mask_data[s].T[:, :, None]  # F x T x cM
            cov = np.matmul(weighted.swapaxes(1, 2), y_h) / num_frames
            cov = 0.5 * (cov + cov.conj().swapaxes(1, 2))
            source_covs.append(CovarianceField(CovarianceKind.SOURCE, matrices=cov))
    return mixture_cov, source_covs


def _solve_weights(
    phi_y: np.ndarray, rhs: np.ndarray, u: np.ndarray, loading: float
) -> "tuple[np.ndarray, int]":
    """Solve (phi_y + loading * tr/d * I) W = rhs batched over leading axes.

    phi_y: (..., d, d), rhs: (..., d, R). Cells whose loaded matrix cannot be
    solved (zero trace, singular, or a non-finite result) fall back to the
    pass-through selector u per right-hand side. Returns (weights, fallbacks).
    """
    if loading < 0.0:
        raise ValueError(f"loading must be >= 0, got {loading}")
    d = phi_y.shape[-1]
    trace = np.real(np.trace(phi_y, axis1=-2, axis2=-1))
    silent = trace <= _TINY
    eye = np.eye(d, dtype=phi_y.dtype)
    loaded = phi_y + (loading * trace / d)[..., None, None] * eye
    if np.any(silent):
        # keep the batched solve well posed; these cells are overwritten below
        loaded = np.where(silent[..., None, None], eye, loaded)
    try:
        weights = np.linalg.solve(loaded, rhs)
        failed = ~np.all(np.isfinite(weights), axis=(-2, -1))
    except np.linalg.LinAlgError:
        flat_a = loaded.reshape(-1, d, d)
        flat_b = rhs.reshape(-1, d, rhs.shape[-1])
        out = np.empty_like(flat_b)
        failed_flat = np.zeros(flat_a.shape[0], dtype=bool)
        for i in range(flat_a.shape[0]):
            try:
                out[i] = np.linalg.solve(flat_a[i], flat_b[i])
                if not np.all(np.isfinite(out[i])):
                    failed_flat[i] = True
            except np.linalg.LinAlgError:
                failed_flat[i] = True
        weights = out.reshape(rhs.shape)
        failed = failed_flat.reshape(rhs.shape[:-2])

    bad = silent | failed
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        u_col = u.astype(phi_y.dtype)[:, None] * np.ones(
            rhs.shape[-1], dtype=phi_y.dtype
        )
        weights = np.where(bad[..., None, None], u_col, weights)
        n_silent = int(np.count_nonzero(silent))
        if n_bad > n_silent:
            logger.warning(
                "pass-through fallback at %d cells (%d silent, %d solve failures)",
                n_bad, n_silent, n_bad - n_silent,
            )
        else:
            logger.debug("pass-through fallback at %d silent cells", n_bad)
    return weights, n_bad


def ti_mcwf_weights(
    mixture_cov: CovarianceField,
    source_cov: CovarianceField,
    selector: RefSelector,
    loading: float = DEFAULT_LOADING,
) -> WeightField:
    """Per-frequency time-invariant multi-frame MCWF weights.

    w_s[f] solves (Phi_y[f] + loading * tr/cM * I) w = Phi_s[f] u_ref, the
    normal equations of the least-squares fit of w^H Y_bar to the masked
    reference observation. Singular frequencies fall back to w = u_ref.
    """
    phi_y = mixture_cov.matrices
    phi_s = source_cov.matrices
    if phi_y is None or phi_y.ndim != 3:
        raise ValueError("mixture covariance must be dense time-invariant (F, d, d)")
    if phi_s is None or phi_s.shape != phi_y.shape:
        raise ValueError("source covariance shape does not match the mixture")
    if not np.all(np.isfinite(phi_y)) or not np.all(np.isfinite(phi_s)):
        raise ValueError("covariance contains non-finite entries")
    u = selector.vector
    if u.shape[0] != phi_y.shape[-1]:
        raise ValueError(
            f"selector length {u.shape[0]} does not match covariance dim "
            f"{phi_y.shape[-1]}"
        )
    rhs = (phi_s @ u.astype(phi_s.dtype))[..., None]  # F x d x 1
    weights, n_bad = _solve_weights(phi_y, rhs, u, loading)
    return WeightField(weights[..., 0], loading=loading, fallback_cells=n_bad)


def apply_weights(weights: WeightField, ctx_spec: ContextSpectrogram) -> np.ndarray:
    """Beamform: out[t, f] = w[f]^H Y_bar[t, f] (or w[t, f]^H for TVF).

    Return
        (T, F) complex spectrogram of the filtered source.
    """
    x = ctx_spec.data  # T x F x cM
    w = weights.weights
    if w.shape[-1] != x.shape[-1]:
        raise ValueError(
            f"weight dim {w.shape[-1]} does not match stacked channels {x.shape[-1]}"
        )
    if weights.is_time_varying:
        if w.shape[:2] != x.shape[:2]:
            raise ValueError(
                f"time-varying weights {w.shape} do not match frames/bins {x.shape[:2]}"
            )
        return np.einsum("tfc,tfc->tf", w.conj(), x)
    if w.shape[0] != x.shape[1]:
        raise ValueError(f"weights for {w.shape[0]} bins but data has {x.shape[1]}")
    return np.einsum("fc,tfc->tf", w.conj(), x)


def tvf_source_covariance(
    psd: np.ndarray,
    spatial: "CovarianceField | np.ndarray",
    normalization: TvfNormalization = TvfNormalization.FULL_DIAGONAL,
    far_field_mic: int = 0,
) -> CovarianceField:
    """Factorized time-varying covariance: Phi_s[t, f] = psd[t, f] * C_s[f].

    C_s is the spatial matrix normalized to unit diagonal via d d^T with
    d = sqrt(diag), or divided by a single microphone's diagonal entry under
    the far-field approximation. Silent frequencies (zero diagonal) produce a
    zero coherence and are handled by the per-cell pass-through fallback
    downstream.
    """
    psd = np.asarray(psd, dtype=np.float64)
    if psd.ndim != 2:
        raise ValueError(f"psd must be (T, F), got shape {psd.shape}")
    if not np.all(np.isfinite(psd)):
        raise ValueError("psd contains non-finite values")
    if psd.min() < 0.0:
        raise ValueError(f"psd must be non-negative, min {psd.min():.3g}")
    mats = spatial.matrices if isinstance(spatial, CovarianceField) else np.asarray(spatial)
    if mats is None or mats.ndim != 3 or mats.shape[0] != psd.shape[1]:
        raise ValueError("spatial covariance must be dense (F, d, d) matching psd bins")
    diag = np.real(np.diagonal(mats, axis1=1, axis2=2))  # F x d
    if diag.min() < -1e-12 * max(diag.max(), 1.0):
        raise ValueError(f"spatial covariance has a negative diagonal: {diag.min():.3g}")
    diag = np.maximum(diag, 0.0)
    if normalization is TvfNormalization.FULL_DIAGONAL:
        d = np.sqrt(diag)
        denom = d[:, :, None] * d[:, None, :] + _TINY
    elif normalization is TvfNormalization.FAR_FIELD:
        if not 0 <= far_field_mic < mats.shape[-1]:
            raise ValueError(
                f"far_field_mic {far_field_mic} out of range for dim {mats.shape[-1]}"
            )
        denom = diag[:, far_field_mic][:, None, None] + _TINY
    else:
        raise ValueError(f"unknown normalization: {normalization!r}")
    return CovarianceField(
        CovarianceKind.SOURCE, psd=psd, coherence=mats / denom
    )


def _tvf_parts(cov: CovarianceField) -> "tuple[np.ndarray, np.ndarray] | np.ndarray":
    if cov.psd is not None:
        return cov.psd, cov.coherence
    mats = cov.matrices
    if mats.ndim != 4:
        raise ValueError("time-varying covariance must be (T, F, d, d) or factored")
    return mats


def tvf_mcwf(
    source_covs: "list[CovarianceField]",
    ctx_spec: ContextSpectrogram,
    selector: RefSelector,
    loading: float = DEFAULT_LOADING,
    freq_chunk: int = 64,
) -> "tuple[np.ndarray, int]":
    """Per-cell time-varying MCWF, Phi_y[t, f] = sum_s Phi_s[t, f].

    Solves one linear system per (t, f) with every source's steering as a
    right-hand side (frequency-chunked to bound memory). Returns the stacked
    (S, T, F) beamformed spectrograms and the fallback cell count.
    """
    if not source_covs:
        raise ValueError("need at least one source covariance")
    x = ctx_spec.data  # T x F x cM
    num_frames, num_bins, dim = x.shape
    u = selector.vector
    if u.shape[0] != dim:
        raise ValueError(f"selector length {u.shape[0]} does not match cM {dim}")
    parts = [_tvf_parts(cov) for cov in source_covs]
    num_sources = len(parts)
    out = np.empty((num_sources, num_frames, num_bins), dtype=np.complex128)
    total_bad = 0
    for f0 in range(0, num_bins, freq_chunk):
        f1 = min(f0 + freq_chunk, num_bins)
        phi_y = np.zeros((num_frames, f1 - f0, dim, dim), dtype=np.complex128)
        rhs = np.empty((num_frames, f1 - f0, dim, num_sources), dtype=np.complex128)
        for s, part in enumerate(parts):
            if isinstance(part, tuple):
                psd, coh = part
                phi_chunk = psd[:, f0:f1, None, None] * coh[None, f0:f1]
            else:
                phi_chunk = part[:, f0:f1]
            phi_y += phi_chunk
            rhs[..., s] = phi_chunk @ u.astype(np.complex128)
        weights, n_bad = _solve_weights(phi_y, rhs, u, loading)
        total_bad += n_bad
        out[:, :, f0:f1] = np.einsum(
            "tfcs,tfc->stf", weights.conj(), x[:, f0:f1]
        )
    return out, total_bad


def _ti_beamform_all(
    ctx_data: np.ndarray,
    masks: np.ndarray,
    u: np.ndarray,
    loading: float,
) -> np.ndarray:
    """TI weights and application for every source on raw context data."""
    num_frames = ctx_data.shape[0]
    y = ctx_data.transpose(1, 0, 2)  # F x T x cM
    y_h = y.conj()
    phi_y = np.matmul(y.swapaxes(1, 2), y_h) / num_frames
    phi_y = 0.5 * (phi_y + phi_y.conj().swapaxes(1, 2))
    num_sources = masks.shape[0]
    rhs = np.empty(phi_y.shape[:-1] + (num_sources,), dtype=phi_y.dtype)
    for s in range(num_sources):
        weighted = y * masks[s].T[:, :, None]
        phi_s = np.matmul(weighted.swapaxes(1, 2), y_h) / num_frames
        phi_s = 0.5 * (phi_s + phi_s.conj().swapaxes(1, 2))
        rhs[..., s] = phi_s @ u.astype(phi_s.dtype)
    weights, _ = _solve_weights(phi_y, rhs, u, loading)  # F x cM x S
    return np.einsum("fcs,tfc->stf", weights.conj(), ctx_data)


def _tvf_beamform_all(
    ctx_data: np.ndarray,
    masks: np.ndarray,
    u: np.ndarray,
    ref_index: int,
    loading: float,
    normalization: TvfNormalization,
    freq_chunk: int = 64,
) -> np.ndarray:
    """TVF weights and application for every source on raw context data.

    The per-cell PSD is mask * |Y_ref|^2; for power-fraction masks this
    differs from the masked-estimate power only by a factor common to all
    sources at each cell, which cancels in the solve.
    """
    num_frames, num_bins, dim = ctx_data.shape
    y = ctx_data.transpose(1, 0, 2)
    y_h = y.conj()
    ref_power = np.abs(ctx_data[:, :, ref_index]) ** 2  # T x F
    num_sources = masks.shape[0]
    psds = []
    cohs = []
    for s in range(num_sources):
        weighted = y * masks[s].T[:, :, None]
        psi = np.matmul(weighted.swapaxes(1, 2), y_h) / num_frames
        psi = 0.5 * (psi + psi.conj().swapaxes(1, 2))
        cov = tvf_source_covariance(
            masks[s] * ref_power, psi, normalization, far_field_mic=ref_index
        )
        psds.append(cov.psd)
        cohs.append(cov.coherence)
    out = np.empty((num_sources, num_frames, num_bins), dtype=np.complex128)
    for f0 in range(0, num_bins, freq_chunk):
        f1 = min(f0 + freq_chunk, num_bins)
        phi_y = np.zeros((num_frames, f1 - f0, dim, dim), dtype=np.complex128)
        rhs = np.empty((num_frames, f1 - f0, dim, num_sources), dtype=np.complex128)
        for s in range(num_sources):
            phi_chunk = psds[s][:, f0:f1, None, None] * cohs[s][None, f0:f1]
            phi_y += phi_chunk
            rhs[..., s] = phi_chunk @ u.astype(np.complex128)
        weights, _ = _solve_weights(phi_y, rhs, u, loading)
        out[:, :, f0:f1] = np.einsum(
            "tfcs,tfc->stf", weights.conj(), ctx_data[:, f0:f1]
        )
    return out


def block_beamform(
    spec: MultichannelSpectrogram,
    masks: "MaskTensor | np.ndarray",
    ctx: ContextConfig,
    ref_channel: int,
    block_frames: int,
    mode: FilterKind = FilterKind.TI,
    loading: float = DEFAULT_LOADING,
    normalization: TvfNormalization = TvfNormalization.FULL_DIAGONAL,
) -> np.ndarray:
    """Block-based MCWF over half-overlapping Vorbis-windowed frame groups.

    Each block's frames are multiplied by the Vorbis window before
    covariance estimation and filtering, and the filtered output frames are
    windowed again before overlap-add, so the squared envelope sums to
    exactly one at every frame (the blocks are padded with half a block of
    zero frames at each end). A block at least as long as the utterance
    degenerates to full-utterance processing.

    Return
        (S, T, F) complex beamformed spectrograms.
    """
    mask_data = _mask_array(masks)
    num_channels = spec.num_channels
    num_frames, num_bins = spec.num_frames, spec.num_bins
    if mask_data.ndim != 3 or mask_data.shape[1:] != (num_frames, num_bins):
        raise ValueError(
            f"mask shape {mask_data.shape} does not match spectrogram "
            f"({num_frames}, {num_bins})"
        )
    if block_frames < 2 or block_frames % 2 != 0:
        raise ValueError(f"block_frames must be even and >= 2, got {block_frames}")
    selector = RefSelector.build(ctx, num_channels, ref_channel)
    u = selector.vector
    ref_index = ctx.a * num_channels + ref_channel
    ctx_full = expand_context(spec, ctx).data  # T x F x cM

    if block_frames >= num_frames:
        if mode is FilterKind.TI:
            return _ti_beamform_all(ctx_full, mask_data, u, loading)
        return _tvf_beamform_all(
            ctx_full, mask_data, u, ref_index, loading, normalization
        )

    hop = block_frames // 2
    num_blocks = math.ceil((num_frames + hop) / hop)
    padded_frames = (num_blocks - 1) * hop + block_frames
    lead = hop
    window = make_window(WindowKind.VORBIS, block_frames)

    ctx_padded = np.zeros(
        (padded_frames, num_bins, ctx_full.shape[2]), dtype=ctx_full.dtype
    )
    ctx_padded[lead:lead + num_frames] = ctx_full
    masks_padded = np.zeros(
        (mask_data.shape[0], padded_frames, num_bins), dtype=np.float64
    )
    masks_padded[:, lead:lead + num_frames] = mask_data

    out = np.zeros(
        (mask_data.shape[0], padded_frames, num_bins), dtype=np.complex128
    )
    for k in range(num_blocks):
        sl = slice(k * hop, k * hop + block_frames)
        block_ctx = ctx_padded[sl] * window[:, None, None]
        block_masks = masks_padded[:, sl]
        if mode is FilterKind.TI:
            filtered = _ti_beamform_all(block_ctx, block_masks, u, loading)
        else:
            filtered = _tvf_beamform_all(
                block_ctx, block_masks, u, ref_index, loading, normalization
            )
        out[:, sl] += filtered * window[None, :, None]
    return out[:, lead:lead + num_frames]
