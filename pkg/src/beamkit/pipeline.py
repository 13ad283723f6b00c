"""Sequential masking / beamforming separation runs.

A run alternates masking stages (MN) and beamforming stages (BF):
MN1 -> BF1 -> MN2 -> BF2 -> MN3 in the default three-stage layout, where the
final stage is masking only. Every masking stage produces per-source
time-domain estimates followed by a mixture-consistency projection; every
beamforming stage re-analyzes those estimates and the multichannel mixture
in its own STFT domain, derives power-fraction masks from the estimates,
and filters the context-expanded mixture with a time-invariant or
time-varying multichannel Wiener filter (optionally block-based).
"""

from __future__ import annotations

import enum
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .beamform import (
    ContextConfig,
    FilterKind,
    RefSelector,
    TvfNormalization,
    apply_weights,
    block_beamform,
    estimate_covariances,
    expand_context,
    ti_mcwf_weights,
    tvf_mcwf,
    tvf_source_covariance,
)
from .masking import (
    DEFAULT_MASK_FLOOR,
    MaskProvider,
    OracleMaskKind,
    OracleMaskProvider,
    mixture_consistency_projection,
    wiener_like_mask,
)
from .metrics import evaluate
from .roomsim import MIC_SUBSETS
from .stft import (
    MultichannelSpectrogram,
    MultichannelWaveform,
    StftConfig,
    beamforming_stft_config,
    istft,
    masking_stft_config,
    stft,
)

__all__ = [
    "BfMode",
    "MaskSource",
    "StageConfig",
    "SeparationTrace",
    "LoadedExample",
    "SweepGrid",
    "SweepCell",
    "default_stages",
    "run_sequence",
    "sweep",
    "best_cell",
]

DEFAULT_LOADING = 1e-4


class BfMode(enum.Enum):
    NONE = "none"
    TI = "ti"
    TVF = "tvf"
    BLOCK_TI = "block_ti"
    BLOCK_TVF = "block_tvf"


class MaskSource(enum.Enum):
    ORACLE = "oracle"
    EXTERNAL = "external"


_BLOCK_MODES = (BfMode.BLOCK_TI, BfMode.BLOCK_TVF)
_TVF_MODES = (BfMode.TVF, BfMode.BLOCK_TVF)


@dataclass(frozen=True)
class StageConfig:
    """One masking stage plus its (optional) following beamforming stage."""

    stage: int
    bf_mode: BfMode = BfMode.NONE
    bf_stft: StftConfig | None = None
    ctx: ContextConfig = ContextConfig(0, 0)
    block_frames: int | None = None
    ref_channel: int = 0
    loading: float = DEFAULT_LOADING
    tvf_normalization: TvfNormalization = TvfNormalization.FULL_DIAGONAL
    mask_source: MaskSource = MaskSource.ORACLE
    external_estimates: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.stage < 1:
            raise ValueError(f"stage index must be >= 1, got {self.stage}")
        if self.bf_mode is not BfMode.NONE and self.bf_stft is None:
            raise ValueError(f"stage {self.stage}: bf_mode {self.bf_mode.value} needs bf_stft")
        if self.bf_mode in _BLOCK_MODES and self.block_frames is None:
            raise ValueError(
                f"stage {self.stage}: block mode requires block_frames"
            )
        if self.loading < 0.0:
            raise ValueError(f"loading must be >= 0, got {self.loading}")
        if self.mask_source is MaskSource.EXTERNAL:
            est = self.external_estimates
            if est is None:
                raise ValueError(
                    f"stage {self.stage}: external mask source needs estimates"
                )
            est = np.asarray(est, dtype=np.float64)
            if est.ndim != 2 or est.shape[0] < 1:
                raise ValueError(
                    f"stage {self.stage}: external estimates must be (S, n)"
                )
            object.__setattr__(self, "external_estimates", est)


def default_stages(
    num_bf_stages: int = 2,
    bf_mode: BfMode = BfMode.TI,
    win_ms: float = 64.0,
    context: int = 4,
    block_frames: int | None = None,
    ref_channel: int = 0,
    loading: float = DEFAULT_LOADING,
    sample_rate: int = 16000,
    tvf_normalization: TvfNormalization = TvfNormalization.FULL_DIAGONAL,
) -> "list[StageConfig]":
    """Canonical stage layout: num_bf_stages masking+BF pairs, then a final
    masking-only stage (2 BF stages gives MN1-BF1-MN2-BF2-MN3)."""
    if num_bf_stages < 0:
        raise ValueError(f"num_bf_stages must be >= 0, got {num_bf_stages}")
    cfg = beamforming_stft_config(win_ms, sample_rate)
    stages = [
        StageConfig(
            stage=i + 1,
            bf_mode=bf_mode,
            bf_stft=cfg,
            ctx=ContextConfig.from_total(context),
            block_frames=block_frames,
            ref_channel=ref_channel,
            loading=loading,
            tvf_normalization=tvf_normalization,
        )
        for i in range(num_bf_stages)
    ]
    stages.append(
        StageConfig(stage=num_bf_stages + 1, bf_mode=BfMode.NONE, ref_channel=ref_channel)
    )
    return stages


@dataclass
class SeparationTrace:
    """Every intermediate estimate of a run, keyed MN1/BF1/MN2/..."""

    stages: "dict[str, np.ndarray]" = field(default_factory=dict)
    timing: "dict[str, float]" = field(default_factory=dict)
    sample_rate: int = 16000

    @property
    def order(self) -> "list[str]":
        return list(self.stages)

    @property
    def final(self) -> np.ndarray:
        if not self.stages:
            raise ValueError("empty trace")
        return self.stages[self.order[-1]]


def _beamform_stage(
    cfg: StageConfig,
    mixture_spec: MultichannelSpectrogram,
    estimates: np.ndarray,
    mask_floor: float,
) -> np.ndarray:
    """Run one BF stage, returning (S, T, F) beamformed spectrograms."""
    num_channels = mixture_spec.num_channels
    est_spec = stft(estimates, cfg.bf_stft).data  # S x T x F
    masks = wiener_like_mask(est_spec, floor=mask_floor)
    if cfg.bf_mode in _BLOCK_MODES:
        kind = FilterKind.TI if cfg.bf_mode is BfMode.BLOCK_TI else FilterKind.TVF
        return block_beamform(
            mixture_spec,
            masks,
            cfg.ctx,
            cfg.ref_channel,
            cfg.block_frames,
            mode=kind,
            loading=cfg.loading,
            normalization=cfg.tvf_normalization,
        )
    ctx_spec = expand_context(mixture_spec, cfg.ctx)
    selector = RefSelector.build(cfg.ctx, num_channels, cfg.ref_channel)
    _, source_covs = estimate_covariances(ctx_spec, masks)
    if cfg.bf_mode is BfMode.TI:
        mixture_cov, _ = estimate_covariances(ctx_spec)
        out = np.empty(est_spec.shape, dtype=np.complex128)
        for s, cov in enumerate(source_covs):
            weights = ti_mcwf_weights(mixture_cov, cov, selector, cfg.loading)
            out[s] = apply_weights(weights, ctx_spec)
        return out
    # time-varying factorized filter
    ref_index = cfg.ctx.a * num_channels + cfg.ref_channel
    tv_covs = [
        tvf_source_covariance(
            np.abs(est_spec[s]) ** 2,
            cov,
            cfg.tvf_normalization,
            far_field_mic=ref_index,
        )
        for s, cov in enumerate(source_covs)
    ]
    out, _ = tvf_mcwf(tv_covs, ctx_spec, selector, cfg.loading)
    return out


def run_sequence(
    mixture: MultichannelWaveform,
    truth: "list[MultichannelWaveform] | np.ndarray | None",
    stages: "list[StageConfig]",
    mask_provider: MaskProvider | None = None,
    masking_stft: StftConfig | None = None,
    oracle_kind: OracleMaskKind = OracleMaskKind.WIENER_LIKE,
    mask_floor: float = DEFAULT_MASK_FLOOR,
    refine_with_prior: bool = True,
) -> SeparationTrace:
    """Run the alternating masking / beamforming sequence.

    Arguments
        mixture: (M, n) multichannel mixture.
        truth: per-source reverberant images (list of (M, n) waveforms) or a
            (S, n) array of reference-channel signals; required whenever an
            oracle masking stage runs without an injected provider.
        stages: consecutive StageConfig entries numbered from 1.
        mask_provider: overrides the oracle provider (external estimates are
            still honoured for stages marked external).
    """
    if not stages:
        raise ValueError("need at least one stage")
    for k, cfg in enumerate(stages):
        if cfg.stage != k + 1:
            raise ValueError(
                f"stage configs must be numbered consecutively from 1, got "
                f"{[c.stage for c in stages]}"
            )
        if cfg.ref_channel >= mixture.num_channels:
            raise ValueError(
                f"stage {cfg.stage}: ref_channel {cfg.ref_channel} out of range "
                f"for {mixture.num_channels} channels"
            )
    if masking_stft is None:
        masking_stft = masking_stft_config(mixture.sample_rate)

    n = mixture.num_samples
    provider = mask_provider
    needs_oracle = any(
        cfg.mask_source is MaskSource.ORACLE for cfg in stages
    ) and provider is None
    if needs_oracle:
        if truth is None:
            raise ValueError("oracle masking requires ground-truth images")
        ref = stages[0].ref_channel
        if isinstance(truth, np.ndarray) and truth.ndim == 2:
            truth_ref = truth
        else:
            truth_ref = np.stack([img.samples[ref] for img in truth])
        if truth_ref.shape[1] != n:
            raise ValueError(
                f"truth length {truth_ref.shape[1]} does not match mixture {n}"
            )
        provider = OracleMaskProvider(
            truth_ref,
            masking_stft,
            kind=oracle_kind,
            floor=mask_floor,
            refine_with_prior=refine_with_prior,
        )

    trace = SeparationTrace(sample_rate=mixture.sample_rate)
    prior_bf: np.ndarray | None = None
    spec_cache: "dict[StftConfig, MultichannelSpectrogram]" = {}
    for cfg in stages:
        mix_ref = mixture.samples[cfg.ref_channel]
        t0 = time.perf_counter()
        if cfg.mask_source is MaskSource.EXTERNAL:
            estimates = np.asarray(cfg.external_estimates, dtype=np.float64)
            if estimates.shape[1] != n:
                raise ValueError(
                    f"stage {cfg.stage}: external estimate length "
                    f"{estimates.shape[1]} does not match mixture {n}"
                )
        else:
            estimates = provider.estimate_sources(
                mix_ref, stage=cfg.stage, prior_estimates=prior_bf
            )
        estimates = mixture_consistency_projection(estimates, mix_ref)
        trace.stages[f"MN{cfg.stage}"] = estimates
        trace.timing[f"MN{cfg.stage}"] = time.perf_counter() - t0

        if cfg.bf_mode is BfMode.NONE:
            continue
        t0 = time.perf_counter()
        if cfg.bf_stft not in spec_cache:
            spec_cache[cfg.bf_stft] = stft(mixture, cfg.bf_stft)
        mixture_spec = spec_cache[cfg.bf_stft]
        bf_spec = _beamform_stage(cfg, mixture_spec, estimates, mask_floor)
        bf = istft(
            MultichannelSpectrogram(bf_spec, cfg.bf_stft, n)
        ).samples
        trace.stages[f"BF{cfg.stage}"] = bf
        trace.timing[f"BF{cfg.stage}"] = time.perf_counter() - t0
        prior_bf = bf
    return trace


@dataclass(frozen=True)
class LoadedExample:
    """One evaluation mixture with its ground-truth images."""

    mixture: MultichannelWaveform
    images: "list[MultichannelWaveform]"
    name: str = ""
    task: str = ""

    def subset(self, mic_count: int) -> "LoadedExample":
        """Restrict to a cube-subset of the recorded channels."""
        available = self.mixture.num_channels
        if mic_count == available:
            return self
        if available != 8 or mic_count not in MIC_SUBSETS:
            raise ValueError(
                f"cannot take a {mic_count}-mic subset of {available} channels"
            )
        idx = list(MIC_SUBSETS[mic_count])
        return LoadedExample(
            MultichannelWaveform(self.mixture.samples[idx], self.mixture.sample_rate),
            [
                MultichannelWaveform(img.samples[idx], img.sample_rate)
                for img in self.images
            ],
            name=self.name,
            task=self.task,
        )


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian sweep over beamformer settings.

    block_frames entries may be None (full-utterance processing). Cells run
    a single masking+BF stage and score the BF output.
    """

    mode: BfMode = BfMode.TI
    windows_ms: "tuple[float, ...]" = (64.0,)
    contexts: "tuple[int, ...]" = (4,)
    block_frames: "tuple[int | None, ...]" = (None,)
    mic_counts: "tuple[int, ...]" = (8,)
    ref_channel: int = 0
    loading: float = DEFAULT_LOADING

    def cells(self):
        return itertools.product(
            self.windows_ms, self.contexts, self.block_frames, self.mic_counts
        )


@dataclass(frozen=True)
class SweepCell:
    label: str
    mode: BfMode
    window_ms: float
    context: int
    block_frames: int | None
    mic_count: int
    mean_si_snri: float
    per_example: "tuple[float, ...]"


def cell_label(mode: BfMode, window_ms: float, context: int) -> str:
    return f"{mode.value.upper().replace('_', ' ')} {window_ms:g}ms x {context}"


def _run_cell(
    example: LoadedExample,
    mode: BfMode,
    window_ms: float,
    context: int,
    block_frames: int | None,
    mic_count: int,
    ref_channel: int,
    loading: float,
    permutation_invariant: bool,
) -> float:
    sub = example.subset(mic_count)
    bf_mode = mode
    if block_frames is not None and mode in (BfMode.TI, BfMode.TVF):
        bf_mode = BfMode.BLOCK_TI if mode is BfMode.TI else BfMode.BLOCK_TVF
    sr = sub.mixture.sample_rate
    cfg = StageConfig(
        stage=1,
        bf_mode=bf_mode,
        bf_stft=beamforming_stft_config(window_ms, sr),
        ctx=ContextConfig.from_total(context),
        block_frames=block_frames,
        ref_channel=ref_channel,
        loading=loading,
    )
    trace = run_sequence(sub.mixture, sub.images, [cfg])
    refs = np.stack([img.samples[ref_channel] for img in sub.images])
    report = evaluate(
        trace.stages["BF1"],
        refs,
        sub.mixture.samples[ref_channel],
        permutation_invariant=permutation_invariant,
    )
    return report.mean_si_snri


def sweep(
    examples: "list[LoadedExample]",
    grid: SweepGrid,
    permutation_invariant: bool = True,
) -> "list[SweepCell]":
    """Mean SI-SNRi of the swept beamformer over a dataset, per grid cell."""
    if not examples:
        raise ValueError("no examples to sweep")
    cells = []
    for window_ms, context, block, mic_count in grid.cells():
        scores = tuple(
            _run_cell(
                ex, grid.mode, window_ms, context, block, mic_count,
                grid.ref_channel, grid.loading, permutation_invariant,
            )
            for ex in examples
        )
        cells.append(
            SweepCell(
                label=cell_label(grid.mode, window_ms, context),
                mode=grid.mode,
                window_ms=window_ms,
                context=context,
                block_frames=block,
                mic_count=mic_count,
                mean_si_snri=float(np.mean(scores)),
                per_example=scores,
            )
        )
    return cells


def best_cell(cells: "list[SweepCell]") -> SweepCell:
    if not cells:
        raise ValueError("no sweep cells")
    return max(cells, key=lambda c: c.mean_si_snri)
