"""Mask-driven multichannel Wiener beamforming for source separation.

The toolkit covers the full loop: room simulation (image method), STFT
analysis/synthesis, oracle and external mask providers, multi-frame
time-invariant and time-varying multichannel Wiener filters (optionally
block-online), sequential masking/beamforming pipelines, and
permutation-invariant SI-SNR scoring.
"""

from .beamform import (
    ContextConfig,
    ContextSpectrogram,
    CovarianceField,
    FilterKind,
    RefSelector,
    TvfNormalization,
    WeightField,
    apply_weights,
    block_beamform,
    estimate_covariances,
    expand_context,
    ti_mcwf_weights,
    tvf_mcwf,
    tvf_source_covariance,
)
from .io import (
    Manifest,
    ManifestEntry,
    load_manifest,
    read_wav,
    save_manifest,
    write_wav,
)
from .masking import (
    ExternalEstimateProvider,
    ExternalMaskProvider,
    MaskProvider,
    MaskTensor,
    OracleMaskKind,
    OracleMaskProvider,
    apply_mask,
    binary_mask,
    mixture_consistency_projection,
    oracle_masks_from_sources,
    read_mask_file,
    wiener_like_mask,
    write_mask_file,
)
from .metrics import (
    LossConfig,
    MetricReport,
    evaluate,
    sequence_loss,
    si_snr,
    snr_stabilized,
)
from .pipeline import (
    BfMode,
    LoadedExample,
    MaskSource,
    SeparationTrace,
    StageConfig,
    SweepCell,
    SweepGrid,
    best_cell,
    default_stages,
    run_sequence,
    sweep,
)
from .roomsim import (
    MIC_SUBSETS,
    Rir,
    RoomScene,
    image_method_rir,
    load_scene,
    render_mixture,
    sample_scene,
    save_scene,
    synthesize_noise_burst,
    synthesize_speech_like,
)
from .stft import (
    MultichannelSpectrogram,
    MultichannelWaveform,
    StftConfig,
    WindowKind,
    beamforming_stft_config,
    istft,
    make_window,
    masking_stft_config,
    stft,
)

__version__ = "0.1.0"
