import numpy as np
import pytest

from beamkit.masking import (
    DEFAULT_MASK_FLOOR,
    ExternalEstimateProvider,
    ExternalMaskProvider,
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
from beamkit.metrics import si_snr
from beamkit.stft import MultichannelSpectrogram, StftConfig, WindowKind, istft, stft

SMALL_CONFIG = StftConfig(WindowKind.SQRT_HANN, win_len=256, hop=64, fft_size=256,
                          sample_rate=16000)


def test_mask_tensor_validation():
    with pytest.raises(ValueError):
        MaskTensor(np.zeros((2, 3)))  # not 3-D
    with pytest.raises(ValueError):
        MaskTensor(np.zeros((0, 3, 4)))
    with pytest.raises(ValueError):
        MaskTensor(np.full((1, 2, 2), np.nan))
    with pytest.raises(ValueError):
        MaskTensor(np.full((1, 2, 2), 1.1))
    with pytest.raises(ValueError):
        MaskTensor(np.full((1, 2, 2), -0.01))


def test_mask_tensor_clips_rounding_slack():
    # values inside the 1e-9 slack band are accepted and clipped back
    m = MaskTensor(np.full((1, 2, 2), 1.0 + 5e-10))
    assert m.data.max() == 1.0
    m = MaskTensor(np.full((1, 2, 2), -5e-10))
    assert m.data.min() == 0.0


def test_wiener_mask_power_ratio_example():
    # |X1|^2 = 3, |X2|^2 = 1 at one bin -> masks 0.75 / 0.25
    specs = np.zeros((2, 1, 1), dtype=complex)
    specs[0] = np.sqrt(3.0)
    specs[1] = 1.0
    m = wiener_like_mask(specs, floor=1e-300)
    np.testing.assert_allclose(m.data[:, 0, 0], [0.75, 0.25], rtol=1e-12)


def test_wiener_mask_single_source_is_one():
    rng = np.random.default_rng(11)
    spec = rng.standard_normal((1, 6, 9)) + 1j * rng.standard_normal((1, 6, 9))
    m = wiener_like_mask(spec, floor=1e-300)
    np.testing.assert_allclose(m.data, 1.0, rtol=1e-10)


def test_wiener_mask_equal_magnitudes_split_evenly():
    rng = np.random.default_rng(12)
    base = rng.standard_normal((4, 5)) + 1j * rng.standard_normal((4, 5))
    # same magnitude, different phase
    specs = np.stack([base, base * np.exp(1j * 0.7)])
    m = wiener_like_mask(specs, floor=1e-300)
    np.testing.assert_allclose(m.data, 0.5, rtol=1e-10)


def test_wiener_mask_partition_of_unity_and_silence():
    rng = np.random.default_rng(13)
    specs = rng.standard_normal((3, 7, 11)) + 1j * rng.standard_normal((3, 7, 11))
    specs[:, 2, :] = 0.0  # a silent frame
    m = wiener_like_mask(specs)
    sums = m.data.sum(axis=0)
    active = np.abs(specs).sum(axis=0) > 0
    np.testing.assert_allclose(sums[active], 1.0, atol=1e-6)
    # silent cells get mask 0 for every source, not 1/S
    np.testing.assert_allclose(m.data[:, 2, :], 0.0)


def test_wiener_mask_input_validation():
    with pytest.raises(ValueError):
        wiener_like_mask(np.zeros((3, 4)))  # missing the source axis
    with pytest.raises(ValueError):
        wiener_like_mask(np.zeros((2, 3, 4), dtype=complex), floor=0.0)


def test_binary_mask_one_hot_and_tie_break():
    rng = np.random.default_rng(14)
    specs = rng.standard_normal((3, 6, 8)) + 1j * rng.standard_normal((3, 6, 8))
    m = binary_mask(specs)
    assert set(np.unique(m.data)) <= {0.0, 1.0}
    np.testing.assert_allclose(m.data.sum(axis=0), 1.0)
    # exact tie goes to the lowest source index
    tied = np.ones((2, 1, 1), dtype=complex)
    m = binary_mask(tied)
    np.testing.assert_allclose(m.data[:, 0, 0], [1.0, 0.0])


def test_binary_masks_partition_disjoint_sources():
    sr = 16000
    n = 4000
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    rng = np.random.default_rng(15)
    s1[: n // 2] = rng.standard_normal(n // 2)
    s2[n // 2 :] = rng.standard_normal(n - n // 2)
    cfg = StftConfig(WindowKind.SQRT_HANN, 256, 64, 256, sr)
    m = oracle_masks_from_sources(np.stack([s1, s2]), cfg, kind=OracleMaskKind.BINARY)
    np.testing.assert_allclose(m.data.sum(axis=0), 1.0)
    spec1 = np.abs(stft(s1[None], cfg).data[0])
    spec2 = np.abs(stft(s2[None], cfg).data[0])
    # frames where only one source carries energy are assigned to it
    only1 = (spec1.sum(axis=1) > 1e-8) & (spec2.sum(axis=1) < 1e-12)
    only2 = (spec2.sum(axis=1) > 1e-8) & (spec1.sum(axis=1) < 1e-12)
    assert only1.any() and only2.any()
    np.testing.assert_allclose(m.data[0][only1], 1.0)
    np.testing.assert_allclose(m.data[1][only2], 1.0)


def test_oracle_masks_equal_sources_give_half():
    rng = np.random.default_rng(16)
    x = rng.standard_normal(3000)
    m = oracle_masks_from_sources(np.stack([x, x]), SMALL_CONFIG)
    active = m.data.sum(axis=0) > 0.5
    np.testing.assert_allclose(m.data[0][active], 0.5, atol=1e-6)


def test_oracle_masks_input_validation():
    with pytest.raises(ValueError):
        oracle_masks_from_sources(np.empty((0, 100)), SMALL_CONFIG)
    # 1-D input is promoted to a single source
    m = oracle_masks_from_sources(np.random.default_rng(17).standard_normal(2000),
                                  SMALL_CONFIG)
    assert m.num_sources == 1


def test_apply_mask_examples():
    y = np.full((1, 1), 4.0 + 0j)
    m = MaskTensor(np.array([0.75, 0.25]).reshape(2, 1, 1))
    out = apply_mask(m, y)
    np.testing.assert_allclose(out[0], 3.0 + 0j)
    np.testing.assert_allclose(out[1], 1.0 + 0j)

    rng = np.random.default_rng(18)
    y = rng.standard_normal((5, 7)) + 1j * rng.standard_normal((5, 7))
    ones = MaskTensor(np.ones((1, 5, 7)))
    np.testing.assert_allclose(apply_mask(ones, y)[0], y)
    zeros = MaskTensor(np.zeros((2, 5, 7)))
    np.testing.assert_allclose(apply_mask(zeros, y), 0.0)


def test_apply_mask_shape_mismatch():
    m = MaskTensor(np.ones((1, 5, 7)))
    with pytest.raises(ValueError):
        apply_mask(m, np.zeros((5, 8), dtype=complex))


def test_mixture_consistency_fixed_point():
    rng = np.random.default_rng(19)
    est = rng.standard_normal((3, 200))
    y = est.sum(axis=0)
    out = mixture_consistency_projection(est, y)
    np.testing.assert_allclose(out, est, atol=1e-15)


def test_mixture_consistency_zeros_split_evenly():
    rng = np.random.default_rng(20)
    y = rng.standard_normal(150)
    out = mixture_consistency_projection(np.zeros((2, 150)), y)
    np.testing.assert_allclose(out[0], y / 2)
    np.testing.assert_allclose(out[1], y / 2)


def test_mixture_consistency_restores_sum_and_is_idempotent():
    rng = np.random.default_rng(21)
    for _ in range(10):
        s = rng.integers(1, 5)
        n = rng.integers(10, 400)
        est = rng.standard_normal((s, n))
        y = rng.standard_normal(n)
        out = mixture_consistency_projection(est, y)
        np.testing.assert_allclose(out.sum(axis=0), y, atol=1e-12)
        again = mixture_consistency_projection(out, y)
        np.testing.assert_allclose(again, out, atol=1e-12)
        # every source shifted by the same residual / S
        shift = (y - est.sum(axis=0)) / s
        np.testing.assert_allclose(out - est, np.broadcast_to(shift, est.shape))


def test_mixture_consistency_validation():
    with pytest.raises(ValueError):
        mixture_consistency_projection(np.zeros(10), np.zeros(10))
    with pytest.raises(ValueError):
        mixture_consistency_projection(np.zeros((2, 10)), np.zeros(11))


def test_mask_file_round_trip(tmp_path):
    rng = np.random.default_rng(22)
    mask = wiener_like_mask(
        rng.standard_normal((3, 11, 17)) + 1j * rng.standard_normal((3, 11, 17))
    )
    path = str(tmp_path / "m.msk")
    write_mask_file(path, mask)
    back = read_mask_file(path)
    assert back.data.shape == (3, 11, 17)
    # payload is float32, so equality holds at float32 precision
    np.testing.assert_allclose(back.data, mask.data.astype(np.float32), atol=0)


def test_mask_file_corruption_errors(tmp_path):
    mask = MaskTensor(np.full((1, 2, 3), 0.5))
    good = tmp_path / "good.msk"
    write_mask_file(str(good), mask)
    blob = good.read_bytes()

    bad_magic = tmp_path / "magic.msk"
    bad_magic.write_bytes(b"JUNK" + blob[4:])
    with pytest.raises(ValueError):
        read_mask_file(str(bad_magic))

    truncated = tmp_path / "short.msk"
    truncated.write_bytes(blob[:-4])
    with pytest.raises(ValueError):
        read_mask_file(str(truncated))

    tiny = tmp_path / "tiny.msk"
    tiny.write_bytes(b"MSK1\x01")
    with pytest.raises(ValueError):
        read_mask_file(str(tiny))


def _two_overlapped_sources(seed, n=8000):
    # moving-average vs first-difference noise: distinct spectra, full overlap
    rng = np.random.default_rng(seed)
    white1 = rng.standard_normal(n + 8)
    white2 = rng.standard_normal(n + 1)
    low = np.convolve(white1, np.ones(8) / 8.0, mode="valid")[:n]
    high = np.diff(white2)[:n]
    return low / np.abs(low).max(), high / np.abs(high).max()


def test_oracle_provider_stage_one_matches_manual_masking():
    s1, s2 = _two_overlapped_sources(23)
    truth = np.stack([s1, s2])
    mix = truth.sum(axis=0)
    provider = OracleMaskProvider(truth, SMALL_CONFIG)
    est = provider.estimate_sources(mix, stage=1)
    assert est.shape == truth.shape

    masks = oracle_masks_from_sources(truth, SMALL_CONFIG)
    mix_spec = stft(mix[None], SMALL_CONFIG)
    masked = apply_mask(masks, mix_spec.data[0])
    manual = istft(MultichannelSpectrogram(masked, SMALL_CONFIG, mix.shape[0])).samples
    np.testing.assert_allclose(est, manual, atol=1e-12)


def test_oracle_provider_positive_si_snri_on_overlapped_mixtures():
    # oracle Wiener-like masking must improve on the raw mixture
    for seed in (31, 32, 33, 34):
        s1, s2 = _two_overlapped_sources(seed)
        truth = np.stack([s1, s2])
        mix = truth.sum(axis=0)
        est = OracleMaskProvider(truth, SMALL_CONFIG).estimate_sources(mix, stage=1)
        for s in range(2):
            improvement = si_snr(est[s], truth[s]) - si_snr(mix, truth[s])
            assert improvement > 0.0


def test_oracle_provider_refines_with_prior_estimates():
    s1, s2 = _two_overlapped_sources(41)
    truth = np.stack([s1, s2])
    mix = truth.sum(axis=0)
    provider = OracleMaskProvider(truth, SMALL_CONFIG)
    prior = 0.5 * truth  # any prior triggers the refinement path
    est = provider.estimate_sources(mix, stage=2, prior_estimates=prior)

    mix_spec = stft(mix[None], SMALL_CONFIG).data[0]
    truth_mag = np.abs(stft(truth, SMALL_CONFIG).data)
    amp = np.minimum(truth_mag / np.maximum(np.abs(mix_spec), 1e-30), 1.0)
    masked = apply_mask(MaskTensor(amp), mix_spec)
    manual = istft(MultichannelSpectrogram(masked, SMALL_CONFIG, mix.shape[0])).samples
    np.testing.assert_allclose(est, manual, atol=1e-12)

    base = provider.estimate_sources(mix, stage=1)
    assert np.max(np.abs(est - base)) > 1e-6


def test_oracle_provider_refinement_can_be_disabled():
    s1, s2 = _two_overlapped_sources(42)
    truth = np.stack([s1, s2])
    mix = truth.sum(axis=0)
    provider = OracleMaskProvider(truth, SMALL_CONFIG, refine_with_prior=False)
    a = provider.estimate_sources(mix, stage=1)
    b = provider.estimate_sources(mix, stage=2, prior_estimates=0.5 * truth)
    np.testing.assert_allclose(a, b, atol=0)


def test_oracle_provider_binary_kind_never_refines():
    s1, s2 = _two_overlapped_sources(43)
    truth = np.stack([s1, s2])
    mix = truth.sum(axis=0)
    provider = OracleMaskProvider(truth, SMALL_CONFIG, kind=OracleMaskKind.BINARY)
    a = provider.estimate_sources(mix, stage=1)
    b = provider.estimate_sources(mix, stage=3, prior_estimates=0.5 * truth)
    np.testing.assert_allclose(a, b, atol=0)


def test_oracle_provider_validation():
    with pytest.raises(ValueError):
        OracleMaskProvider(np.zeros(100), SMALL_CONFIG)  # needs (S, n)
    provider = OracleMaskProvider(np.random.default_rng(44).standard_normal((2, 2000)),
                                  SMALL_CONFIG)
    with pytest.raises(ValueError):
        provider.estimate_sources(np.zeros((2, 2000)), stage=1)
    with pytest.raises(ValueError):
        provider.estimate_sources(np.zeros(1999), stage=1)


def test_external_estimate_provider_stage_table():
    rng = np.random.default_rng(45)
    n = 500
    e1 = rng.standard_normal((2, n))
    e2 = rng.standard_normal((2, n))
    provider = ExternalEstimateProvider({1: e1, 2: e2})
    assert provider.num_sources == 2
    mix = np.zeros(n)
    np.testing.assert_allclose(provider.estimate_sources(mix, stage=1), e1)
    np.testing.assert_allclose(provider.estimate_sources(mix, stage=2), e2)
    with pytest.raises(ValueError):
        provider.estimate_sources(mix, stage=3)

    # a bare array serves every stage
    anywhere = ExternalEstimateProvider(e1)
    np.testing.assert_allclose(anywhere.estimate_sources(mix, stage=7), e1)


def test_external_estimate_provider_validation():
    with pytest.raises(ValueError):
        ExternalEstimateProvider({})
    with pytest.raises(ValueError):
        ExternalEstimateProvider({1: np.zeros((2, 10)), 2: np.zeros((3, 10))})
    with pytest.raises(ValueError):
        ExternalEstimateProvider(np.zeros(10))
    provider = ExternalEstimateProvider(np.zeros((2, 10)))
    with pytest.raises(ValueError):
        provider.estimate_sources(np.zeros(11), stage=1)


def test_external_mask_provider_applies_fixed_mask():
    rng = np.random.default_rng(46)
    mix = rng.standard_normal(3000)
    mix_spec = stft(mix[None], SMALL_CONFIG)
    t, f = mix_spec.data.shape[1], mix_spec.data.shape[2]
    raw = rng.random((2, t, f))
    mask = MaskTensor(raw / raw.sum(axis=0, keepdims=True))
    provider = ExternalMaskProvider(mask, SMALL_CONFIG)
    assert provider.num_sources == 2
    est = provider.estimate_sources(mix, stage=1)

    masked = apply_mask(mask, mix_spec.data[0])
    manual = istft(MultichannelSpectrogram(masked, SMALL_CONFIG, 3000)).samples
    np.testing.assert_allclose(est, manual, atol=1e-12)

    wrong = MaskTensor(np.ones((2, t + 1, f)))
    with pytest.raises(ValueError):
        ExternalMaskProvider(wrong, SMALL_CONFIG).estimate_sources(mix, stage=1)


def test_default_floor_value():
    assert DEFAULT_MASK_FLOOR == 1e-10
