"""Separation losses and evaluation metrics.

The training-style loss is a stabilized SNR,

    SNR(x_hat, x) = 10 log10( ||x||^2 / (||x - x_hat||^2 + tau ||x||^2 + eps) )

whose tau term caps the value at 10 log10(1/tau) (30 dB at tau = 1e-3) so a
single easy example cannot dominate, with permutation-invariant assignment
across sources. Evaluation uses scale-invariant SNR (SI-SNR) and its
improvement over the unprocessed mixture.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LossConfig",
    "MetricReport",
    "snr_stabilized",
    "sequence_loss",
    "si_snr",
    "evaluate",
]

MAX_PERMUTATION_SOURCES = 6

SI_SNR_CLAMP_DB = 60.0


@dataclass(frozen=True)
class LossConfig:
    tau: float = 1e-3
    epsilon: float = 1e-8
    permutation_invariant: bool = True

    def __post_init__(self) -> None:
        if self.tau < 0.0 or self.epsilon <= 0.0:
            raise ValueError(
                f"need tau >= 0 and epsilon > 0, got tau={self.tau} "
                f"epsilon={self.epsilon}"
            )


def _vector_pair(estimate: np.ndarray, reference: np.ndarray) -> "tuple[np.ndarray, np.ndarray]":
    est = np.asarray(estimate, dtype=np.float64).reshape(-1)
    ref = np.asarray(reference, dtype=np.float64).reshape(-1)
    if est.shape != ref.shape or est.size == 0:
        raise ValueError(
            f"estimate and reference must be equal-length non-empty vectors, "
            f"got {est.shape} and {ref.shape}"
        )
    if not (np.all(np.isfinite(est)) and np.all(np.isfinite(ref))):
        raise ValueError("non-finite samples in metric input")
    return est, ref


def snr_stabilized(
    estimate: np.ndarray, reference: np.ndarray, config: LossConfig = LossConfig()
) -> float:
    """Stabilized SNR in dB; equal signals approach 10 log10(1/tau)."""
    est, ref = _vector_pair(estimate, reference)
    ref_power = float(np.dot(ref, ref))
    err = ref - est
    err_power = float(np.dot(err, err))
    return 10.0 * math.log10(
        ref_power / (err_power + config.tau * ref_power + config.epsilon)
    )


def sequence_loss(
    estimates: np.ndarray,
    references: np.ndarray,
    config: LossConfig = LossConfig(),
) -> "tuple[float, tuple[int, ...]]":
    """Permutation-invariant negative stabilized SNR summed over sources.

    Returns (loss, permutation) where permutation[s] is the estimate index
    assigned to reference s under the minimizing assignment (exhaustive
    search, S <= 6). With config.permutation_invariant False only the
    identity assignment is scored (the enhancement-style loss).
    """
    est = np.asarray(estimates, dtype=np.float64)
    ref = np.asarray(references, dtype=np.float64)
    if est.ndim != 2 or ref.shape != est.shape:
        raise ValueError(
            f"estimates and references must share shape (S, n), got "
            f"{est.shape} and {ref.shape}"
        )
    num_sources = est.shape[0]
    if num_sources > MAX_PERMUTATION_SOURCES:
        raise ValueError(
            f"exhaustive permutation search supports at most "
            f"{MAX_PERMUTATION_SOURCES} sources, got {num_sources}"
        )
    if not config.permutation_invariant:
        loss = -sum(snr_stabilized(est[s], ref[s], config) for s in range(num_sources))
        return float(loss), tuple(range(num_sources))
    # pairwise[i, s] = -SNR of estimate i against reference s
    pairwise = np.empty((num_sources, num_sources), dtype=np.float64)
    for i in range(num_sources):
        for s in range(num_sources):
            pairwise[i, s] = -snr_stabilized(est[i], ref[s], config)
    best_loss = math.inf
    best_perm: tuple[int, ...] = tuple(range(num_sources))
    for perm in itertools.permutations(range(num_sources)):
        loss = sum(pairwise[perm[s], s] for s in range(num_sources))
        if loss < best_loss:
            best_loss = loss
            best_perm = perm
    return float(best_loss), best_perm


def si_snr(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Scale-invariant SNR in dB, clamped to [-60, +60].

    Both signals are mean-removed; the reference is rescaled by the
    projection coefficient alpha = <x_hat, x> / ||x||^2 so any nonzero
    rescaling of the estimate leaves the value unchanged.
    """
    est, ref = _vector_pair(estimate, reference)
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_power = float(np.dot(ref, ref))
    if ref_power <= 0.0:
        raise ValueError("reference is zero after mean removal")
    alpha = float(np.dot(est, ref)) / ref_power
    target = alpha * ref
    err = est - target
    num = float(np.dot(target, target))
    den = float(np.dot(err, err))
    value = 10.0 * math.log10((num + 1e-300) / (den + 1e-300))
    return float(np.clip(value, -SI_SNR_CLAMP_DB, SI_SNR_CLAMP_DB))


@dataclass(frozen=True)
class MetricReport:
    """Per-source evaluation under the best permutation.

    permutation[s] is the index of the estimate scored against reference s.
    si_snri is the improvement over scoring the unprocessed mixture
    reference channel against the same reference.
    """

    si_snr_db: np.ndarray
    mixture_si_snr_db: np.ndarray
    si_snri_db: np.ndarray
    permutation: "tuple[int, ...]"

    @property
    def num_sources(self) -> int:
        return len(self.permutation)

    @property
    def mean_si_snr(self) -> float:
        return float(np.mean(self.si_snr_db))

    @property
    def mean_si_snri(self) -> float:
        return float(np.mean(self.si_snri_db))


def evaluate(
    estimates: np.ndarray,
    references: np.ndarray,
    mixture_ref: np.ndarray,
    permutation_invariant: bool = True,
    segment: "tuple[int, int] | None" = None,
) -> MetricReport:
    """Score estimates against references with SI-SNR and SI-SNRi.

    Arguments
        estimates: (S, n) estimated sources.
        references: (S, n) reference signals (reverberant images at the
            reference channel).
        mixture_ref: (n,) unprocessed mixture reference channel.
        permutation_invariant: search all assignments (S <= 6) maximizing the
            summed SI-SNR; otherwise use the identity assignment.
        segment: optional (start, stop) sample range scored instead of the
            full signals.
    """
    est = np.asarray(estimates, dtype=np.float64)
    ref = np.asarray(references, dtype=np.float64)
    mix = np.asarray(mixture_ref, dtype=np.float64).reshape(-1)
    if est.ndim != 2 or ref.shape != est.shape:
        raise ValueError(
            f"estimates and references must share shape (S, n), got "
            f"{est.shape} and {ref.shape}"
        )
    if mix.shape[0] != est.shape[1]:
        raise ValueError(
            f"mixture length {mix.shape[0]} does not match estimates {est.shape}"
        )
    if segment is not None:
        start, stop = segment
        if not 0 <= start < stop <= est.shape[1]:
            raise ValueError(f"segment {segment} out of range for n={est.shape[1]}")
        est = est[:, start:stop]
        ref = ref[:, start:stop]
        mix = mix[start:stop]
    num_sources = est.shape[0]

    if permutation_invariant:
        if num_sources > MAX_PERMUTATION_SOURCES:
            raise ValueError(
                f"permutation search supports at most {MAX_PERMUTATION_SOURCES} "
                f"sources, got {num_sources}"
            )
        pairwise = np.empty((num_sources, num_sources), dtype=np.float64)
        for i in range(num_sources):
            for s in range(num_sources):
                pairwise[i, s] = si_snr(est[i], ref[s])
        best_perm = max(
            itertools.permutations(range(num_sources)),
            key=lambda perm: sum(pairwise[perm[s], s] for s in range(num_sources)),
        )
        scores = np.array([pairwise[best_perm[s], s] for s in range(num_sources)])
    else:
        best_perm = tuple(range(num_sources))
        scores = np.array([si_snr(est[s], ref[s]) for s in range(num_sources)])

    baseline = np.array([si_snr(mix, ref[s]) for s in range(num_sources)])
    return MetricReport(
        si_snr_db=scores,
        mixture_si_snr_db=baseline,
        si_snri_db=scores - baseline,
        permutation=tuple(best_perm),
    )
