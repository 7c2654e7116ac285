"""Prefix masks and mass-preserving advantage rescaling, plus the baseline
masking strategies (fixed prefix, batch-level random release transfer)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .changepoint import ChangeDecision
from .segmentation import SegmentIndex

RESCALE_EPS = 1e-8


@dataclass(frozen=True)
class ReleaseResult:
    """Token-level outcome of one release strategy.

    ``decision`` is None for strategies that never ran the change-point test
    (full supervision, fixed prefix).
    """

    prefix_mask: np.ndarray
    scale: float
    rescaled_advantages: np.ndarray
    decision: ChangeDecision | None


def build_prefix_mask(segments: SegmentIndex, decision: ChangeDecision,
                      response_len: int) -> np.ndarray:
    """1.0 on the union of retained segments when accepted, else on every token.

    Tokens the segmenter never assigned stay 0 under an accepted decision.
    """
    if not decision.accepted:
        return np.ones(response_len)
    mask = np.zeros(response_len)
    idx = segments.prefix_token_ids(decision.release_segment)
    if idx.size:
        lo = int(idx.min())
        hi = int(idx.max())
        if lo < 0 or hi >= response_len:
            bad = hi if hi >= response_len else lo
            raise ValueError(f"segment token index {bad} out of range "
                             f"[0, {response_len})")
        mask[idx] = 1.0
    return mask


def rescale_advantages(advantages: np.ndarray, loss_mask: np.ndarray,
                       prefix_mask: np.ndarray, *,
                       eps: float = RESCALE_EPS) -> tuple[np.ndarray, float]:
    """Scale masked advantages so the kept loss mass equals the original mass.

    scale = sum(l) / max(sum(l * q), eps); rescaled[t] = A[t] * q[t] * scale.
    Returns (rescaled, scale).
    """
    advantages = np.asarray(advantages, dtype=np.float64)
    loss_mask = np.asarray(loss_mask, dtype=np.float64)
    prefix_mask = np.asarray(prefix_mask, dtype=np.float64)
    if not (len(advantages) == len(loss_mask) == len(prefix_mask)):
        raise ValueError("advantages, loss_mask, and prefix_mask lengths differ")
    total_mass = float(loss_mask.sum())
    kept_mass = float((loss_mask * prefix_mask).sum())
    scale = total_mass / max(kept_mass, eps)
    return advantages * prefix_mask * scale, scale


def fixed_prefix_mask(response_len: int, prefix_tokens: int) -> np.ndarray:
    """1.0 on the first prefix_tokens positions, 0.0 after."""
    if prefix_tokens < 1:
        raise ValueError(f"prefix_tokens must be at least 1, got {prefix_tokens}")
    mask = np.zeros(response_len)
    mask[: min(prefix_tokens, response_len)] = 1.0
    return mask


@dataclass(frozen=True)
class ReleaseAssignment:
    """One rollout's transferred release point after the batch permutation.

    ``relative_position`` and ``accepted`` come from the source rollout;
    ``release_segment`` is the snapped segment count on the target (the full
    segment count when the source did not accept).
    """

    source_index: int
    accepted: bool
    bic_gain: float
    relative_position: float
    release_segment: int


def _snap_release_segment(cum_target: np.ndarray, retained_src: int,
                          total_src: int, total_target: int) -> int:
    # smallest s >= 1 with cum_target[s-1] / total_target >= retained_src /
    # total_src, in exact integer arithmetic; clamp when segments under-cover
    want = retained_src * total_target
    pos = int(np.searchsorted(cum_target * total_src, want, side="left"))
    return min(pos + 1, len(cum_target))


def _permute_assignments(cum_counts: Sequence[np.ndarray], totals: Sequence[int],
                         accepted: Sequence[bool], retained: Sequence[int],
                         gains: Sequence[float], seed: int) -> list[ReleaseAssignment]:
    size = len(totals)
    perm = np.random.default_rng(seed).permutation(size)
    out: list[ReleaseAssignment] = []
    for target, source in enumerate(perm):
        source = int(source)
        rel = retained[source] / totals[source]
        n_target = len(cum_counts[target])
        if accepted[source]:
            segment = _snap_release_segment(cum_counts[target], retained[source],
                                            totals[source], totals[target])
        else:
            segment = n_target
        out.append(ReleaseAssignment(source_index=source,
                                     accepted=bool(accepted[source]),
                                     bic_gain=float(gains[source]),
                                     relative_position=rel,
                                     release_segment=segment))
    return out


def permute_release_points(items: Sequence[tuple[SegmentIndex, ChangeDecision]],
                           seed: int) -> list[ReleaseAssignment]:
    """Reassign release points across a batch by a seeded uniform permutation.

    The multiset of (relative release position, accepted) pairs is preserved
    exactly; each transferred position lands on the target's next segment
    boundary at or after the equivalent token cutoff, never retaining zero
    tokens. Rejected sources transfer as full supervision.
    """
    if not items:
        raise ValueError("empty batch")
    cum_counts = []
    totals = []
    accepted = []
    retained = []
    gains = []
    for segments, decision in items:
        cums = segments.cumulative_token_counts()
        total = segments.num_tokens
        cum_counts.append(cums)
        totals.append(total)
        accepted.append(decision.accepted)
        if decision.accepted:
            retained.append(int(cums[decision.release_segment - 1]))
        else:
            retained.append(total)
        gains.append(decision.bic_gain)
    return _permute_assignments(cum_counts, totals, accepted, retained, gains, seed)
