"""Synthetic rollouts with planted margin structure.

Each generated record carries a candidate set whose teacher top-2 gap equals
the planted per-token margin exactly, sentence-shaped token surfaces, and an
explicit segment layout, so every downstream stage can be checked against the
construction. Also hosts the naive change-point reference implementation used
to cross-validate the production detector.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Any

import numpy as np

from .records import RolloutRecord, TopKCandidates, dumps_obj, rollout_to_obj


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for piecewise-constant margin datasets.

    ``true_tau`` is the number of leading segments at the pre-change mean;
    None plants no change. Noise is i.i.d. Gaussian per token, and margins are
    clamped at zero to stay valid gaps.
    """

    num_segments: int = 6
    tokens_per_segment: int = 10
    true_tau: int | None = None
    pre_margin_mean: float = 1.0
    post_margin_mean: float = 0.0
    noise_std: float = 0.0
    support_size: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_segments < 1:
            raise ValueError(f"num_segments must be at least 1, got {self.num_segments}")
        if self.tokens_per_segment < 1:
            raise ValueError(
                f"tokens_per_segment must be at least 1, got {self.tokens_per_segment}")
        if self.support_size < 2:
            raise ValueError(f"support_size must be at least 2, got {self.support_size}")
        if not (math.isfinite(self.noise_std) and self.noise_std >= 0.0):
            raise ValueError(f"noise_std must be finite and non-negative, got {self.noise_std}")
        for name in ("pre_margin_mean", "post_margin_mean"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.true_tau is not None and not 1 <= self.true_tau <= self.num_segments - 1:
            raise ValueError(
                f"true_tau must lie in [1, {self.num_segments - 1}], got {self.true_tau}")


@dataclass(frozen=True)
class GroundTruth:
    """Planted quantities for one generated rollout."""

    rollout_id: str
    true_tau: int | None
    margins: np.ndarray
    segment_means: np.ndarray


def segment_mean_profile(config: SyntheticConfig) -> np.ndarray:
    means = np.full(config.num_segments, config.pre_margin_mean)
    if config.true_tau is not None:
        means[config.true_tau:] = config.post_margin_mean
    return means


def generate_rollout(segment_means: Any, *, tokens_per_segment: int,
                     support_size: int = 4, noise_std: float = 0.0,
                     seed: int = 0, index: int = 0,
                     rollout_id: str | None = None,
                     true_tau: int | None = None) -> tuple[RolloutRecord, GroundTruth]:
    """Build one rollout whose top-2 teacher gap at token t is the planted m_t.

    The candidate set puts the teacher's favorite at log-prob 0.0 and the
    runner-up at -m_t, so the measured gap is an exact float negation of the
    planted margin; student log-probs descend in fixed steps so the candidate
    ordering is valid by construction. Sampled log-probs encode an advantage
    of 0.5 * m_t per token. Every segment ends in a sentence-closing surface,
    so the built-in segmenter reproduces the emitted layout.
    """
    means = np.asarray(segment_means, dtype=np.float64)
    if means.ndim != 1 or means.size == 0:
        raise ValueError("segment_means must be a non-empty 1-d array")
    if not np.isfinite(means).all():
        raise ValueError("segment_means must be finite")
    if tokens_per_segment < 1:
        raise ValueError(f"tokens_per_segment must be at least 1, got {tokens_per_segment}")
    if support_size < 2:
        raise ValueError(f"support_size must be at least 2, got {support_size}")
    if not (math.isfinite(noise_std) and noise_std >= 0.0):
        raise ValueError(f"noise_std must be finite and non-negative, got {noise_std}")

    num_segments = means.size
    num_tokens = num_segments * tokens_per_segment
    k = support_size
    rng = np.random.default_rng([seed, index])

    margins = np.repeat(means, tokens_per_segment)
    margins = margins + noise_std * rng.standard_normal(num_tokens)
    np.maximum(margins, 0.0, out=margins)

    teacher = np.empty((num_tokens, k))
    teacher[:, 0] = 0.0
    # runner-up sits m_t below the top; the rest fall away in unit steps
    teacher[:, 1:] = (-margins)[:, None] - np.arange(k - 1, dtype=np.float64)
    student_row = -0.5 * np.arange(1, k + 1, dtype=np.float64)

    candidates = TopKCandidates(
        ids=np.tile(np.arange(k, dtype=np.int64), num_tokens),
        student_logp=np.tile(student_row, num_tokens),
        teacher_logp=teacher.reshape(-1),
        offsets=np.arange(0, num_tokens * k + k, k, dtype=np.int64),
        uniform_row_length=k,
    )
    tokens = (["tok"] * (tokens_per_segment - 1) + ["end."]) * num_segments
    segments = tuple(
        np.arange(i * tokens_per_segment, (i + 1) * tokens_per_segment, dtype=np.int64)
        for i in range(num_segments))

    record = RolloutRecord(
        rollout_id=rollout_id if rollout_id is not None else f"sim-{index:06d}",
        token_surfaces=tokens,
        sampled_teacher_logp=np.full(num_tokens, -0.2),
        sampled_student_logp=-0.2 - 0.5 * margins,
        loss_mask=np.ones(num_tokens),
        candidates=candidates,
        segments=segments,
    )
    truth = GroundTruth(rollout_id=record.rollout_id, true_tau=true_tau,
                        margins=margins, segment_means=means)
    return record, truth


def generate_piecewise_rollout(config: SyntheticConfig,
                               index: int = 0) -> tuple[RolloutRecord, GroundTruth]:
    return generate_rollout(
        segment_mean_profile(config),
        tokens_per_segment=config.tokens_per_segment,
        support_size=config.support_size,
        noise_std=config.noise_std,
        seed=config.seed,
        index=index,
        true_tau=config.true_tau,
    )


def write_dataset(path: str, config: SyntheticConfig,
                  num_rollouts: int) -> tuple[str, str]:
    """Write a JSONL dataset plus a ground_truth.jsonl sidecar alongside it.

    Sidecar lines hold rollout_id, true_tau, and the planted per-token margins.
    Returns (dataset_path, sidecar_path).
    """
    if num_rollouts < 1:
        raise ValueError(f"num_rollouts must be at least 1, got {num_rollouts}")
    truth_path = os.path.join(os.path.dirname(os.path.abspath(path)),
                              "ground_truth.jsonl")
    with open(path, "wb") as data, open(truth_path, "wb") as truth:
        for index in range(num_rollouts):
            record, gt = generate_piecewise_rollout(config, index)
            data.write(dumps_obj(rollout_to_obj(record)) + b"\n")
            truth.write(dumps_obj({"rollout_id": gt.rollout_id,
                                   "true_tau": gt.true_tau,
                                   "margins": gt.margins.tolist()}) + b"\n")
    return path, truth_path


def planted_scores(num_scores: int, true_tau: int | None, pre_mean: float,
                   post_mean: float, noise_std: float, *,
                   seed: int = 0) -> np.ndarray:
    """Segment-score sequence with an optional planted downward step."""
    if num_scores < 1:
        raise ValueError(f"num_scores must be at least 1, got {num_scores}")
    if true_tau is not None and not 1 <= true_tau <= num_scores - 1:
        raise ValueError(
            f"true_tau must lie in [1, {num_scores - 1}], got {true_tau}")
    means = np.full(num_scores, pre_mean)
    if true_tau is not None:
        means[true_tau:] = post_mean
    rng = np.random.default_rng(seed)
    return means + noise_std * rng.standard_normal(num_scores)


def oracle_change_point(scores: Any, *, eps: float = 1e-12) -> tuple[int, bool, float]:
    """Naive reference for the downward change-point selection.

    Recomputes both side means and residual sums from scratch at every
    candidate split instead of sharing running moments with the production
    path. Returns (release_segment, accepted, bic_gain) under the same
    conventions: release_segment is the retained-segment count, equal to the
    full count when no drop is accepted.
    """
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    if s.ndim != 1:
        raise ValueError(f"scores must be one-dimensional, got shape {s.shape}")
    n = s.size
    if n == 0:
        return 0, False, 0.0
    if n == 1:
        return 1, False, 0.0

    mu = s.mean()
    rss0 = float(((s - mu) ** 2).sum())
    bic0 = n * math.log((rss0 + eps) / n) + math.log(n)

    taus = np.arange(1, n)
    in_left = np.arange(n)[None, :] < taus[:, None]
    count_left = taus.astype(np.float64)
    count_right = (n - taus).astype(np.float64)
    mean_left = np.where(in_left, s, 0.0).sum(axis=1) / count_left
    mean_right = np.where(in_left, 0.0, s).sum(axis=1) / count_right
    dev_left = np.where(in_left, s - mean_left[:, None], 0.0)
    dev_right = np.where(in_left, 0.0, s - mean_right[:, None])
    rss = (dev_left * dev_left).sum(axis=1) + (dev_right * dev_right).sum(axis=1)
    bic1 = n * np.log((rss + eps) / n) + 3.0 * math.log(n)

    candidates = np.flatnonzero(mean_right < mean_left)
    if candidates.size == 0:
        return n, False, 0.0
    j = int(np.argmin(bic1[candidates]))
    best = float(bic1[candidates][j])
    if best >= bic0:
        return n, False, 0.0
    return int(candidates[j]) + 1, True, max(0.0, bic0 - best)
