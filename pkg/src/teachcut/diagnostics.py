"""Batch rollout diagnostics: temporally binned statistics, release summaries,
and the directional signal-to-noise release condition.

Binned reductions accumulate (count, sum, sum of squares) per bin so partial
results from independent workers merge associatively. Absent values (empty
bins, undefined normalizations) are NaN in memory and empty cells in CSV.
"""

from __future__ import annotations

import csv
import math
import statistics
import warnings
from dataclasses import dataclass, fields
from typing import Any, Iterable, Sequence

import numpy as np

from .changepoint import ChangeDecision
from .segmentation import SegmentScores


class BinAccumulator:
    """Mergeable per-bin moment partials over temporally normalized positions.

    Token t of a length-T series lands in bin (num_bins * t) // T.
    """

    def __init__(self, num_bins: int) -> None:
        if num_bins < 1:
            raise ValueError(f"num_bins must be at least 1, got {num_bins}")
        self.num_bins = num_bins
        self.counts = np.zeros(num_bins, dtype=np.int64)
        self.sums = np.zeros(num_bins)
        self.sumsqs = np.zeros(num_bins)

    def add_series(self, values: Any) -> None:
        values = np.asarray(getattr(values, "values", values), dtype=np.float64)
        length = values.size
        if length == 0:
            raise ValueError("series must contain at least one value")
        idx = (np.arange(length, dtype=np.int64) * self.num_bins) // length
        np.minimum(idx, self.num_bins - 1, out=idx)
        self.counts += np.bincount(idx, minlength=self.num_bins)
        self.sums += np.bincount(idx, weights=values, minlength=self.num_bins)
        self.sumsqs += np.bincount(idx, weights=values * values,
                                   minlength=self.num_bins)

    def merge(self, other: "BinAccumulator") -> "BinAccumulator":
        if other.num_bins != self.num_bins:
            raise ValueError("cannot merge accumulators with different num_bins")
        merged = BinAccumulator(self.num_bins)
        merged.counts = self.counts + other.counts
        merged.sums = self.sums + other.sums
        merged.sumsqs = self.sumsqs + other.sumsqs
        return merged


@dataclass(frozen=True)
class BinnedStats:
    """Pooled per-bin mean and population std over a batch of series."""

    num_bins: int
    bin_count: np.ndarray
    bin_mean: np.ndarray
    bin_std: np.ndarray
    normalized_std: np.ndarray


def _finalize(acc: BinAccumulator, *, normalize_means: bool) -> BinnedStats:
    counts = acc.counts
    empty = counts == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = acc.sums / counts
        var = acc.sumsqs / counts - mean * mean
    mean[empty] = np.nan
    var = np.maximum(var, 0.0)
    std = np.sqrt(var)
    std[empty] = np.nan

    nonempty = np.flatnonzero(~empty)
    normalized_std = np.full(acc.num_bins, np.nan)
    if nonempty.size:
        base = std[nonempty[0]]
        if base > 0.0:
            normalized_std = std / base
        else:
            warnings.warn("first non-empty bin has zero std; normalized_std "
                          "is undefined", RuntimeWarning, stacklevel=3)

    if normalize_means:
        if nonempty.size:
            base_mean = mean[nonempty[0]]
            if base_mean != 0.0:
                mean = mean / base_mean
            else:
                warnings.warn("first non-empty bin has zero mean; normalized "
                              "curve is undefined", RuntimeWarning, stacklevel=3)
                mean = np.full(acc.num_bins, np.nan)

    return BinnedStats(acc.num_bins, counts.copy(), mean, std, normalized_std)


def _accumulate_batch(batch: Iterable[Any], num_bins: int) -> BinAccumulator:
    acc = BinAccumulator(num_bins)
    saw_any = False
    for series in batch:
        acc.add_series(series)
        saw_any = True
    if not saw_any:
        raise ValueError("empty batch")
    return acc


def binned_advantage_stats(batch: Iterable[Any], num_bins: int = 20) -> BinnedStats:
    """Pool per-token advantages across a batch into temporal bins."""
    return _finalize(_accumulate_batch(batch, num_bins), normalize_means=False)


def binned_margin_curve(batch: Iterable[Any], num_bins: int = 20, *,
                        normalize: bool = True) -> BinnedStats:
    """Pool per-token margins into temporal bins.

    With ``normalize``, bin means are divided by the first non-empty bin's
    mean, giving the relative decay curve along the response.
    """
    return _finalize(_accumulate_batch(batch, num_bins),
                     normalize_means=normalize)


@dataclass(frozen=True)
class ReleaseSummary:
    """Batch-level release statistics.

    Gain statistics run over every rollout (rejected ones contribute zero
    gain); position and pre/post statistics cover accepted rollouts only and
    are NaN when nothing was accepted. Medians use the lower-midpoint rule.
    """

    num_rollouts: int
    acceptance_rate: float
    mean_bic_gain: float
    fraction_gain_above_threshold: float
    mean_relative_release_position: float
    median_relative_release_position: float
    mean_pre_margin: float
    mean_post_margin: float


def _summary_from_rows(rows: Sequence[tuple[bool, float, float, float, float]],
                       gain_threshold: float) -> ReleaseSummary:
    # rows: (accepted, bic_gain, relative_position, mu_pre, mu_post)
    if not rows:
        raise ValueError("empty batch")
    total = len(rows)
    gains = [row[1] for row in rows]
    accepted_rows = [row for row in rows if row[0]]
    positions = [row[2] for row in accepted_rows]
    if accepted_rows:
        mean_pos = sum(positions) / len(positions)
        median_pos = statistics.median_low(positions)
        mean_pre = sum(row[3] for row in accepted_rows) / len(accepted_rows)
        mean_post = sum(row[4] for row in accepted_rows) / len(accepted_rows)
    else:
        mean_pos = median_pos = mean_pre = mean_post = math.nan
    return ReleaseSummary(
        num_rollouts=total,
        acceptance_rate=len(accepted_rows) / total,
        mean_bic_gain=sum(gains) / total,
        fraction_gain_above_threshold=sum(g > gain_threshold for g in gains) / total,
        mean_relative_release_position=mean_pos,
        median_relative_release_position=median_pos,
        mean_pre_margin=mean_pre,
        mean_post_margin=mean_post,
    )


def release_summary(batch: Sequence[tuple[ChangeDecision, SegmentScores, int]],
                    gain_threshold: float = 6.0) -> ReleaseSummary:
    """Summarize decisions over a batch of (decision, scores, response_len).

    The relative release position of an accepted rollout is its retained token
    count divided by the response length.
    """
    rows = []
    for decision, scores, response_len in batch:
        if decision.accepted:
            cums = scores.segment_index.cumulative_token_counts()
            retained = int(cums[decision.release_segment - 1])
            rel = retained / response_len
            rows.append((True, decision.bic_gain, rel,
                         decision.mu_pre, decision.mu_post))
        else:
            rows.append((False, decision.bic_gain, 1.0, math.nan, math.nan))
    return _summary_from_rows(rows, gain_threshold)


@dataclass(frozen=True)
class SnrReport:
    """Directional SNR of the full update versus the released prefix."""

    m_prefix: float
    v_prefix: float
    m_suffix: float
    v_suffix: float
    snr_full: float
    snr_release: float
    release_improves: bool


def release_improves_by_moments(m_prefix: float, v_prefix: float,
                                m_suffix: float, v_suffix: float) -> bool:
    """Equivalent inequality form: v_R/v_P >= 2(m_R/m_P) + (m_R/m_P)^2."""
    if m_prefix == 0.0:
        raise ValueError("the inequality form requires m_prefix != 0")
    if v_prefix <= 0.0:
        raise ValueError(f"v_prefix must be positive, got {v_prefix}")
    ratio = m_suffix / m_prefix
    return v_suffix / v_prefix >= 2.0 * ratio + ratio * ratio


def snr_release_check(m_prefix: float, v_prefix: float, m_suffix: float,
                      v_suffix: float) -> SnrReport:
    """Compare directional SNR with and without the released suffix.

    Release improves the SNR when m_P^2 / v_P >= (m_P + m_R)^2 / (v_P + v_R).
    """
    if v_prefix <= 0.0:
        raise ValueError(f"v_prefix must be positive, got {v_prefix}")
    if v_suffix < 0.0:
        raise ValueError(f"v_suffix must be non-negative, got {v_suffix}")
    snr_release = m_prefix * m_prefix / v_prefix
    total = m_prefix + m_suffix
    snr_full = total * total / (v_prefix + v_suffix)
    improves = snr_release >= snr_full
    if m_prefix != 0.0:
        by_moments = release_improves_by_moments(m_prefix, v_prefix,
                                                 m_suffix, v_suffix)
        if by_moments != improves:
            warnings.warn("direct SNR comparison and the moment inequality "
                          "disagree at a floating-point boundary",
                          RuntimeWarning, stacklevel=2)
    return SnrReport(m_prefix=m_prefix, v_prefix=v_prefix, m_suffix=m_suffix,
                     v_suffix=v_suffix, snr_full=snr_full,
                     snr_release=snr_release, release_improves=improves)


# ----------------------------------------------------------------------------
# CSV output


def _cell(value: Any) -> str:
    if isinstance(value, float) and math.isnan(value):
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_bins_csv(stats: BinnedStats, path: str) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bin", "count", "mean", "std", "normalized_std"])
        for b in range(stats.num_bins):
            writer.writerow([b, int(stats.bin_count[b]),
                             _cell(float(stats.bin_mean[b])),
                             _cell(float(stats.bin_std[b])),
                             _cell(float(stats.normalized_std[b]))])


def write_summary_csv(summary: ReleaseSummary, path: str) -> None:
    names = [f.name for f in fields(ReleaseSummary)]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(names)
        writer.writerow([_cell(getattr(summary, name)) for name in names])


def write_snr_csv(report: SnrReport, path: str) -> None:
    names = [f.name for f in fields(SnrReport)]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(names)
        writer.writerow([_cell(getattr(report, name)) for name in names])
