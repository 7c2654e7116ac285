"""Streaming JSONL batch processing.

Records are handled in fixed-size line chunks, optionally fanned out to a
process pool; outputs are always written in input order, so results are
bit-identical for any --jobs value. Release output echoes each input line
verbatim and splices in a ``release`` object rather than re-encoding the
record, which both preserves unknown fields and keeps the hot path cheap.
"""

from __future__ import annotations

import contextlib
import logging
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Any, Callable, Iterable, Iterator

import numpy as np

from .changepoint import BIC_EPS, ChangeDecision, detect_downward_change
from .diagnostics import (BinAccumulator, ReleaseSummary, BinnedStats,
                          _finalize, _summary_from_rows, write_bins_csv,
                          write_summary_csv)
from .margin import MarginSeries, teacher_top2_margin
from .records import (DataProcessingError, RecordValidationError, RolloutRecord,
                      TeachcutError, decode_line, dumps_obj, iter_jsonl_lines,
                      parse_rollout_line, rollout_from_obj, sampled_advantage)
from .reweight import (RESCALE_EPS, ReleaseResult, _permute_assignments,
                       build_prefix_mask, fixed_prefix_mask, rescale_advantages)
from .segmentation import (SegmentIndex, SegmentScores, aggregate_segment_scores,
                           segment_tokens)

logger = logging.getLogger("teachcut")

STRATEGIES = ("bic_release", "full", "fixed_prefix", "random_release")

_CHUNK_LINES = 64


@dataclass(frozen=True)
class PipelineConfig:
    """Batch-processing knobs; flag defaults match these field defaults."""

    support_size: int = 4
    bic_eps: float = BIC_EPS
    rescale_eps: float = RESCALE_EPS
    num_bins: int = 20
    gain_threshold: float = 6.0
    strategy: str = "bic_release"
    prefix_tokens: int | None = None
    segments_source: str = "record"
    probs: bool = False
    strict: bool = False
    jobs: int | None = None
    random_seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; "
                             f"expected one of {', '.join(STRATEGIES)}")
        if self.segments_source not in ("record", "builtin"):
            raise ValueError(f"segments_source must be 'record' or 'builtin', "
                             f"got {self.segments_source!r}")
        if self.strategy == "fixed_prefix":
            if self.prefix_tokens is None or self.prefix_tokens < 1:
                raise ValueError("fixed_prefix requires prefix_tokens >= 1")
        if self.support_size < 2:
            raise ValueError(f"support_size must be at least 2, got {self.support_size}")
        if self.num_bins < 1:
            raise ValueError(f"num_bins must be at least 1, got {self.num_bins}")
        if self.jobs is not None and self.jobs < 1:
            raise ValueError(f"jobs must be at least 1, got {self.jobs}")
        if not self.bic_eps > 0.0:
            raise ValueError(f"bic_eps must be positive, got {self.bic_eps}")
        if not self.rescale_eps > 0.0:
            raise ValueError(f"rescale_eps must be positive, got {self.rescale_eps}")


@dataclass(frozen=True)
class BatchReport:
    """What happened to one batch: volume, failures, acceptance."""

    num_records: int
    num_errors: int
    num_accepted: int
    acceptance_rate: float
    errors: tuple[tuple[int, str], ...]


@dataclass(frozen=True)
class DiagnoseResult:
    report: BatchReport
    summary: ReleaseSummary | None
    advantage_bins: BinnedStats | None
    margin_bins: BinnedStats | None
    paths: tuple[str, ...]


# ----------------------------------------------------------------------------
# per-record analysis


def _segment_index_for(record: RolloutRecord, config: PipelineConfig) -> SegmentIndex:
    if (config.segments_source == "record" and record.segments is not None
            and len(record.segments) > 0):
        return SegmentIndex(record.segments, record.num_tokens)
    return segment_tokens(record.token_surfaces)


def _analyze(record: RolloutRecord, config: PipelineConfig,
             ) -> tuple[MarginSeries, SegmentIndex, SegmentScores, ChangeDecision]:
    if record.candidates is None:
        raise RecordValidationError("strategy requires top-K candidates",
                                    field="topk")
    margins = teacher_top2_margin(record.candidates,
                                  support_size=config.support_size)
    segments = _segment_index_for(record, config)
    scores = aggregate_segment_scores(margins, segments)
    decision = detect_downward_change(scores, eps=config.bic_eps)
    return margins, segments, scores, decision


def dynamic_prefix_reweight(record: RolloutRecord,
                            config: PipelineConfig = PipelineConfig(),
                            ) -> ReleaseResult:
    """Compute one record's prefix mask and mass-preserving reweighting.

    The random_release strategy permutes decisions across a whole batch and
    has no per-record form; use process_batch for it.
    """
    num_tokens = record.num_tokens
    if config.strategy == "full":
        prefix_mask = np.ones(num_tokens)
        decision = None
    elif config.strategy == "fixed_prefix":
        prefix_mask = fixed_prefix_mask(num_tokens, config.prefix_tokens)
        decision = None
    elif config.strategy == "bic_release":
        _, segments, _, decision = _analyze(record, config)
        prefix_mask = build_prefix_mask(segments, decision, num_tokens)
    else:
        raise ValueError("random_release is a batch-level strategy; "
                         "use process_batch")
    rescaled, scale = rescale_advantages(sampled_advantage(record),
                                         record.loss_mask, prefix_mask,
                                         eps=config.rescale_eps)
    return ReleaseResult(prefix_mask, scale, rescaled, decision)


def _release_payload(accepted: bool, release_segment: int, bic_gain: float,
                     scale: float, prefix_mask: np.ndarray,
                     rescaled: np.ndarray) -> dict[str, Any]:
    return {
        "accepted": accepted,
        "release_segment": release_segment,
        "bic_gain": bic_gain,
        "scale": scale,
        "prefix_mask": prefix_mask.tolist(),
        "rescaled_advantages": rescaled.tolist(),
    }


def _splice_release(raw: bytes, payload: dict[str, Any]) -> bytes:
    """Append a release object to an echoed JSON line.

    The fast path assumes the line does not already mention "release"; any
    line that does (an existing key, or merely the substring inside a value)
    goes through a full decode/re-encode, which also replaces a prior key.
    """
    line = raw.strip()
    if b'"release"' in line:
        obj = decode_line(line)
        obj["release"] = payload
        return dumps_obj(obj)
    return line[:-1] + b',"release":' + dumps_obj(payload) + b"}"


def _error_message(exc: Exception, line_number: int) -> str:
    message = str(exc)
    prefix = f"line {line_number}: "
    return message if message.startswith(prefix) else prefix + message


# ----------------------------------------------------------------------------
# chunked execution


def _iter_chunks(path: str) -> Iterator[list[tuple[int, bytes]]]:
    chunk: list[tuple[int, bytes]] = []
    for line_number, raw in iter_jsonl_lines(path):
        chunk.append((line_number, raw))
        if len(chunk) >= _CHUNK_LINES:
            yield chunk
            chunk = []
    if chunk:
        yield chunk


def _map_chunks(items: Iterable[Any], worker: Callable[[Any], Any],
                jobs: int) -> Iterator[Any]:
    """worker(item) for each item, in order; pooled when jobs > 1."""
    if jobs == 1:
        for item in items:
            yield worker(item)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        pending: deque = deque()
        try:
            for item in items:
                pending.append(pool.submit(worker, item))
                if len(pending) >= jobs * 4:
                    yield pending.popleft().result()
            while pending:
                yield pending.popleft().result()
        finally:
            for future in pending:
                future.cancel()


def _resolve_jobs(jobs: int | None) -> int:
    if jobs is not None:
        return jobs
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def _check_paths(input_path: str, output_path: str) -> None:
    if os.path.abspath(input_path) == os.path.abspath(output_path):
        raise ValueError("output path must differ from input path")


class _BatchTally:
    """Order-preserving sink for worker results; owns the strict/soft policy."""

    def __init__(self, strict: bool) -> None:
        self.strict = strict
        self.num_records = 0
        self.num_accepted = 0
        self.errors: list[tuple[int, str]] = []

    def record_error(self, line_number: int, message: str) -> None:
        if self.strict:
            body = message.removeprefix(f"line {line_number}: ")
            raise DataProcessingError(line_number, body)
        logger.warning("%s", message)
        self.errors.append((line_number, message))

    def report(self) -> BatchReport:
        rate = self.num_accepted / self.num_records if self.num_records else 0.0
        return BatchReport(self.num_records, len(self.errors),
                           self.num_accepted, rate, tuple(self.errors))


# ----------------------------------------------------------------------------
# release


def _release_chunk(chunk: list[tuple[int, bytes]],
                   config: PipelineConfig) -> list[tuple]:
    out: list[tuple] = []
    for line_number, raw in chunk:
        try:
            record = parse_rollout_line(raw, probs=config.probs,
                                        line_number=line_number)
            result = dynamic_prefix_reweight(record, config)
        except TeachcutError as exc:
            out.append(("err", line_number, _error_message(exc, line_number)))
            continue
        decision = result.decision
        if decision is not None:
            accepted = decision.accepted
            release_segment = decision.release_segment
            gain = decision.bic_gain
        else:
            # full / fixed_prefix never ran the change-point test
            accepted, release_segment, gain = False, -1, 0.0
        payload = _release_payload(accepted, release_segment, gain,
                                   result.scale, result.prefix_mask,
                                   result.rescaled_advantages)
        out.append(("ok", line_number, _splice_release(raw, payload), accepted))
    return out


def process_batch(input_path: str, output_path: str,
                  config: PipelineConfig = PipelineConfig()) -> BatchReport:
    """Run one release strategy over a JSONL file.

    Strict mode aborts on the first bad line and removes the partial output;
    otherwise bad lines are logged, counted, and omitted from the output.
    """
    _check_paths(input_path, output_path)
    jobs = _resolve_jobs(config.jobs)
    if config.strategy == "random_release":
        return _random_release_batch(input_path, output_path, config, jobs)

    worker = partial(_release_chunk, config=config)
    tally = _BatchTally(config.strict)
    handle = open(output_path, "wb")
    complete = False
    try:
        for results in _map_chunks(_iter_chunks(input_path), worker, jobs):
            for item in results:
                if item[0] == "ok":
                    handle.write(item[2] + b"\n")
                    tally.num_records += 1
                    tally.num_accepted += bool(item[3])
                else:
                    tally.record_error(item[1], item[2])
        complete = True
    finally:
        handle.close()
        if not complete:
            with contextlib.suppress(OSError):
                os.unlink(output_path)
    return tally.report()


# ----------------------------------------------------------------------------
# batch-level controls: random release and permutation of existing outputs


def _decide_chunk(chunk: list[tuple[int, bytes]],
                  config: PipelineConfig) -> list[tuple]:
    out: list[tuple] = []
    for line_number, raw in chunk:
        try:
            record = parse_rollout_line(raw, probs=config.probs,
                                        line_number=line_number)
            _, segments, _, decision = _analyze(record, config)
        except TeachcutError as exc:
            out.append(("err", line_number, _error_message(exc, line_number)))
            continue
        cums = segments.cumulative_token_counts()
        total = segments.num_tokens
        if decision.accepted:
            retained = int(cums[decision.release_segment - 1])
        else:
            retained = total
        out.append(("ok", line_number, cums, total, decision.accepted,
                    retained, decision.bic_gain))
    return out


def _existing_release_chunk(chunk: list[tuple[int, bytes]],
                            config: PipelineConfig) -> list[tuple]:
    # pass 1 of `permute`: read decisions back out of a prior release output
    out: list[tuple] = []
    for line_number, raw in chunk:
        try:
            obj = decode_line(raw, line_number=line_number)
            record = rollout_from_obj(obj, probs=config.probs,
                                      line_number=line_number)
            release = obj.get("release")
            if not isinstance(release, dict):
                raise RecordValidationError(
                    "missing release data; run release first", field="release",
                    line_number=line_number)
            accepted = release.get("accepted")
            if not isinstance(accepted, bool):
                raise RecordValidationError("expected a boolean",
                                            field="release.accepted",
                                            line_number=line_number)
            gain = release.get("bic_gain")
            if not isinstance(gain, (int, float)) or isinstance(gain, bool):
                raise RecordValidationError("expected a number",
                                            field="release.bic_gain",
                                            line_number=line_number)
            mask = release.get("prefix_mask")
            if not isinstance(mask, list) or len(mask) != record.num_tokens:
                raise RecordValidationError(
                    "expected a list with one entry per token",
                    field="release.prefix_mask", line_number=line_number)
            segments = _segment_index_for(record, config)
        except TeachcutError as exc:
            out.append(("err", line_number, _error_message(exc, line_number)))
            continue
        total = record.num_tokens
        retained = int(round(float(sum(mask)))) if accepted else total
        out.append(("ok", line_number, segments.cumulative_token_counts(),
                    total, accepted, retained, float(gain)))
    return out


def _apply_chunk(task: tuple[list[tuple[int, bytes]], dict],
                 config: PipelineConfig) -> list[tuple]:
    # pass 2: impose transferred release points and rebuild the reweighting
    chunk, assignments = task
    out: list[tuple] = []
    for line_number, raw in chunk:
        try:
            record = parse_rollout_line(raw, probs=config.probs,
                                        line_number=line_number)
        except TeachcutError as exc:
            out.append(("err", line_number, _error_message(exc, line_number)))
            continue
        assignment = assignments.get(line_number)
        if assignment is None:
            out.append(("err", line_number,
                        f"line {line_number}: record changed between passes"))
            continue
        segments = _segment_index_for(record, config)
        decision = ChangeDecision(assignment.release_segment,
                                  assignment.accepted, assignment.bic_gain,
                                  None, None)
        prefix_mask = build_prefix_mask(segments, decision, record.num_tokens)
        rescaled, scale = rescale_advantages(sampled_advantage(record),
                                             record.loss_mask, prefix_mask,
                                             eps=config.rescale_eps)
        payload = _release_payload(assignment.accepted,
                                   assignment.release_segment,
                                   assignment.bic_gain, scale, prefix_mask,
                                   rescaled)
        out.append(("ok", line_number, _splice_release(raw, payload),
                    assignment.accepted))
    return out


def _transfer_batch(input_path: str, output_path: str, config: PipelineConfig,
                    jobs: int, decide_worker: Callable) -> BatchReport:
    tally = _BatchTally(config.strict)
    line_numbers: list[int] = []
    cum_counts: list[np.ndarray] = []
    totals: list[int] = []
    accepted: list[bool] = []
    retained: list[int] = []
    gains: list[float] = []

    for results in _map_chunks(_iter_chunks(input_path), decide_worker, jobs):
        for item in results:
            if item[0] == "ok":
                line_numbers.append(item[1])
                cum_counts.append(item[2])
                totals.append(item[3])
                accepted.append(item[4])
                retained.append(item[5])
                gains.append(item[6])
            else:
                tally.record_error(item[1], item[2])

    if not line_numbers:
        open(output_path, "wb").close()
        return tally.report()

    assignments = _permute_assignments(cum_counts, totals, accepted, retained,
                                       gains, config.random_seed)
    by_line = dict(zip(line_numbers, assignments))

    def tasks() -> Iterator[tuple[list[tuple[int, bytes]], dict]]:
        for chunk in _iter_chunks(input_path):
            local = {ln: by_line[ln] for ln, _ in chunk if ln in by_line}
            yield chunk, local

    worker = partial(_apply_chunk, config=config)
    handle = open(output_path, "wb")
    complete = False
    try:
        for results in _map_chunks(tasks(), worker, jobs):
            for item in results:
                if item[0] == "ok":
                    handle.write(item[2] + b"\n")
                    tally.num_records += 1
                    tally.num_accepted += bool(item[3])
                else:
                    tally.record_error(item[1], item[2])
        complete = True
    finally:
        handle.close()
        if not complete:
            with contextlib.suppress(OSError):
                os.unlink(output_path)
    return tally.report()


def _random_release_batch(input_path: str, output_path: str,
                          config: PipelineConfig, jobs: int) -> BatchReport:
    decide = partial(_decide_chunk, config=config)
    return _transfer_batch(input_path, output_path, config, jobs, decide)


def permute_batch(input_path: str, output_path: str,
                  config: PipelineConfig = PipelineConfig()) -> BatchReport:
    """Permute release points across an existing release output.

    Reads each record's decision back from its ``release`` object (retained
    tokens from the prefix mask), reassigns decisions by a seeded uniform
    permutation, and rewrites the release objects in place. The multiset of
    relative release positions is preserved up to segment-boundary snapping
    on the receiving rollout.
    """
    _check_paths(input_path, output_path)
    jobs = _resolve_jobs(config.jobs)
    decide = partial(_existing_release_chunk, config=config)
    return _transfer_batch(input_path, output_path, config, jobs, decide)


# ----------------------------------------------------------------------------
# diagnostics over a batch


def _diagnose_chunk(chunk: list[tuple[int, bytes]], config: PipelineConfig,
                    ) -> tuple[BinAccumulator, BinAccumulator, list, list]:
    adv_acc = BinAccumulator(config.num_bins)
    margin_acc = BinAccumulator(config.num_bins)
    rows: list[tuple] = []
    errors: list[tuple[int, str]] = []
    for line_number, raw in chunk:
        try:
            record = parse_rollout_line(raw, probs=config.probs,
                                        line_number=line_number)
            margins, segments, _, decision = _analyze(record, config)
        except TeachcutError as exc:
            errors.append((line_number, _error_message(exc, line_number)))
            continue
        adv_acc.add_series(sampled_advantage(record))
        margin_acc.add_series(margins.values)
        if decision.accepted:
            cums = segments.cumulative_token_counts()
            relative = int(cums[decision.release_segment - 1]) / record.num_tokens
            rows.append((True, decision.bic_gain, relative,
                         decision.mu_pre, decision.mu_post))
        else:
            rows.append((False, decision.bic_gain, 1.0,
                         float("nan"), float("nan")))
    return adv_acc, margin_acc, rows, errors


def diagnose_batch(input_path: str, out_dir: str,
                   config: PipelineConfig = PipelineConfig()) -> DiagnoseResult:
    """Write bins.csv, margin_bins.csv, and summary.csv for a rollout batch.

    bins.csv bins per-token advantages over normalized position; margin_bins
    holds the normalized margin decay curve; summary.csv aggregates release
    decisions. Nothing is written when no record survives validation.
    """
    jobs = _resolve_jobs(config.jobs)
    worker = partial(_diagnose_chunk, config=config)
    tally = _BatchTally(config.strict)
    adv_total = BinAccumulator(config.num_bins)
    margin_total = BinAccumulator(config.num_bins)
    rows: list[tuple] = []

    for adv_acc, margin_acc, chunk_rows, errors in _map_chunks(
            _iter_chunks(input_path), worker, jobs):
        for line_number, message in errors:
            tally.record_error(line_number, message)
        adv_total = adv_total.merge(adv_acc)
        margin_total = margin_total.merge(margin_acc)
        rows.extend(chunk_rows)

    tally.num_records = len(rows)
    tally.num_accepted = sum(1 for row in rows if row[0])
    if not rows:
        return DiagnoseResult(tally.report(), None, None, None, ())

    advantage_bins = _finalize(adv_total, normalize_means=False)
    margin_bins = _finalize(margin_total, normalize_means=True)
    summary = _summary_from_rows(rows, config.gain_threshold)

    os.makedirs(out_dir, exist_ok=True)
    bins_path = os.path.join(out_dir, "bins.csv")
    margin_path = os.path.join(out_dir, "margin_bins.csv")
    summary_path = os.path.join(out_dir, "summary.csv")
    write_bins_csv(advantage_bins, bins_path)
    write_bins_csv(margin_bins, margin_path)
    write_summary_csv(summary, summary_path)
    return DiagnoseResult(tally.report(), summary, advantage_bins, margin_bins,
                          (bins_path, margin_path, summary_path))
