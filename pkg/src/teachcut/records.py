"""Rollout data model, JSONL parsing, and schema validation.

One rollout per JSONL line:

    {"rollout_id": str, "tokens": [str], "teacher_logp": [f64],
     "student_logp": [f64], "loss_mask": [f64],
     "topk": {"ids": [[int]], "student_logp": [[f64]], "teacher_logp": [[f64]]},
     "segments": [[int]]?}

All per-token sequences share length T. ``topk`` and ``segments`` are optional;
strategies that need candidates raise when they are absent rather than degrade.
Unknown fields are ignored (and preserved verbatim by the batch writer).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import chain
from typing import Any, Iterator, Sequence

import numpy as np

try:
    import msgspec
except ImportError:  # stdlib fallback keeps the package importable without it
    msgspec = None

# Floor applied when --probs converts probabilities to logs.
PROB_FLOOR = 1e-12


class TeachcutError(Exception):
    """Base class for errors raised by this package."""


class RecordParseError(TeachcutError):
    """A line is not well-formed JSON."""

    def __init__(self, message: str, *, line_number: int | None = None,
                 byte_offset: int | None = None) -> None:
        self.line_number = line_number
        self.byte_offset = byte_offset
        prefix = f"line {line_number}: " if line_number is not None else ""
        suffix = f" (byte offset {byte_offset})" if byte_offset is not None else ""
        super().__init__(f"{prefix}invalid JSON: {message}{suffix}")


class RecordValidationError(TeachcutError):
    """A decoded record violates a schema invariant."""

    def __init__(self, message: str, *, field: str, position: int | None = None,
                 line_number: int | None = None) -> None:
        self.field = field
        self.position = position
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"{prefix}{field}{where}: {message}")


class DataProcessingError(TeachcutError):
    """Raised in strict mode when a batch aborts on its first bad record."""

    def __init__(self, line_number: int, message: str) -> None:
        self.line_number = line_number
        super().__init__(f"strict mode: aborting at line {line_number}: {message}")


@dataclass(frozen=True)
class TopKCandidates:
    """Per-position candidate sets, stored flat with row offsets.

    ``ids[offsets[t]:offsets[t+1]]`` are the student's top candidates at
    position t, ordered by descending student probability. ``uniform_row_length``
    is set when every position exposes the same K, which enables the matrix
    fast path in the margin computation.
    """

    ids: np.ndarray
    student_logp: np.ndarray
    teacher_logp: np.ndarray
    offsets: np.ndarray
    uniform_row_length: int | None

    @property
    def num_positions(self) -> int:
        return len(self.offsets) - 1

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ids, student_logp, teacher_logp) as (T, K) matrices.

        Only valid when uniform_row_length is set.
        """
        k = self.uniform_row_length
        if k is None:
            raise ValueError("candidate rows are ragged; no matrix view exists")
        t = self.num_positions
        return (self.ids.reshape(t, k), self.student_logp.reshape(t, k),
                self.teacher_logp.reshape(t, k))

    @classmethod
    def from_rows(cls, ids_rows: Sequence[Sequence[int]],
                  student_rows: Sequence[Sequence[float]],
                  teacher_rows: Sequence[Sequence[float]]) -> "TopKCandidates":
        lens = list(map(len, ids_rows))
        total = sum(lens)
        ids = np.fromiter(chain.from_iterable(ids_rows), dtype=np.int64, count=total)
        student = np.fromiter(chain.from_iterable(student_rows), dtype=np.float64, count=total)
        teacher = np.fromiter(chain.from_iterable(teacher_rows), dtype=np.float64, count=total)
        uniform = lens[0] if lens and min(lens) == max(lens) else None
        if uniform is not None:
            offsets = np.arange(0, total + uniform, uniform, dtype=np.int64)
        else:
            offsets = np.zeros(len(lens) + 1, dtype=np.int64)
            np.cumsum(lens, out=offsets[1:])
        return cls(ids, student, teacher, offsets, uniform)


@dataclass(frozen=True)
class RolloutRecord:
    """One student rollout with per-token teacher/student log-probs."""

    rollout_id: str
    token_surfaces: list[str]
    sampled_teacher_logp: np.ndarray
    sampled_student_logp: np.ndarray
    loss_mask: np.ndarray
    candidates: TopKCandidates | None = None
    segments: tuple[np.ndarray, ...] | None = None

    @property
    def num_tokens(self) -> int:
        return len(self.token_surfaces)


def sampled_advantage(record: RolloutRecord) -> np.ndarray:
    """Per-token advantage: teacher log-prob minus student log-prob."""
    return record.sampled_teacher_logp - record.sampled_student_logp


# ----------------------------------------------------------------------------
# decoding


def _decode_stdlib(line: bytes | str, line_number: int | None) -> Any:
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        offset = len(exc.doc[:exc.pos].encode("utf-8"))
        raise RecordParseError(exc.msg, line_number=line_number,
                               byte_offset=offset) from None


if msgspec is not None:
    _msgspec_decode = msgspec.json.Decoder().decode
    _msgspec_encode = msgspec.json.Encoder().encode

    def decode_line(line: bytes | str, *, line_number: int | None = None) -> Any:
        """Decode one JSONL line to a Python object."""
        try:
            return _msgspec_decode(line)
        except msgspec.DecodeError:
            # stdlib accepts a superset (NaN literals); prefer its byte-offset
            # errors, and let validation reject non-finite values by field.
            return _decode_stdlib(line, line_number)

    def dumps_obj(obj: Any) -> bytes:
        return _msgspec_encode(obj)

else:

    def decode_line(line: bytes | str, *, line_number: int | None = None) -> Any:
        """Decode one JSONL line to a Python object."""
        return _decode_stdlib(line, line_number)

    def dumps_obj(obj: Any) -> bytes:
        return json.dumps(obj, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


# ----------------------------------------------------------------------------
# validation


def _first_true(mask: np.ndarray) -> int:
    return int(np.argmax(mask))


def _float_array(values: Any, field: str, line_number: int | None) -> np.ndarray:
    try:
        return np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError):
        raise RecordValidationError("expected an array of numbers", field=field,
                                    line_number=line_number) from None


def _check_logp(arr: np.ndarray, field: str, line_number: int | None) -> None:
    finite = np.isfinite(arr)
    if not finite.all():
        raise RecordValidationError("log-probability not finite", field=field,
                                    position=_first_true(~finite),
                                    line_number=line_number)
    positive = arr > 0.0
    if positive.any():
        raise RecordValidationError("log-probability > 0", field=field,
                                    position=_first_true(positive),
                                    line_number=line_number)


def _flatten_rows(rows: Any, dtype: type, field: str,
                  line_number: int | None) -> tuple[np.ndarray, list[int]]:
    try:
        lens = list(map(len, rows))
        flat = np.fromiter(chain.from_iterable(rows), dtype=dtype, count=sum(lens))
    except (TypeError, ValueError):
        raise RecordValidationError("expected a list of per-position arrays",
                                    field=field, line_number=line_number) from None
    return flat, lens


def _candidates_from_obj(topk: Any, num_tokens: int, probs: bool,
                         line_number: int | None) -> TopKCandidates:
    if not isinstance(topk, dict):
        raise RecordValidationError("expected an object", field="topk",
                                    line_number=line_number)
    for key in ("ids", "student_logp", "teacher_logp"):
        if key not in topk:
            raise RecordValidationError("missing field", field=f"topk.{key}",
                                        line_number=line_number)

    ids, id_lens = _flatten_rows(topk["ids"], np.int64, "topk.ids", line_number)
    student, st_lens = _flatten_rows(topk["student_logp"], np.float64,
                                     "topk.student_logp", line_number)
    teacher, te_lens = _flatten_rows(topk["teacher_logp"], np.float64,
                                     "topk.teacher_logp", line_number)

    if len(id_lens) != num_tokens:
        raise RecordValidationError(
            f"length mismatch: {len(id_lens)} positions, expected {num_tokens}",
            field="topk.ids", line_number=line_number)
    if st_lens != id_lens:
        raise RecordValidationError("length mismatch against topk.ids",
                                    field="topk.student_logp", line_number=line_number)
    if te_lens != id_lens:
        raise RecordValidationError("length mismatch against topk.ids",
                                    field="topk.teacher_logp", line_number=line_number)
    if id_lens and min(id_lens) < 2:
        raise RecordValidationError("fewer than 2 candidates",
                                    field="topk.ids",
                                    position=id_lens.index(min(id_lens)),
                                    line_number=line_number)

    if probs:
        student = np.log(np.maximum(student, PROB_FLOOR))
        teacher = np.log(np.maximum(teacher, PROB_FLOOR))
    _check_logp(student, "topk.student_logp", line_number)
    _check_logp(teacher, "topk.teacher_logp", line_number)

    uniform = id_lens[0] if id_lens and min(id_lens) == max(id_lens) else None
    if uniform is not None:
        offsets = np.arange(0, len(ids) + uniform, uniform, dtype=np.int64)
    else:
        offsets = np.zeros(len(id_lens) + 1, dtype=np.int64)
        np.cumsum(id_lens, out=offsets[1:])

    _check_student_order(ids, student, offsets, uniform, num_tokens, line_number)
    return TopKCandidates(ids, student, teacher, offsets, uniform)


def _check_student_order(ids: np.ndarray, student: np.ndarray, offsets: np.ndarray,
                         uniform: int | None, num_tokens: int,
                         line_number: int | None) -> None:
    # top-K ordering: student_logp non-increasing, exact ties by ascending id
    if uniform is not None:
        st = student.reshape(num_tokens, uniform)
        diff = np.diff(st, axis=1)
        if (diff > 0.0).any():
            pos = _first_true((diff > 0.0).any(axis=1))
            raise RecordValidationError("not sorted by descending student log-prob",
                                        field="topk.student_logp", position=pos,
                                        line_number=line_number)
        tie = diff == 0.0
        if tie.any():
            id_diff = np.diff(ids.reshape(num_tokens, uniform), axis=1)
            bad = tie & (id_diff <= 0)
            if bad.any():
                pos = _first_true(bad.any(axis=1))
                raise RecordValidationError(
                    "tied student log-probs must order by ascending candidate id",
                    field="topk.ids", position=pos, line_number=line_number)
        return
    for t in range(num_tokens):
        lo, hi = offsets[t], offsets[t + 1]
        st = student[lo:hi]
        d = np.diff(st)
        if (d > 0.0).any():
            raise RecordValidationError("not sorted by descending student log-prob",
                                        field="topk.student_logp", position=t,
                                        line_number=line_number)
        tie = d == 0.0
        if tie.any() and (np.diff(ids[lo:hi])[tie] <= 0).any():
            raise RecordValidationError(
                "tied student log-probs must order by ascending candidate id",
                field="topk.ids", position=t, line_number=line_number)


def _segments_from_obj(raw: Any, num_tokens: int,
                       line_number: int | None) -> tuple[np.ndarray, ...]:
    if not isinstance(raw, list):
        raise RecordValidationError("expected a list of token-index lists",
                                    field="segments", line_number=line_number)
    segments: list[np.ndarray] = []
    prev_last = -1
    for i, entry in enumerate(raw):
        try:
            idx = np.asarray(entry, dtype=np.int64)
        except (TypeError, ValueError):
            raise RecordValidationError("expected a list of integers",
                                        field="segments", position=i,
                                        line_number=line_number) from None
        if idx.ndim != 1:
            raise RecordValidationError("expected a flat list of integers",
                                        field="segments", position=i,
                                        line_number=line_number)
        if idx.size == 0:
            continue  # empty segments dropped at construction
        if (np.diff(idx) <= 0).any():
            raise RecordValidationError("token indices not strictly ascending",
                                        field="segments", position=i,
                                        line_number=line_number)
        if idx[0] <= prev_last:
            raise RecordValidationError("segments overlap or are out of order",
                                        field="segments", position=i,
                                        line_number=line_number)
        if idx[0] < 0 or idx[-1] >= num_tokens:
            raise RecordValidationError(
                f"token index out of range [0, {num_tokens})",
                field="segments", position=i, line_number=line_number)
        prev_last = int(idx[-1])
        segments.append(idx)
    return tuple(segments)


def rollout_from_obj(obj: Any, *, probs: bool = False,
                     line_number: int | None = None) -> RolloutRecord:
    """Validate a decoded JSON object and build a RolloutRecord.

    ``probs`` treats the topk arrays as probabilities and converts them via
    natural log with floor PROB_FLOOR; the sampled log-prob arrays are never
    converted.
    """
    if not isinstance(obj, dict):
        raise RecordParseError("top-level value is not an object",
                               line_number=line_number)
    for key in ("rollout_id", "tokens", "teacher_logp", "student_logp", "loss_mask"):
        if key not in obj:
            raise RecordValidationError("missing field", field=key,
                                        line_number=line_number)

    rollout_id = obj["rollout_id"]
    if not isinstance(rollout_id, str):
        raise RecordValidationError("expected a string", field="rollout_id",
                                    line_number=line_number)

    tokens = obj["tokens"]
    if not isinstance(tokens, list) or not tokens:
        raise RecordValidationError("expected a non-empty list of strings",
                                    field="tokens", line_number=line_number)
    if any(not isinstance(t, str) for t in tokens):
        raise RecordValidationError("expected a non-empty list of strings",
                                    field="tokens", line_number=line_number)
    num_tokens = len(tokens)

    arrays = {}
    for key in ("teacher_logp", "student_logp", "loss_mask"):
        raw = obj[key]
        if not isinstance(raw, list):
            raise RecordValidationError("expected an array of numbers", field=key,
                                        line_number=line_number)
        if len(raw) != num_tokens:
            raise RecordValidationError(
                f"length mismatch: {len(raw)} values, expected {num_tokens}",
                field=key, line_number=line_number)
        arrays[key] = _float_array(raw, key, line_number)

    _check_logp(arrays["teacher_logp"], "teacher_logp", line_number)
    _check_logp(arrays["student_logp"], "student_logp", line_number)

    mask = arrays["loss_mask"]
    bad = ~np.isfinite(mask) | (mask < 0.0) | (mask > 1.0)
    if bad.any():
        raise RecordValidationError("loss_mask values must lie in [0, 1]",
                                    field="loss_mask", position=_first_true(bad),
                                    line_number=line_number)
    if not (mask > 0.0).any():
        raise RecordValidationError("loss_mask has no positive entries",
                                    field="loss_mask", line_number=line_number)

    candidates = None
    if obj.get("topk") is not None:
        candidates = _candidates_from_obj(obj["topk"], num_tokens, probs, line_number)

    segments = None
    if obj.get("segments") is not None:
        segments = _segments_from_obj(obj["segments"], num_tokens, line_number)

    return RolloutRecord(rollout_id=rollout_id, token_surfaces=tokens,
                         sampled_teacher_logp=arrays["teacher_logp"],
                         sampled_student_logp=arrays["student_logp"],
                         loss_mask=mask, candidates=candidates, segments=segments)


def parse_rollout_line(line: bytes | str, *, probs: bool = False,
                       line_number: int | None = None) -> RolloutRecord:
    """Parse and validate one JSONL line."""
    obj = decode_line(line, line_number=line_number)
    return rollout_from_obj(obj, probs=probs, line_number=line_number)


# ----------------------------------------------------------------------------
# serialization


def rollout_to_obj(record: RolloutRecord) -> dict[str, Any]:
    """Serializable dict in the JSONL schema; inverse of rollout_from_obj."""
    obj: dict[str, Any] = {
        "rollout_id": record.rollout_id,
        "tokens": list(record.token_surfaces),
        "teacher_logp": record.sampled_teacher_logp.tolist(),
        "student_logp": record.sampled_student_logp.tolist(),
        "loss_mask": record.loss_mask.tolist(),
    }
    cand = record.candidates
    if cand is not None:
        bounds = [(int(cand.offsets[t]), int(cand.offsets[t + 1]))
                  for t in range(cand.num_positions)]
        obj["topk"] = {
            "ids": [cand.ids[lo:hi].tolist() for lo, hi in bounds],
            "student_logp": [cand.student_logp[lo:hi].tolist() for lo, hi in bounds],
            "teacher_logp": [cand.teacher_logp[lo:hi].tolist() for lo, hi in bounds],
        }
    if record.segments is not None:
        obj["segments"] = [seg.tolist() for seg in record.segments]
    return obj


def iter_jsonl_lines(path: str) -> Iterator[tuple[int, bytes]]:
    """Yield (line_number, raw_line) pairs, skipping blank lines."""
    with open(path, "rb") as handle:
        for line_number, raw in enumerate(handle, start=1):
            if raw.strip():
                yield line_number, raw
