"""Builders shared across test modules."""

import json


def valid_obj(num_tokens=4, num_candidates=3):
    """A schema-valid rollout dict with descending candidate log-probs."""
    tokens = ["tok"] * (num_tokens - 1) + ["end."]
    return {
        "rollout_id": "r0",
        "tokens": tokens,
        "teacher_logp": [-0.2] * num_tokens,
        "student_logp": [-0.4] * num_tokens,
        "loss_mask": [1.0] * num_tokens,
        "topk": {
            "ids": [list(range(num_candidates)) for _ in range(num_tokens)],
            "student_logp": [[-0.5 * (j + 1) for j in range(num_candidates)]
                             for _ in range(num_tokens)],
            "teacher_logp": [[-0.1 - 0.3 * j for j in range(num_candidates)]
                             for _ in range(num_tokens)],
        },
        "segments": [list(range(num_tokens))],
    }


def to_line(obj):
    return json.dumps(obj).encode()


def write_jsonl(path, objs):
    with open(path, "wb") as handle:
        for obj in objs:
            handle.write(to_line(obj) + b"\n")
    return str(path)
