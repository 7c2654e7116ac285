"""Command-line front end.

Exit codes: 0 on success, 1 for usage problems, 2 when --strict aborts on bad
data. Progress and batch reports go to stderr; only `snr` writes to stdout.
The TEACHCUT_LOG environment variable sets the log level (DEBUG, INFO, ...).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .diagnostics import snr_release_check
from .pipeline import (PipelineConfig, diagnose_batch, permute_batch,
                       process_batch)
from .records import DataProcessingError
from .synthetic import SyntheticConfig, write_dataset

_STRATEGY_HELP = "bic | full | fixed:K | random"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage problems exit 1, not 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _configure_logging() -> None:
    name = os.environ.get("TEACHCUT_LOG", "").strip().upper()
    level = getattr(logging, name, None) if name else None
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


def _require_input(parser: argparse.ArgumentParser, path: str) -> None:
    if not os.path.isfile(path):
        parser.error(f"input file not found: {path}")


def _parse_strategy(parser: argparse.ArgumentParser,
                    spec: str, prefix_tokens: int | None) -> tuple[str, int | None]:
    if spec == "bic":
        name = "bic_release"
    elif spec == "full":
        name = "full"
    elif spec == "random":
        name = "random_release"
    elif spec == "fixed" or spec.startswith("fixed:"):
        if spec != "fixed":
            try:
                embedded = int(spec.split(":", 1)[1])
            except ValueError:
                parser.error(f"invalid strategy {spec!r}: K must be an integer")
            if prefix_tokens is not None and prefix_tokens != embedded:
                parser.error(f"--prefix-tokens {prefix_tokens} conflicts with "
                             f"--strategy {spec}")
            prefix_tokens = embedded
        if prefix_tokens is None:
            parser.error("--strategy fixed requires --prefix-tokens "
                         "(or the fixed:K form)")
        if prefix_tokens < 1:
            parser.error(f"prefix length must be at least 1, got {prefix_tokens}")
        return "fixed_prefix", prefix_tokens
    else:
        parser.error(f"unknown strategy {spec!r} (expected {_STRATEGY_HELP})")
    if prefix_tokens is not None:
        parser.error("--prefix-tokens only applies to --strategy fixed")
    return name, None


def _config_or_usage(parser: argparse.ArgumentParser, **kwargs) -> PipelineConfig:
    try:
        return PipelineConfig(**kwargs)
    except ValueError as exc:
        parser.error(str(exc))


def _add_io_flags(sub: argparse.ArgumentParser, *, out_help: str) -> None:
    sub.add_argument("--in", dest="input", required=True, metavar="PATH",
                     help="input JSONL file")
    sub.add_argument("--out", dest="output", required=True, metavar="PATH",
                     help=out_help)


def _add_batch_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--segments", choices=("record", "builtin"),
                     default="record",
                     help="take segment layout from the record when present, "
                          "or always re-derive it from token surfaces")
    sub.add_argument("--probs", action="store_true",
                     help="candidate arrays hold probabilities; convert to logs")
    sub.add_argument("--strict", action="store_true",
                     help="abort on the first bad record instead of skipping")
    sub.add_argument("--jobs", type=int, default=None,
                     help="worker processes (default: available cores)")


def _report_line(verb: str, report) -> str:
    return (f"{verb}: {report.num_records} records, "
            f"{report.num_accepted} accepted, {report.num_errors} errors")


def _cmd_release(parser: argparse.ArgumentParser, args: argparse.Namespace) -> int:
    _require_input(parser, args.input)
    strategy, prefix_tokens = _parse_strategy(parser, args.strategy,
                                              args.prefix_tokens)
    config = _config_or_usage(parser, support_size=args.top_k,
                              strategy=strategy, prefix_tokens=prefix_tokens,
                              segments_source=args.segments, probs=args.probs,
                              strict=args.strict, jobs=args.jobs,
                              random_seed=args.seed)
    report = process_batch(args.input, args.output, config)
    print(_report_line("release", report), file=sys.stderr)
    return 0


def _cmd_diagnose(parser: argparse.ArgumentParser, args: argparse.Namespace) -> int:
    _require_input(parser, args.input)
    config = _config_or_usage(parser, support_size=args.top_k,
                              num_bins=args.bins,
                              gain_threshold=args.gain_threshold,
                              segments_source=args.segments, probs=args.probs,
                              strict=args.strict, jobs=args.jobs)
    result = diagnose_batch(args.input, args.output, config)
    print(_report_line("diagnose", result.report), file=sys.stderr)
    if not result.paths:
        print("diagnose: no valid records; nothing written", file=sys.stderr)
    else:
        print(f"diagnose: wrote {', '.join(result.paths)}", file=sys.stderr)
    return 0


def _cmd_permute(parser: argparse.ArgumentParser, args: argparse.Namespace) -> int:
    _require_input(parser, args.input)
    config = _config_or_usage(parser, segments_source=args.segments,
                              probs=args.probs, strict=args.strict,
                              jobs=args.jobs, random_seed=args.seed)
    report = permute_batch(args.input, args.output, config)
    print(_report_line("permute", report), file=sys.stderr)
    return 0


def _cmd_simulate(parser: argparse.ArgumentParser, args: argparse.Namespace) -> int:
    try:
        config = SyntheticConfig(num_segments=args.n,
                                 tokens_per_segment=args.tokens_per_segment,
                                 true_tau=args.tau,
                                 pre_margin_mean=args.pre,
                                 post_margin_mean=args.post,
                                 noise_std=args.noise,
                                 support_size=args.top_k,
                                 seed=args.seed)
        if args.rollouts < 1:
            raise ValueError(f"--rollouts must be at least 1, got {args.rollouts}")
    except ValueError as exc:
        parser.error(str(exc))
    data_path, truth_path = write_dataset(args.output, config, args.rollouts)
    print(f"simulate: wrote {args.rollouts} rollouts to {data_path} "
          f"(ground truth: {truth_path})", file=sys.stderr)
    return 0


def _cmd_snr(parser: argparse.ArgumentParser, args: argparse.Namespace) -> int:
    try:
        report = snr_release_check(args.m_prefix, args.v_prefix,
                                   args.m_suffix, args.v_suffix)
    except ValueError as exc:
        parser.error(str(exc))
    print(f"improves={report.release_improves} "
          f"snr_release={report.snr_release!r} snr_full={report.snr_full!r}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="teachcut",
                     description="Rollout release-point detection, advantage "
                                 "reweighting, and batch diagnostics.")
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_Parser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    release = subs.add_parser("release", formatter_class=fmt,
                              help="detect release points and rewrite advantages")
    _add_io_flags(release, out_help="output JSONL file")
    release.add_argument("--top-k", type=int, default=4,
                         help="candidate support size per position")
    release.add_argument("--strategy", default="bic", metavar="NAME",
                         help=f"masking strategy: {_STRATEGY_HELP}")
    release.add_argument("--prefix-tokens", type=int, default=None,
                         help="prefix length for the fixed strategy")
    release.add_argument("--seed", type=int, default=0,
                         help="permutation seed for the random strategy")
    _add_batch_flags(release)
    release.set_defaults(handler=_cmd_release)

    diagnose = subs.add_parser("diagnose", formatter_class=fmt,
                               help="write binned statistics and a release summary")
    diagnose.add_argument("--in", dest="input", required=True, metavar="PATH",
                          help="input JSONL file")
    diagnose.add_argument("--out", dest="output", required=True, metavar="DIR",
                          help="directory for bins.csv, margin_bins.csv, summary.csv")
    diagnose.add_argument("--top-k", type=int, default=4,
                          help="candidate support size per position")
    diagnose.add_argument("--bins", type=int, default=20,
                          help="number of normalized-position bins")
    diagnose.add_argument("--gain-threshold", type=float, default=6.0,
                          help="threshold for the strong-gain fraction")
    _add_batch_flags(diagnose)
    diagnose.set_defaults(handler=_cmd_diagnose)

    permute = subs.add_parser("permute", formatter_class=fmt,
                              help="randomly reassign release points in an "
                                   "existing release output")
    _add_io_flags(permute, out_help="output JSONL file")
    permute.add_argument("--seed", type=int, default=0, help="permutation seed")
    _add_batch_flags(permute)
    permute.set_defaults(handler=_cmd_permute)

    simulate = subs.add_parser("simulate", formatter_class=fmt,
                               help="generate synthetic rollouts with planted "
                                    "margin structure")
    simulate.add_argument("--out", dest="output", required=True, metavar="PATH",
                          help="output JSONL file (ground_truth.jsonl lands "
                               "beside it)")
    simulate.add_argument("--rollouts", type=int, default=100,
                          help="number of rollouts to generate")
    simulate.add_argument("--n", type=int, default=6, help="segments per rollout")
    simulate.add_argument("--tau", type=int, default=None,
                          help="planted change point (segments at the pre mean); "
                               "omit for no change")
    simulate.add_argument("--noise", type=float, default=0.0,
                          help="margin noise standard deviation")
    simulate.add_argument("--pre", type=float, default=1.0,
                          help="pre-change margin mean")
    simulate.add_argument("--post", type=float, default=0.0,
                          help="post-change margin mean")
    simulate.add_argument("--tokens-per-segment", type=int, default=10,
                          help="tokens in each segment")
    simulate.add_argument("--top-k", type=int, default=4,
                          help="candidates per position")
    simulate.add_argument("--seed", type=int, default=0, help="noise seed")
    simulate.set_defaults(handler=_cmd_simulate)

    snr = subs.add_parser("snr", formatter_class=fmt,
                          help="check whether releasing a suffix improves the "
                               "directional signal-to-noise ratio")
    snr.add_argument("--m-prefix", type=float, required=True,
                     help="mean gradient contribution of the kept prefix")
    snr.add_argument("--v-prefix", type=float, required=True,
                     help="variance contribution of the kept prefix")
    snr.add_argument("--m-suffix", type=float, required=True,
                     help="mean gradient contribution of the released suffix")
    snr.add_argument("--v-suffix", type=float, required=True,
                     help="variance contribution of the released suffix")
    snr.set_defaults(handler=_cmd_snr)

    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(parser, args)
    except DataProcessingError as exc:
        print(f"teachcut: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
