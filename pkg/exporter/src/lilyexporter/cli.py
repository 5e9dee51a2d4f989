"""Command line wrapper around export_hidden_states.

Exit codes: 0 success, 2 any export or input error.
"""

from __future__ import annotations

import argparse
import sys

from .export import (
    DEFAULT_BATCH_SIZE,
    ExporterError,
    ExportJob,
    export_hidden_states,
)


def _parse_layers(value: str) -> tuple[int, ...]:
    try:
        return tuple(
            int(part) for part in value.split(",") if part.strip()
        )
    except ValueError as exc:
        raise ExporterError(f"bad layer list {value!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lilyexport",
        description=(
            "Export per-chunk mean hidden states from a frozen encoder "
            "checkpoint into the probe embeddings JSONL format."
        ),
    )
    parser.add_argument("model", help="checkpoint path or hub identifier")
    parser.add_argument("chunks", help="chunk JSONL file")
    parser.add_argument("output", help="embeddings JSONL to write")
    parser.add_argument(
        "--layers", default="3,6,9,12", help="comma list, e.g. 3,6,9,12"
    )
    parser.add_argument(
        "--batch-size", dest="batch_size", type=int,
        default=DEFAULT_BATCH_SIZE,
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(
            model_ref=args.model,
            chunks_path=args.chunks,
            output_path=args.output,
            layers=_parse_layers(args.layers),
            batch_size=args.batch_size,
        )
        path = export_hidden_states(job)
    except (ExporterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
