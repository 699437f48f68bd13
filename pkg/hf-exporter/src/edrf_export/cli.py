"""Command line front end.

    edrf-export --model M --data D --labelmap map.json --out file.edrf \\
                [--layer -1] [--max-tokens 50000 --seed N]
"""

from __future__ import annotations

import argparse
import sys

from .data import load_label_map
from .errors import ExportError
from .export import ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edrf-export",
        description="dump per-token hidden states of a token-classification "
        "checkpoint into an EDRF snapshot",
    )
    parser.add_argument("--model", required=True, help="checkpoint path or hub id")
    parser.add_argument("--data", required=True, help="CoNLL-style or JSONL token/label file")
    parser.add_argument("--labelmap", required=True, help="JSON: dataset label -> class name")
    parser.add_argument("--out", required=True, help="EDRF output path")
    parser.add_argument("--layer", type=int, default=-1, help="hidden-state layer, -1 = last (default)")
    parser.add_argument("--max-tokens", type=int, default=None, help="subsampling cap")
    parser.add_argument("--seed", type=int, default=0, help="subsampling seed")
    parser.add_argument("--batch-size", type=int, default=16)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(
            model=args.model,
            data=args.data,
            label_map=load_label_map(args.labelmap),
            out=args.out,
            layer=args.layer,
            max_tokens=args.max_tokens,
            seed=args.seed,
            batch_size=args.batch_size,
        )
        result = export(job)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    note = f", {result.dropped} dropped by truncation" if result.dropped else ""
    print(
        f"wrote {result.tokens} tokens, dim {result.dim}, "
        f"stage {result.stage_name!r} -> {result.path}{note}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
