"""Command-line entry: embed a descriptions file into an LTSE table."""

from __future__ import annotations

import argparse
import json
import sys

from .extract import MODEL_REGISTRY, POOLING_MODES, ExtractorConfig, ModelUnavailableError, extract
from .formats import KeyCollisionError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ltse-extract",
        description="Embed window descriptions with a frozen pretrained model.",
    )
    parser.add_argument("--descriptions", required=True, help="descriptions JSONL file")
    parser.add_argument("--out", required=True, help="output LTSE file")
    parser.add_argument("--model", default="bert", choices=sorted(MODEL_REGISTRY))
    parser.add_argument("--pooling", default="mean", choices=POOLING_MODES)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--max-length", type=int, default=512)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--local-dir", help="load tokenizer and weights from this directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExtractorConfig(
            model=args.model,
            pooling=args.pooling,
            max_length=args.max_length,
            batch_size=args.batch_size,
            device=args.device,
            local_dir=args.local_dir,
        )
        summary = extract(args.descriptions, args.out, cfg)
    except (ValueError, KeyCollisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ModelUnavailableError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
