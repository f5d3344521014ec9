"""Bridge entry points: `serve` (protocol loop) and `segment` (mask files)."""

from __future__ import annotations

import argparse
import sys

from .config import BridgeConfig
from .protocol import serve_protocol
from .segmenter import generate_segments


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="vlmbridge")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="answer protocol requests on stdin/stdout")
    p.add_argument("--embedder", default="builtin:16")
    p.add_argument("--device", default="cpu")

    p = sub.add_parser("segment", help="segment a directory of images into mask JSONL")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-area-frac", type=float, default=0.0025)

    args = parser.parse_args(argv)
    if args.command == "serve":
        serve_protocol(BridgeConfig(embedder=args.embedder, device=args.device))
        return 0
    if args.command == "segment":
        count = generate_segments(args.images, args.out, args.min_area_frac)
        print(f"wrote {count} mask records -> {args.out}")
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
