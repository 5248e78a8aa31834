"""Command line entry point: export-features."""

from __future__ import annotations

import argparse
import json
import sys
import warnings

from .export import ExtractionJob, extract
from .errors import ExportError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="export-features",
        description="Encode an image directory into a VFMF feature file.",
    )
    parser.add_argument("--images", required=True, help="image directory")
    parser.add_argument(
        "--encoder", required=True, help="encoder identifier (e.g. hash64)"
    )
    parser.add_argument("--out", required=True, help="feature file to write")
    parser.add_argument(
        "--concat-last-3", action="store_true",
        help="mean-pool each of the encoder's last three stages and "
        "concatenate them, instead of pooling only the final stage",
    )
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument(
        "--device", default="cpu", help="device hint for the encoder"
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result = extract(
                ExtractionJob(
                    images=args.images,
                    encoder=args.encoder,
                    out=args.out,
                    batch_size=args.batch_size,
                    device=args.device,
                    concat_last_3=args.concat_last_3,
                )
            )
        for entry in caught:
            print(f"warning: {entry.message}", file=sys.stderr)
    except ExportError as exc:
        doc = {
            "error": type(exc).__name__,
            "message": str(exc),
            "exit_code": exc.exit_code,
        }
        print(json.dumps(doc), file=sys.stderr)
        return exc.exit_code
    report = {
        "command": "export",
        "out": str(result.out),
        "n": result.n,
        "d": result.d,
        "encoder": result.encoder,
        "skipped": list(result.skipped),
    }
    print(json.dumps(report, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
