"""The ``plot`` command: one rendering job per invocation.

Exit codes: 0 on success, 2 for unusable input (missing file, malformed
CSV, wrong number of inputs for the kind).
"""

from __future__ import annotations

import argparse
import sys

from .readers import ParseError
from .render import RENDERERS, PlotJob

EXIT_OK = 0
EXIT_INPUT = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot",
        description="Render solver CSV output as an image.",
    )
    parser.add_argument(
        "--kind",
        required=True,
        choices=sorted(RENDERERS),
        help="contour or surface take one field CSV; recovery overlays one curve per CSV",
    )
    parser.add_argument(
        "--in",
        dest="inputs",
        required=True,
        nargs="+",
        metavar="CSV",
        help="input CSV file(s)",
    )
    parser.add_argument("--out", required=True, help="output image path (png)")
    parser.add_argument("--title", default=None, help="optional plot title")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = PlotJob(inputs=tuple(args.inputs), out=args.out, title=args.title)
    try:
        out = RENDERERS[args.kind](job)
    except (ParseError, ValueError, OSError) as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
