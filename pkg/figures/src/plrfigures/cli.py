"""Command line: figures <kind> --in PATH --out PATH [--method NAME].

Kinds: histogram (needs the *_samples.csv sidecar and --method),
sparsity_panel, mse_grid, nuisance_error (cell table).
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from .plots import FIGURE_KINDS, plot_histogram


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figures", description="render experiment figures from harness CSV output"
    )
    parser.add_argument("kind", choices=sorted(FIGURE_KINDS))
    parser.add_argument("--in", dest="input", required=True, help="input CSV path")
    parser.add_argument("--out", required=True, help="output image path (.png or .svg)")
    parser.add_argument("--method", help="method label (histogram only)")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        if args.kind == "histogram":
            if not args.method:
                print("figures: error: histogram requires --method", file=sys.stderr)
                return 1
            plot_histogram(args.input, args.method, args.out)
        else:
            FIGURE_KINDS[args.kind](args.input, args.out)
    except Exception as exc:
        print(f"figures: error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
