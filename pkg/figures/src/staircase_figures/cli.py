"""figures <figure-id> --run <dir> --out <file.(png|svg|pdf)>"""

from __future__ import annotations

import argparse
import sys

from .reading import SchemaError
from .render import RENDERERS, render


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="figures", description=__doc__)
    ap.add_argument("figure_id", choices=sorted(RENDERERS))
    ap.add_argument("--run", required=True, help="staircase-lab run directory")
    ap.add_argument("--out", required=True, help="output image path")
    args = ap.parse_args(argv)
    try:
        render(args.figure_id, args.run, args.out)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
