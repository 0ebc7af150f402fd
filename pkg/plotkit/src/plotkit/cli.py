"""CLI entry point: render the figure described by a YAML plot spec."""

import argparse
import sys

from .records import PlotDataError
from .render import render
from .spec import SpecError, load_spec


def main(argv=None):
    parser = argparse.ArgumentParser(prog="plot")
    parser.add_argument("spec", help="YAML plot spec path")
    args = parser.parse_args(argv)
    try:
        spec = load_spec(args.spec)
        out = render(spec)
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2
    except PlotDataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
