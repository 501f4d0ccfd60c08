"""Command line entry point: ``pfoco run|validate|sweep <config>``.

Exit codes: 0 success, 2 invalid or unreadable config, 3 numeric failure
inside a learner.
"""

import argparse
import sys

from .errors import NumericError
from .harness import OUT_DIR_ENV, ConfigParseError, load_config, resolve_output_dir, run_experiment, validate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _parser():
    p = argparse.ArgumentParser(prog="pfoco", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "run every (T, seed) cell of a config"),
        ("sweep", "multi-horizon run followed by an exponent fit"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config")
        sp.add_argument("--out", help=f"output directory (overrides ${OUT_DIR_ENV} and the config)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sp = sub.add_parser("validate", help="check a config without running it")
    sp.add_argument("config")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except ConfigParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    min_h = 3 if args.command == "sweep" else 1
    issues = validate(config, min_horizons=min_h)
    if args.command == "validate":
        for msg in issues:
            print(msg)
        if not issues:
            print("ok")
        return EXIT_CONFIG if issues else EXIT_OK
    if issues:
        for msg in issues:
            print(f"invalid config: {msg}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        cells, exponents = run_experiment(config, out_dir=args.out, jobs=args.jobs)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = resolve_output_dir(config, args.out)
    print(f"wrote {len(cells)} traces and {out / 'summary.csv'}")
    if exponents is not None:
        print(f"regret exponent {exponents[0]:.4f}, violation exponent {exponents[1]:.4f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
