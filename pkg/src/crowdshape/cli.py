"""Command line: ``crowdshape run|compare|validate``.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
"""
import argparse
import logging
import sys

from .exceptions import ConfigError, InvalidInputError
from . import sim_harness as harness


def _times(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated times, got {text!r}")


def _parser():
    p = argparse.ArgumentParser(prog="crowdshape", description="Moment-based leader control of crowds.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario and write its outputs")
    r.add_argument("scenario", help="scenario file or shipped name (sim1, sim2, sim3, desk_sim1, desk_sim2)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, help="override follower_init.seed")
    r.add_argument("--snapshots", type=_times, help="comma-separated snapshot times")
    c = sub.add_parser("compare", help="per-order integrated errors of two run directories")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    v = sub.add_parser("validate", help="check a scenario file and print its expanded form")
    v.add_argument("scenario")
    return p


def _report_config_error(exc):
    print(f"error: {exc}", file=sys.stderr)
    for item in getattr(exc, "problems", None) or []:
        print(f"  - {item}", file=sys.stderr)


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "validate":
            import json

            cfg = harness.load_scenario(args.scenario)
            print(json.dumps(cfg.to_json(), indent=2))
            return harness.EXIT_OK
        if args.cmd == "run":
            cfg = harness.load_scenario(args.scenario, seed=args.seed, snapshots=args.snapshots)

            def progress(k, n):
                if args.verbose and (k % 50 == 0 or k == n):
                    logging.getLogger("crowdshape").info("period %d / %d", k, n)

            status = harness.run(cfg, args.out, progress)
            if status != harness.EXIT_OK:
                print(f"error: numerical failure, partial outputs in {args.out} (see manifest.json)", file=sys.stderr)
            return status
        rows = harness.compare_errors(harness.read_errors(args.dir_a), harness.read_errors(args.dir_b))
        sys.stdout.write(harness.format_comparison(rows))
        return harness.EXIT_OK
    except (ConfigError, InvalidInputError, FileNotFoundError) as exc:
        _report_config_error(exc)
        return harness.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
