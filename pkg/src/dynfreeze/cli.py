"""Command-line entry point: ``dynfreeze run|validate|list-experiments``."""

from __future__ import annotations

import argparse
import json
import sys

from . import experiments
from .errors import CapacityError, ConfigError


def _parser():
    p = argparse.ArgumentParser(prog="dynfreeze", description="Run dynamical-freezing experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute a run configuration")
    r.add_argument("--config", required=True, metavar="PATH")
    r.add_argument("--workers", type=int, default=1, metavar="N")
    r.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    r.add_argument("--seed-override", type=int, metavar="N")
    v = sub.add_parser("validate", help="check a configuration without running it")
    v.add_argument("--config", required=True, metavar="PATH")
    sub.add_parser("list-experiments", help="list experiment kinds")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "list-experiments":
        for name, desc in experiments.EXPERIMENTS.items():
            print(f"{name:20s} {desc}")
        return 0
    if args.command == "validate":
        report = experiments.validate(args.config)
        for line in report.lines():
            print(line)
        if report.ok:
            print("ok" if not report.warnings else "ok (with warnings)")
        return 0 if report.ok else 2
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        outcome = experiments.run(args.config, args.out, args.workers, args.seed_override)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    m = outcome.manifest
    for job in m["jobs"]:
        line = f"{job['kind']} {job['args']}: {job['status']} ({job['wall_time_s']:.2f} s)"
        if job["status"] != "ok":
            line += f" -- {job['error']}"
        print(line)
    print(json.dumps({"out_dir": str(outcome.out_dir), "status": m["status"],
                      "artifacts": len(m["artifacts"])}))
    return outcome.status


if __name__ == "__main__":
    sys.exit(main())
