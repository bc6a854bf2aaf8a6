"""Command line entry point: ``weakkam <stage> --config <path> [--out <dir>] [--quiet]``.

Exit codes: 0 when every enabled check passes, 1 when some check fails
(the failing names go to stderr and ``failures.json``), 2 for configuration
or module errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from ._accel import backend_name, thread_count
from .config import ConfigError, load_config
from .pipeline import STAGES, PipelineError, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weakkam", description="Discrete weak KAM computations on the flat torus.")
    p.add_argument("stage", choices=STAGES, help="run every stage up to this one")
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", default=None, help="output directory (default: output.directory from the config)")
    p.add_argument("--quiet", action="store_true", help="print nothing on success")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = thread_count()
        cfg = load_config(args.config)
    except (ConfigError, ValueError) as exc:
        print(f"weakkam: {exc}", file=sys.stderr)
        return 2
    out = args.out or cfg["output.directory"]
    start = time.perf_counter()
    try:
        bundle = run_pipeline(cfg, args.stage, out, threads=threads)
    except PipelineError as exc:
        print(f"weakkam: {exc}", file=sys.stderr)
        return 2
    elapsed = time.perf_counter() - start
    failures = [c.as_dict() for c in bundle.failures]
    with open(os.path.join(out, "failures.json"), "w") as fh:
        json.dump(failures, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not args.quiet:
        print(f"weakkam {args.stage}: backend={backend_name()} threads={threads} time={elapsed:.1f}s out={out}")
        for name, value in bundle.c_estimates.items():
            print(f"  c[{name}] = {value + 0.0:.6f}")
        for c in bundle.checks:
            status = "PASS" if c.passed else "FAIL"
            print(f"  {status} {c.name}: value={c.value:.3g} threshold={c.threshold:.3g} slack={c.slack:.3g}")
    if failures:
        print("weakkam: failed checks: " + ", ".join(f["name"] for f in failures), file=sys.stderr)
    return bundle.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
