"""Command-line front end: run a configured displacement and write CSV output.

Exit codes: 0 on success, 2 for configuration problems, 3 for solver
failures (including detected instability), 4 for a violated per-step
invariant when ``--check-invariants`` is active.
"""

from __future__ import annotations

import argparse
import dataclasses
import pathlib
import sys
import time

from . import field_io
from .errors import ConfigError, HhoflowError, InvariantViolationError
from .simulator import MeshSpec, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INVARIANT = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simulate",
        description="Solve one miscible-displacement problem from a config file.",
    )
    parser.add_argument("--config", required=True, help="key = value run description")
    parser.add_argument("--mesh", help="polygonal mesh file overriding the config's mesh")
    parser.add_argument("--out", help="directory to fill with CSV outputs")
    parser.add_argument(
        "--check-invariants",
        action="store_true",
        help="abort if any per-step conservation or energy check fails",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = field_io.read_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.mesh is not None:
        config = dataclasses.replace(config, mesh=MeshSpec(kind="file", path=args.mesh))

    started = time.perf_counter()
    try:
        result = run(config, check_invariants=args.check_invariants)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolationError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except HhoflowError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    wall = time.perf_counter() - started

    report = result.report
    if args.out is not None:
        out = pathlib.Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        field_io.write_mesh(result.mesh, out / "mesh.txt")
        field_io.write_recovery_series(report, out / "recovery.csv")
        field_io.write_diagnostics_csv(report, out / "diagnostics.csv")
        field_io.write_field_csv(result.cspace, result.concentration,
                                 out / "concentration_final.csv")
        field_io.write_field_csv(result.pspace, result.pressure.field,
                                 out / "pressure_final.csv")
        for step, snap in result.snapshots:
            field_io.write_field_csv(result.cspace, snap,
                                     out / f"concentration_step{step:05d}.csv")

    final_t, final_recovery = report.recovery[-1]
    print(
        f"{report.n_steps} steps of {report.dt} days ({report.stepper}), "
        f"{wall:.1f} s wall"
    )
    print(f"recovery at t = {final_t} days: {100.0 * final_recovery:.3f}% of pore volume")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
