"""Command-line driver for the convergence, barrier-scan and dynamics experiments.

Usage::

    sphere-fem <experiment> [--config FILE] [--out FILE] [--set key=value ...]

Configuration values are read from the file first, then the dedicated flags
and ``--set`` overrides are applied on top.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys

from . import experiments as ex
from .linsolve import SolverError

log = logging.getLogger("sphere_fem")

RUNNERS = {
    "convergence-space": ex.run_convergence_space,
    "convergence-time": ex.run_convergence_time,
    "barrier-scan": ex.run_barrier_scan,
    "dynamics": ex.run_dynamics,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sphere-fem",
                                description="Saddle-point P1 solver for sphere-valued heat flows.")
    p.add_argument("experiment", choices=ex.EXPERIMENTS)
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--scheme", choices=ex.SCHEMES)
    p.add_argument("--solver", choices=ex.SOLVERS)
    p.add_argument("--renormalize", action="store_true", default=None,
                   help="renormalise the nodal field after every Crank-Nicolson step")
    p.add_argument("--quad-order", type=int, dest="quad_order")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key (repeatable)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _overrides(args) -> dict:
    out = {"experiment": args.experiment}
    for item in args.set:
        if "=" not in item:
            raise ex.ConfigError(f"override {item!r} is not of the form key=value")
        key, val = item.split("=", 1)
        out[key.strip()] = val.strip()
    for key in ("scheme", "solver", "renormalize", "quad_order", "out"):
        val = getattr(args, key)
        if val is not None:
            out[key] = val
    return out


def load_config(args) -> ex.ExperimentConfig:
    ov = _overrides(args)
    if args.config:
        return ex.ExperimentConfig.from_file(args.config, ov)
    return ex.ExperimentConfig.from_mapping(ov)


@contextlib.contextmanager
def _output(path):
    if not path or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if cfg.experiment == "check-mesh":
            header, rows, ok = ex.run_check_mesh(cfg)
            with _output(cfg.out) as fh:
                ex.write_table(fh, header, rows)
            print(f"nonobtuse condition {'holds' if ok else 'violated'}: "
                  f"{len(rows)} positive off-diagonal entries", file=sys.stderr)
            return 0
        header, rows = RUNNERS[cfg.experiment](cfg)
        with _output(cfg.out) as fh:
            ex.write_table(fh, header, rows)
    except (ex.ConfigError, ValueError, SolverError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
