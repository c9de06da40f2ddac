"""Command line: ``hdgmg {eoc,iters,cond,identity,solve} [options]``.

Settings come from an optional ``--config`` file (a path or the name of a
shipped table config) and are overridden by explicit flags.  Exit status:
0 success, 1 failed identity check, 2 solver non-convergence, 3 invalid
configuration.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .harness import (COMMANDS, EXIT_BAD_CONFIG, ConfigError, build_config, format_wide,
                      load_config)
from .mesh import MeshHierarchy, dump

log = logging.getLogger("hdgmg")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdgmg", description=__doc__.splitlines()[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("command", nargs="?", choices=COMMANDS,
                    help="experiment to run (may also be set by the config file)")
    ap.add_argument("--config", help="config file or shipped name: " + ", ".join(harness.CANNED))
    ap.add_argument("--p", help="polynomial degree(s), e.g. 1 or 1,2,3")
    ap.add_argument("--levels", help="mesh levels, e.g. 2-6 or 1,2,3")
    ap.add_argument("--dt", help="pseudo time step(s), e.g. 2,4,8")
    ap.add_argument("--smoother", help="sgs (default), gs, gs_backward or jacobi")
    ap.add_argument("--steps", help="smoothing steps per half cycle, e.g. 4 or 2,4")
    ap.add_argument("--omega", type=float, help="Jacobi damping")
    ap.add_argument("--tau", type=float, help="SFH penalty tau*")
    ap.add_argument("--method", help="SFH, RTH or BDMH")
    ap.add_argument("--nested", nargs="?", const="true", choices=("true", "false", "both"),
                    help="initialize each level from the coarser pressure")
    ap.add_argument("--eps-tol", type=float, dest="eps_tol", help="outer pressure tolerance")
    ap.add_argument("--rho", type=float, help="inner relative residual tolerance")
    ap.add_argument("--max-outer", type=int, dest="max_outer")
    ap.add_argument("--solver", choices=("mg", "direct"))
    ap.add_argument("--problem", choices=("manufactured", "zero"))
    ap.add_argument("--perturb", action="store_const", const=True,
                    help="identity: perturb tau on a non-star face (negative control)")
    ap.add_argument("--dump-mesh", action="store_true", help="solve: also write the mesh dump")
    ap.add_argument("--export-matrix", action="store_true",
                    help="solve: also write the condensed matrix (Matrix Market)")
    ap.add_argument("--out", help="output directory for CSV/JSON files")
    ap.add_argument("--verbose", action="store_const", const=True,
                    help="log progress and stream inner residuals as iter,residual CSV")
    return ap


_OVERRIDES = ("p", "levels", "dt", "smoother", "steps", "omega", "tau", "method", "nested",
              "eps_tol", "rho", "max_outer", "solver", "problem", "perturb", "out", "verbose")


def _telemetry(config, out_dir):
    if not config.verbose:
        return None
    if out_dir is not None:
        fh = open(out_dir / "telemetry.csv", "w")
    else:
        fh = sys.stderr
    fh.write("iter,residual\n")
    return fh


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_config(args.config) if args.config else {}
        overrides = {k: getattr(args, k) for k in _OVERRIDES}
        if args.command:
            overrides["command"] = args.command
        config = build_config(settings, overrides)
        if config.command is None:
            raise ConfigError("no command given")
    except ConfigError as exc:
        print(f"hdgmg: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG

    logging.basicConfig(level=logging.INFO if config.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = Path(config.out) if config.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    telemetry = _telemetry(config, out_dir)
    meshes = MeshHierarchy.build(1)
    try:
        if config.command == "eoc":
            table, status = harness.cmd_eoc(config, telemetry, meshes)
        elif config.command == "iters":
            table, status = harness.cmd_iters(config, telemetry, meshes)
        elif config.command == "cond":
            table, status = harness.cmd_cond(config, meshes)
        elif config.command == "identity":
            table, status = harness.cmd_identity(config, meshes)
        else:
            report, table, status = harness.cmd_solve(config, telemetry, meshes)
            if out_dir is not None:
                report.to_json(out_dir / "solve_report.json")
                level = report.level
                if args.dump_mesh:
                    (out_dir / f"mesh_level{level}.txt").write_text(dump(meshes[level]))
                if args.export_matrix:
                    from .assembly import assemble_condensed, build_trace_space
                    from .local import parse_method
                    sysm = assemble_condensed(build_trace_space(meshes[level], report.degree),
                                              parse_method(config.method, config.tau), report.dt)
                    sysm.export(out_dir / f"matrix_level{level}.mtx")
            else:
                print(report.to_json())
    finally:
        if telemetry is not None and telemetry is not sys.stderr:
            telemetry.close()

    print(format_wide(table), end="")
    if out_dir is not None:
        path = table.write(out_dir)
        print(f"wrote {path}")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
