"""Experiment drivers behind the command line: convergence orders, iteration
counts, condition numbers and the method-identity check.

Every driver returns a :class:`ResultTable` in the long CSV layout
``table,level,dt,p,quantity,value`` plus an exit status.
"""
from __future__ import annotations

import configparser
import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .assembly import assemble_condensed, build_trace_space, estimate_condition_number
from .lagrangian import ALConfig, al_solve, build_solver_hierarchy, solve_sequence
from .local import BDMH, RTH, SFH, parse_method
from .mesh import MeshHierarchy
from .multigrid import DivergenceError, parse_smoother
from .problem import ManufacturedProblem, zero_problem

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_NONCONVERGED = 2
EXIT_BAD_CONFIG = 3

COMMANDS = ("eoc", "iters", "cond", "identity", "solve")
CANNED = ("table_n_iter", "table_steps_p1", "table_steps_p23", "table_eoc")
DASH_CAP = 100  # wide tables print "--" above this many inner iterations
IDENTITY_TOL = 1e-10


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def parse_int_list(text) -> tuple:
    """``"2-6"`` -> (2,...,6); ``"1,3"`` -> (1, 3); an int is returned as a 1-tuple."""
    if isinstance(text, int):
        return (text,)
    out = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError(f"empty list {text!r}")
    return tuple(out)


def parse_float_list(text) -> tuple:
    if isinstance(text, (int, float)):
        return (float(text),)
    return tuple(float(x) for x in str(text).replace(" ", "").split(",") if x)


def _parse_bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    """All knobs of one harness run.

    ``levels`` lists the mesh levels to report; ``level_overrides`` maps a
    degree to its own level list (used to keep p = 3 at desk scale).
    ``nested`` is ``"false"``, ``"true"`` or ``"both"``.  ``eps_tol`` and
    ``rho`` default per degree when left as None.
    """
    command: str | None = None
    table: str = "custom"
    degrees: tuple = (1,)
    levels: tuple = (1, 2, 3, 4)
    level_overrides: dict = field(default_factory=dict)
    dts: tuple = (2.0,)
    smoother: str = "sgs"
    steps: tuple = (4,)
    omega: float = 2.0 / 3.0
    tau: float = 1.0
    method: str = "SFH"
    nested: str = "false"
    eps_tol: float | None = None
    rho: float | None = None
    max_outer: int = 500
    mg_maxiter: int = 200
    warm_start: bool = True
    solver: str = "mg"
    problem: str = "manufactured"
    perturb: bool = False
    out: str | None = None
    verbose: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.command is not None and self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not self.degrees or any(not 1 <= p <= 4 for p in self.degrees):
            raise ConfigError(f"degrees must lie in 1..4, got {self.degrees}")
        for lv in [self.levels, *self.level_overrides.values()]:
            if not lv or min(lv) < 1 or max(lv) > 8:
                raise ConfigError(f"levels must lie in 1..8, got {lv}")
        if not self.dts or any(not (dt > 0 and math.isfinite(dt)) for dt in self.dts):
            raise ConfigError("dt values must be positive")
        if not self.steps or min(self.steps) < 1:
            raise ConfigError("smoothing steps must be at least 1")
        if not 0.0 < self.omega <= 1.0:
            raise ConfigError("omega must lie in (0, 1]")
        if self.nested not in ("false", "true", "both"):
            raise ConfigError("nested must be false, true or both")
        if self.solver not in ("mg", "direct"):
            raise ConfigError("solver must be mg or direct")
        if self.problem not in ("manufactured", "zero"):
            raise ConfigError("problem must be manufactured or zero")
        for name in ("eps_tol", "rho"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_outer < 1 or self.mg_maxiter < 1:
            raise ConfigError("iteration caps must be at least 1")
        try:
            parse_smoother(self.smoother, 1, self.omega)
            parse_method(self.method, self.tau)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def levels_for(self, degree: int) -> tuple:
        return tuple(sorted(self.level_overrides.get(degree, self.levels)))

    def nested_modes(self) -> list:
        return {"false": [False], "true": [True], "both": [False, True]}[self.nested]

    def al_config(self, degree: int, dt: float, nested: bool) -> ALConfig:
        kw = dict(max_outer=self.max_outer, warm_start=self.warm_start, nested=nested,
                  mg_maxiter=self.mg_maxiter)
        if self.eps_tol is not None:
            kw["eps_tol"] = self.eps_tol
        if self.rho is not None:
            kw["rho"] = self.rho
        return ALConfig.for_degree(degree, dt, **kw)

    def smoother_config(self, steps: int):
        if self.solver == "direct":
            return None
        return parse_smoother(self.smoother, steps, self.omega)


_KEYS = {
    "command": str, "table": str, "p": parse_int_list, "degrees": parse_int_list,
    "levels": parse_int_list, "dt": parse_float_list, "smoother": str, "steps": parse_int_list,
    "omega": float, "tau": float, "method": str, "nested": str, "eps_tol": float, "rho": float,
    "max_outer": int, "mg_maxiter": int, "warm_start": _parse_bool, "solver": str,
    "problem": str, "perturb": _parse_bool, "out": str, "verbose": _parse_bool,
}
_RENAME = {"p": "degrees", "dt": "dts"}


def resolve_config_path(name: str) -> Path:
    """A file path, or the name of a shipped config (``table_eoc`` etc.)."""
    path = Path(name)
    if path.is_file():
        return path
    stem = path.stem if path.suffix == ".ini" else name
    shipped = resources.files("hdgmg") / "configs" / f"{stem}.ini"
    if shipped.is_file():
        return Path(str(shipped))
    raise ConfigError(f"config {name!r} not found (shipped: {', '.join(CANNED)})")


def load_config(name: str) -> dict:
    """Flat ``key = value`` settings from the ``[experiment]`` section."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(resolve_config_path(name).read_text())
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {name!r}: {exc}") from exc
    if "experiment" not in parser:
        raise ConfigError(f"config {name!r} has no [experiment] section")
    return dict(parser["experiment"])


def build_config(settings: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Merge file settings and CLI overrides (raw strings or values) into a
    validated :class:`ExperimentConfig`."""
    merged = dict(settings)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    kw, lv = {}, {}
    for key, raw in merged.items():
        key = key.strip().lower()
        try:
            if key.startswith("levels_p"):
                lv[int(key[len("levels_p"):])] = parse_int_list(raw)
                continue
            if key not in _KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            conv = _KEYS[key]
            val = raw if (not isinstance(raw, str) and conv is not str) else conv(raw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        name = _RENAME.get(key, key)
        if name == "nested" and isinstance(val, bool):
            val = "true" if val else "false"
        if name == "nested":
            val = str(val).lower()
        if name in ("degrees", "levels", "steps") and isinstance(val, int):
            val = (val,)
        if name == "dts" and isinstance(val, (int, float)):
            val = (float(val),)
        kw[name] = val
    kw["level_overrides"] = lv
    return ExperimentConfig(**kw).validate()


@dataclass
class ResultTable:
    """Long-format result rows ``(table, level, dt, p, quantity, value)``."""
    name: str
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def add(self, level, dt, p, quantity, value):
        self.rows.append((self.name, int(level), float(dt), int(p), quantity, value))

    def value(self, level, dt, p, quantity):
        for r in self.rows:
            if r[1:5] == (level, float(dt), p, quantity):
                return r[5]
        raise KeyError((level, dt, p, quantity))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["table", "level", "dt", "p", "quantity", "value"])
        for r in self.rows:
            v = r[5]
            w.writerow(list(r[:5]) + [repr(v) if isinstance(v, float) else v])
        return buf.getvalue()

    def write(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        path = d / f"{self.name}.csv"
        path.write_text(self.to_csv())
        return path

    def quantities(self) -> list:
        seen = []
        for r in self.rows:
            if r[4] not in seen:
                seen.append(r[4])
        return seen


def _cell(v, quantity=""):
    if isinstance(v, float):
        if v != v:
            return "nan"
        if abs(v) >= 1e4 or (v != 0 and abs(v) < 1e-2):
            return f"{v:.3e}"
        return f"{v:.2f}"
    if quantity.startswith("mg_iters") and isinstance(v, (int, np.integer)) and v > DASH_CAP:
        return "--"
    return str(v)


def format_wide(table: ResultTable, quantities=None) -> str:
    """Wide rendering: one block per (p, quantity), rows = dt, columns = level."""
    lines = []
    qs = quantities or table.quantities()
    for p in sorted({r[3] for r in table.rows}):
        for q in qs:
            sel = [r for r in table.rows if r[3] == p and r[4] == q]
            if not sel:
                continue
            levels = sorted({r[1] for r in sel})
            dts = sorted({r[2] for r in sel})
            lines.append(f"{table.name}  p={p}  {q}")
            lines.append("  dt \\ level " + "".join(f"{lv:>11d}" for lv in levels))
            for dt in dts:
                vals = {r[1]: r[5] for r in sel if r[2] == dt}
                lines.append(f"  {dt:>10g} " + "".join(f"{_cell(vals[lv], q) if lv in vals else '':>11}"
                                                      for lv in levels))
            lines.append("")
    lines.extend(table.notes)
    return "\n".join(lines).rstrip() + "\n"


def eoc(errors_coarse: float, errors_fine: float) -> float:
    """log2 of the ratio of consecutive errors."""
    if errors_fine <= 0.0 or errors_coarse <= 0.0:
        return float("nan")
    return math.log(errors_coarse / errors_fine) / math.log(2.0)


def _problem(config):
    if config.problem == "zero":
        return zero_problem(), None
    prob = ManufacturedProblem()
    return prob.data(), prob


def cmd_eoc(config: ExperimentConfig, telemetry=None, meshes: MeshHierarchy | None = None):
    """L2 errors of (u, p, L) and their EOC on every requested level."""
    table = ResultTable(f"{config.table}" if config.table != "custom" else "eoc")
    data, exact = _problem(config)
    method = parse_method(config.method, config.tau)
    meshes = meshes or MeshHierarchy.build(1)
    status = EXIT_OK
    for p in config.degrees:
        levels = config.levels_for(p)
        for dt in config.dts:
            alc = config.al_config(p, dt, config.nested_modes()[-1])
            reps = solve_sequence(meshes, range(1, max(levels) + 1), p, method, alc, data,
                                  config.smoother_config(config.steps[-1]), exact=exact,
                                  telemetry=telemetry)
            prev = None
            for rep in reps:
                if not rep.converged or rep.errors is None:
                    status = EXIT_NONCONVERGED
                    table.notes.append(f"level {rep.level} p={p} dt={dt:g}: not converged")
                    if rep.level in levels:
                        table.add(rep.level, dt, p, "status", "nonconverged")
                    prev = None
                    continue
                if rep.level in levels:
                    table.add(rep.level, dt, p, "dofs", rep.dofs)
                    table.add(rep.level, dt, p, "n_iter", rep.n_iter)
                    for k in ("u", "p", "L"):
                        table.add(rep.level, dt, p, f"err_{k}", rep.errors[k])
                    if prev is not None:
                        for k in ("u", "p", "L"):
                            table.add(rep.level, dt, p, f"eoc_{k}", eoc(prev[k], rep.errors[k]))
                prev = rep.errors
    return table, status


def cmd_iters(config: ExperimentConfig, telemetry=None, meshes: MeshHierarchy | None = None):
    """Outer counts (``n_iter``) and the largest inner count per outer run
    (``mg_iters``) for each (p, dt, m, nested) combination."""
    table = ResultTable(f"{config.table}" if config.table != "custom" else "iters")
    data, exact = _problem(config)
    method = parse_method(config.method, config.tau)
    meshes = meshes or MeshHierarchy.build(1)
    status = EXIT_OK
    multi_m = len(config.steps) > 1
    multi_n = len(config.nested_modes()) > 1
    for p in config.degrees:
        levels = config.levels_for(p)
        for dt in config.dts:
            for m in config.steps:
                for nested in config.nested_modes():
                    suffix = (f"_m{m}" if multi_m else "") + ("_nested" if nested and multi_n else "")
                    alc = config.al_config(p, dt, nested)
                    reps = solve_sequence(meshes, levels, p, method, alc, data,
                                          config.smoother_config(m), telemetry=telemetry)
                    first = m == config.steps[0] and nested == config.nested_modes()[0]
                    for rep in reps:
                        if first:
                            table.add(rep.level, dt, p, "dofs", rep.dofs)
                        diverged = not rep.converged and rep.n_iter < alc.max_outer
                        if not rep.converged and not diverged:
                            status = EXIT_NONCONVERGED
                        table.add(rep.level, dt, p, f"n_iter{suffix}",
                                  rep.n_iter if rep.converged else "--")
                        table.add(rep.level, dt, p, f"mg_iters{suffix}",
                                  "--" if diverged else rep.max_mg_iters)
    table.notes.append(f"mg_iters: largest inner count over the outer steps; '--' above {DASH_CAP} "
                       f"or beyond the cap of {config.mg_maxiter}")
    return table, status


def cmd_cond(config: ExperimentConfig, meshes: MeshHierarchy | None = None):
    """Spectral condition number of the condensed matrix per (level, dt)."""
    table = ResultTable(f"{config.table}" if config.table != "custom" else "cond")
    method = parse_method(config.method, config.tau)
    meshes = meshes or MeshHierarchy.build(1)
    for p in config.degrees:
        levels = config.levels_for(p)
        meshes.extend_to(max(levels))
        for dt in config.dts:
            prev = None
            for lev in levels:
                system = assemble_condensed(build_trace_space(meshes[lev], p), method, dt)
                est = estimate_condition_number(system.matrix)
                table.add(lev, dt, p, "lambda_min", est.lambda_min)
                table.add(lev, dt, p, "lambda_max", est.lambda_max)
                table.add(lev, dt, p, "kappa", est.kappa)
                table.add(lev, dt, p, "converged", int(est.converged))
                if prev is not None and prev[0] == lev - 1:
                    table.add(lev, dt, p, "ratio", est.kappa / prev[1])
                prev = (lev, est.kappa)
    return table, EXIT_OK


def identity_discrepancies(mesh, degree: int, dt: float, perturb: bool = False) -> dict:
    """Max relative entry difference of each variant against SFH(tau*=1).

    With ``perturb`` the SFH(tau*=10) matrix gets an extra penalty on a face
    other than the star face, which must break the identity.
    """
    space = build_trace_space(mesh, degree)
    ref = assemble_condensed(space, SFH(1.0), dt).matrix
    scale = abs(ref).max()
    face_tau = None
    if perturb:
        face_tau = np.zeros((mesh.n_triangles, 3))
        face_tau[np.arange(mesh.n_triangles), mesh.star] = 10.0
        face_tau[np.arange(mesh.n_triangles), (mesh.star + 1) % 3] = 0.5
    out = {}
    for name, method, ft in (("sfh10", SFH(10.0), face_tau), ("bdmh", BDMH(), None), ("rth", RTH(), None)):
        other = assemble_condensed(space, method, dt, face_tau=ft).matrix
        out[name] = float(abs(other - ref).max() / scale)
    return out


def cmd_identity(config: ExperimentConfig, meshes: MeshHierarchy | None = None):
    table = ResultTable(f"{config.table}" if config.table != "custom" else "identity")
    meshes = meshes or MeshHierarchy.build(1)
    ok = True
    for p in config.degrees:
        levels = config.levels_for(p)
        meshes.extend_to(max(levels))
        for dt in config.dts:
            for lev in levels:
                d = identity_discrepancies(meshes[lev], p, dt, config.perturb)
                for k, v in d.items():
                    table.add(lev, dt, p, f"diff_{k}", v)
                worst = max(d.values())
                table.add(lev, dt, p, "max_diff", worst)
                table.add(lev, dt, p, "pass", int(worst < IDENTITY_TOL))
                ok &= worst < IDENTITY_TOL
    table.notes.append(f"identity {'PASS' if ok else 'FAIL'} (tolerance {IDENTITY_TOL:g})")
    return table, EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_solve(config: ExperimentConfig, telemetry=None, meshes: MeshHierarchy | None = None):
    """One outer solve on the finest requested level; returns (report, table, status)."""
    p = config.degrees[0]
    dt = config.dts[0]
    level = max(config.levels_for(p))
    nested = config.nested_modes()[-1]
    data, exact = _problem(config)
    method = parse_method(config.method, config.tau)
    meshes = meshes or MeshHierarchy.build(1)
    alc = config.al_config(p, dt, nested)
    table = ResultTable("solve")
    if nested:
        reps = solve_sequence(meshes, [level], p, method, alc, data,
                              config.smoother_config(config.steps[-1]), exact=exact,
                              telemetry=telemetry)
        rep = reps[-1]
    else:
        solver = build_solver_hierarchy(meshes, p, method, dt, config.smoother_config(config.steps[-1]), level)
        try:
            rep, _ = al_solve(solver, alc, data, exact=exact, telemetry=telemetry)
        except DivergenceError as exc:
            rep = exc.report
    for row in rep.csv_rows("solve"):
        table.add(*row[1:])
    status = EXIT_OK if rep.converged else EXIT_NONCONVERGED
    return rep, table, status


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **kw).validate()
