"""Augmented-Lagrangian (pseudo time-stepping) outer iteration.

Each outer step solves the condensed trace system with the pressure of the
previous step on the right-hand side, reconstructs the new pressure
element by element and stops once the relative pressure increment drops
below a tolerance.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .assembly import (CondensedSystem, ProblemData, assemble_condensed, assemble_rhs,
                       build_trace_space, compute_errors, embed_pressure, pressure_norm,
                       project_pressure, reconstruct_fields, reconstruct_pressure,
                       source_moments)
from .basis import dim_p
from .local import Method
from .mesh import MeshHierarchy, MeshLevel
from .multigrid import (DivergenceError, MGResult, MultigridHierarchy, SmootherConfig,
                        mg_solve)

log = logging.getLogger(__name__)


def default_tolerances(degree: int) -> tuple[float, float]:
    """(eps_tol, rho) used in the reference experiments."""
    return (1e-10, 1e-12) if degree >= 3 else (1e-8, 1e-10)


@dataclass(frozen=True)
class ALConfig:
    """Outer iteration settings.

    Attributes
    ----------
    dt : pseudo time step
    eps_tol : relative pressure increment that ends the iteration
    rho : relative residual tolerance of each inner solve
    max_outer : cap on outer steps
    warm_start : start each inner solve from the previous trace
    nested : start each level from the converged coarser pressure
    mg_maxiter : cap on inner iterations
    """
    dt: float = 2.0
    eps_tol: float = 1e-8
    rho: float = 1e-10
    max_outer: int = 500
    warm_start: bool = True
    nested: bool = False
    mg_maxiter: int = 200

    def __post_init__(self):
        for name in ("dt", "eps_tol", "rho"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer < 1 or self.mg_maxiter < 1:
            raise ValueError("iteration caps must be at least 1")

    @classmethod
    def for_degree(cls, degree: int, dt: float = 2.0, **kw) -> "ALConfig":
        eps, rho = default_tolerances(degree)
        kw.setdefault("eps_tol", eps)
        kw.setdefault("rho", rho)
        return cls(dt=dt, **kw)


@dataclass
class ALState:
    n: int
    lam: np.ndarray
    pressure: np.ndarray  # p^n, (nT, nQ)
    previous: np.ndarray  # p^{n-1}, the pressure that produced lam
    history: list = field(default_factory=list)  # (inner iterations, relative increment)
    converged: bool = False


class DirectSolver:
    """Sparse LU stand-in for the multigrid solver (one 'iteration' per solve)."""

    def __init__(self, system: CondensedSystem):
        self.systems = [system]
        self._lu = splu(system.matrix.tocsc())

    def solve(self, b, rho, x0=None, maxiter=200, telemetry=None) -> MGResult:
        x = self._lu.solve(b) if len(b) else np.zeros(0)
        nb = np.linalg.norm(b)
        res = np.linalg.norm(self.systems[0].matrix @ x - b) / nb if nb else 0.0
        if telemetry is not None:
            telemetry.write(f"1,{res:.6e}\n")
        return MGResult(x, 1, True, [1.0, res])


def _inner_solve(solver, b, rho, x0, maxiter, telemetry) -> MGResult:
    if isinstance(solver, MultigridHierarchy):
        # a warm start that is already below rho would leave the trace stale
        return mg_solve(solver, b, rho, x0=x0, maxiter=maxiter, telemetry=telemetry,
                        min_iter=0 if x0 is None else 1)
    return solver.solve(b, rho, x0=x0, maxiter=maxiter, telemetry=telemetry)


def init_pressure(mesh: MeshLevel, degree: int, p0=None, coarse: MeshLevel | None = None) -> np.ndarray:
    """Initial pressure coefficients on ``mesh``.

    ``p0`` may be None (zero), a callable (element-wise L2 projection) or
    coefficients on ``coarse`` (exact embedding) or on ``mesh`` itself.
    """
    nQ = dim_p(degree)
    if p0 is None:
        return np.zeros((mesh.n_triangles, nQ))
    if callable(p0):
        return project_pressure(mesh, degree, p0)
    p0 = np.asarray(p0, dtype=float)
    if coarse is not None:
        if p0.shape != (coarse.n_triangles, nQ):
            raise ValueError("coarse pressure has the wrong shape")
        if coarse.level != mesh.level - 1:
            raise ValueError("pressure embedding needs consecutive levels")
        return embed_pressure(coarse, mesh, degree, p0)
    if p0.shape != (mesh.n_triangles, nQ):
        raise ValueError("pressure has the wrong shape")
    return p0.copy()


def al_step(state: ALState, config: ALConfig, system: CondensedSystem, solver,
            b0: np.ndarray, fmom: np.ndarray | None, telemetry=None) -> ALState:
    """One outer step; ``b0`` is the pressure-free right-hand side."""
    p_prev = state.pressure
    b = b0 - system.pressure_coupling @ p_prev.ravel() / config.dt
    x0 = state.lam if config.warm_start else None
    res = _inner_solve(solver, b, config.rho, x0, config.mg_maxiter, telemetry)
    if not res.converged:
        raise DivergenceError(
            f"inner solve did not reach rho={config.rho:g} in {res.iterations} iterations "
            f"(outer step {state.n + 1})", res.residuals)
    p_new = reconstruct_pressure(system, res.x, p_prev, fmom)
    mesh = system.space.mesh
    norm = pressure_norm(mesh, p_new)
    diff = pressure_norm(mesh, p_new - p_prev)
    if norm > 0.0:
        inc = diff / norm
        done = inc < config.eps_tol
    else:
        inc = 0.0 if diff == 0.0 else np.inf
        done = diff == 0.0
    history = state.history + [(res.iterations, inc)]
    return ALState(state.n + 1, res.x, p_new, p_prev, history, done)


@dataclass
class SolveReport:
    level: int
    degree: int
    dt: float
    method: str
    dofs: int
    n_iter: int
    converged: bool
    mg_iters: list
    increments: list
    errors: dict | None = None
    timings: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    @property
    def max_mg_iters(self) -> int:
        return max(self.mg_iters) if self.mg_iters else 0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["max_mg_iters"] = self.max_mg_iters
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def csv_rows(self, table: str = "solve") -> list:
        """Rows of the long table schema ``table,level,dt,p,quantity,value``."""
        rows = [(table, self.level, self.dt, self.degree, "dofs", self.dofs),
                (table, self.level, self.dt, self.degree, "n_iter", self.n_iter),
                (table, self.level, self.dt, self.degree, "mg_iters_max", self.max_mg_iters)]
        for k, v in (self.errors or {}).items():
            rows.append((table, self.level, self.dt, self.degree, f"err_{k}", v))
        return rows

    def to_csv(self, table: str = "solve") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["table", "level", "dt", "p", "quantity", "value"])
        w.writerows(self.csv_rows(table))
        return buf.getvalue()


def _report(system, config, state, errors, timings, settings):
    its = [h[0] for h in state.history]
    incs = [float(h[1]) for h in state.history]
    return SolveReport(system.level, system.degree, config.dt, str(system.method),
                       system.space.n_unknowns, state.n, state.converged, its, incs,
                       errors, timings, settings)


def al_solve(solver, config: ALConfig, data: ProblemData, p0=None, coarse: MeshLevel | None = None,
             exact=None, telemetry=None) -> tuple[SolveReport, ALState]:
    """Run outer steps on the finest level of ``solver`` until the relative
    pressure increment is below ``config.eps_tol``.

    ``solver`` is a :class:`MultigridHierarchy` or a :class:`DirectSolver`.
    ``exact`` is an object with ``u``, ``p`` and ``L`` callables; when given,
    the report carries L2 errors.  A report with ``converged=False`` is
    returned when ``max_outer`` is reached.  Inner divergence raises
    :class:`DivergenceError` with the partial report attached as ``report``.
    """
    t0 = time.perf_counter()
    hsys = solver.systems[-1]
    space = build_trace_space(hsys.space.mesh, hsys.degree, data.u_D)
    system = dataclasses.replace(hsys, space=space)
    fmom = source_moments(system, data.f)
    b0 = assemble_rhs(system, fmom=fmom, g_N=data.g_N)
    mesh = space.mesh
    p_init = init_pressure(mesh, system.degree, p0, coarse)
    state = ALState(0, np.zeros(space.n_unknowns), p_init, p_init)
    settings = {"warm_start": config.warm_start, "nested": config.nested,
                "eps_tol": config.eps_tol, "rho": config.rho}
    if isinstance(solver, MultigridHierarchy):
        sm = solver.smoother
        settings["smoother"] = f"{sm.kind}:{sm.order}" if sm.kind == "gauss_seidel" else f"jacobi:{sm.omega:g}"
        settings["steps"] = sm.steps
    else:
        settings["smoother"] = "direct"
    t1 = time.perf_counter()
    try:
        while not state.converged and state.n < config.max_outer:
            state = al_step(state, config, system, solver, b0, fmom, telemetry)
    except DivergenceError as exc:
        exc.report = _report(system, config, state, None,
                             {"setup": t1 - t0, "outer": time.perf_counter() - t1}, settings)
        raise
    t2 = time.perf_counter()
    errors = None
    if exact is not None:
        fields = reconstruct_fields(system, state.lam, state.previous, fmom=fmom)
        e = compute_errors(fields, exact.u, exact.p, exact.L)
        errors = {"u": e.u, "p": e.p, "L": e.L}
    timings = {"setup": t1 - t0, "outer": t2 - t1, "errors": time.perf_counter() - t2}
    if not state.converged:
        log.warning("outer iteration hit max_outer=%d on level %d", config.max_outer, system.level)
    return _report(system, config, state, errors, timings, settings), state


def build_solver_hierarchy(meshes: MeshHierarchy, degree: int, method: Method, dt: float,
                           smoother: SmootherConfig | None, top: int):
    """Multigrid hierarchy on levels 1..top, or a direct solver on ``top`` when
    ``smoother`` is None."""
    meshes.extend_to(top)
    if smoother is None:
        return DirectSolver(assemble_condensed(build_trace_space(meshes[top], degree), method, dt))
    return MultigridHierarchy.build(meshes, degree, method, dt, smoother, top=top)


def solve_sequence(meshes: MeshHierarchy, levels, degree: int, method: Method, config: ALConfig,
                   data: ProblemData, smoother: SmootherConfig | None = None, exact=None,
                   telemetry=None) -> list:
    """:func:`al_solve` on each of ``levels`` (ascending), nesting the initial
    pressure when ``config.nested`` is set.  Solvers are assembled once.

    Returns a list of reports; a level whose inner solve diverges gets the
    partial report (``converged=False``) and later levels still run, starting
    from zero pressure.
    """
    levels = sorted(levels)
    top = levels[-1]
    lo = 1 if config.nested else levels[0]
    t0 = time.perf_counter()
    if smoother is not None:
        full = build_solver_hierarchy(meshes, degree, method, config.dt, smoother, top)
    setup = time.perf_counter() - t0
    reports, prev = [], None
    for lev in range(lo, top + 1):
        if smoother is not None:
            solver = full.truncate(lev)
        else:
            solver = build_solver_hierarchy(meshes, degree, method, config.dt, None, lev)
        coarse = meshes[lev - 1] if (config.nested and prev is not None) else None
        p0 = prev if coarse is not None else None
        try:
            rep, state = al_solve(solver, config, data, p0=p0, coarse=coarse, exact=exact,
                                  telemetry=telemetry)
            prev = state.pressure if rep.converged else None
        except DivergenceError as exc:
            rep, prev = exc.report, None
        rep.timings["hierarchy"] = setup
        log.info("level %d: n_iter=%d max inner=%d", lev, rep.n_iter, rep.max_mg_iters)
        if lev in levels:
            reports.append(rep)
    return reports
