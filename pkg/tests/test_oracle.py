"""Condensed solve plus reconstruction against the monolithic direct solve."""
from dataclasses import replace

import numpy as np
import pytest
from scipy.sparse.linalg import spsolve

from hdgmg.assembly import (assemble_condensed, assemble_rhs, build_trace_space, project_pressure,
                            reconstruct_fields)
from hdgmg.lagrangian import ALConfig, DirectSolver, al_solve
from hdgmg.local import SFH
from hdgmg.problem import ManufacturedProblem, pressure

from oracle import MonolithicSFH


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def condensed_solve(mesh, degree, tau, dt, data, m):
    space = build_trace_space(mesh, degree, data.u_D)
    sysm = assemble_condensed(space, SFH(tau), dt)
    b = assemble_rhs(sysm, f=data.f, p_prev=m, g_N=data.g_N)
    lam = spsolve(sysm.matrix.tocsc(), b)
    fields = reconstruct_fields(sysm, lam, p_prev=m, f=data.f)
    return fields, space.full_trace(lam)


@pytest.mark.parametrize("level", [1, 2])
@pytest.mark.parametrize("degree", [1, 2])
@pytest.mark.parametrize("tau", [1.0, 10.0])
def test_condensed_matches_monolithic(meshes, level, degree, tau):
    mesh = meshes[level]
    data = ManufacturedProblem().data()
    m = 0.7 * project_pressure(mesh, degree, pressure)
    fields, lam = condensed_solve(mesh, degree, tau, 2.0, data, m)
    L, u, p, lam_ref = MonolithicSFH(mesh, degree, tau=tau, dt=2.0).solve(data.f, data.u_D, data.g_N, m=m)
    assert _rel(fields.L, L) < 1e-9
    assert _rel(fields.u, u) < 1e-9
    assert _rel(fields.p, p) < 1e-9
    assert _rel(lam, lam_ref) < 1e-9


def test_converged_outer_iteration_solves_stationary_stokes(meshes):
    """At convergence the pseudo-time term vanishes and the stationary system holds."""
    mesh = meshes[2]
    data = ManufacturedProblem().data()
    space = build_trace_space(mesh, 1)
    solver = DirectSolver(assemble_condensed(space, SFH(), 2.0))
    cfg = ALConfig(dt=2.0, eps_tol=1e-12, rho=1e-13, max_outer=1000)
    report, state = al_solve(solver, cfg, data)
    assert report.converged
    L, u, p, _ = MonolithicSFH(mesh, 1, dt=None).solve(data.f, data.u_D, data.g_N)
    sysd = replace(solver.systems[0], space=build_trace_space(mesh, 1, data.u_D))
    fields = reconstruct_fields(sysd, state.lam, p_prev=state.previous, f=data.f)
    assert _rel(fields.u, u) < 1e-8
    assert _rel(fields.L, L) < 1e-8
    assert _rel(fields.p, p) < 1e-8
