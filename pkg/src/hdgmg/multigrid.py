"""Homogeneous geometric multigrid for the condensed trace system.

Every level carries its own rediscretized condensed matrix.  Coarse-to-fine
transfer is the injection that linearly interpolates averaged vertex values
of the coarse skeleton function on each fine face; restriction is its
transpose.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import CondensedSystem, TraceSpace, assemble_condensed, build_trace_space
from .basis import EdgeBasis
from .local import Method
from .mesh import DIRICHLET, MeshHierarchy

log = logging.getLogger(__name__)


def _on_dirichlet(points):
    x, y = points[:, 0], points[:, 1]
    return (x == 0.0) | (x == 1.0) | (y == 1.0)


def build_injection(coarse: TraceSpace, fine: TraceSpace) -> sp.csr_matrix:
    """Injection from the coarse to the fine homogeneous trace space.

    The coarse skeleton function is evaluated at both endpoints of every fine
    face (averaged over the coarse faces meeting at a coarse vertex, zero on
    the Dirichlet boundary) and the fine trace is the linear interpolant of
    these two values.  Higher edge modes are zero.
    """
    cm, fm = coarse.mesh, fine.mesh
    if fm.level != cm.level + 1 or fine.degree != coarse.degree:
        raise ValueError("injection needs consecutive levels of equal degree")
    if fm.parent is None or cm.n_vertices > fm.n_vertices:
        raise ValueError("fine mesh is not a refinement of the coarse mesh")
    deg = coarse.degree
    nb = deg + 1
    ends = EdgeBasis(deg).values(np.array([0.0, 0.5, 1.0]))  # rows: s = 0, 1/2, 1
    nvc = cm.n_vertices

    # point functional rows (per velocity component) keyed by fine vertex id:
    # list of (coarse face, basis values at the point, weight)
    vertex_faces = [[] for _ in range(nvc)]
    for f, (a, b) in enumerate(cm.faces):
        if cm.face_kind[f] != DIRICHLET:
            vertex_faces[a].append((f, 0))
            vertex_faces[b].append((f, 2))
    dirichlet_pt = _on_dirichlet(fm.vertices)

    def point_terms(v):
        if dirichlet_pt[v]:
            return []
        if v < nvc:
            fs = vertex_faces[v]
            return [(f, ends[k], 1.0 / len(fs)) for f, k in fs]
        f = v - nvc
        if coarse.face_slot[f] < 0:
            return []
        return [(f, ends[1], 1.0)]

    rows, cols, vals = [], [], []
    c3 = 1.0 / (2.0 * np.sqrt(3.0))
    bs = 2 * nb
    for ff in fine.unknown_faces:
        a, b = fm.faces[ff]
        fbase = fine.face_slot[ff] * bs
        # mode 0: (va + vb)/2, mode 1: (vb - va)/(2 sqrt 3)
        for v, w0, w1 in ((a, 0.5, -c3), (b, 0.5, c3)):
            for f, bvals, wt in point_terms(v):
                cbase = coarse.face_slot[f] * bs
                for comp in range(2):
                    for j in range(nb):
                        coef = wt * bvals[j]
                        rows += [fbase + comp * nb, fbase + comp * nb + 1]
                        cols += [cbase + comp * nb + j] * 2
                        vals += [w0 * coef, w1 * coef]
    I = sp.coo_matrix((vals, (rows, cols)), shape=(fine.n_unknowns, coarse.n_unknowns)).tocsr()
    I.sum_duplicates()
    I.eliminate_zeros()
    return I


@dataclass(frozen=True)
class SmootherConfig:
    """Block relaxation with one block per face (size 2(p+1)).

    ``kind`` is ``"jacobi"`` or ``"gauss_seidel"``; ``order`` applies to
    Gauss-Seidel: ``symmetric`` (a forward then a backward sweep per step,
    the default), ``forward`` (ascending face order) or ``backward``.
    ``steps`` is the number of smoothing steps before and after the coarse
    correction.  Post-smoothing uses the reversed order, so every choice
    gives a symmetric V-cycle.
    """
    kind: str = "gauss_seidel"
    steps: int = 4
    omega: float = 2.0 / 3.0
    order: str = "symmetric"

    def __post_init__(self):
        if self.kind not in ("jacobi", "gauss_seidel"):
            raise ValueError(f"unknown smoother {self.kind!r}")
        if not 0.0 < self.omega <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.steps < 1:
            raise ValueError("need at least one smoothing step")
        if self.order not in ("forward", "backward", "symmetric"):
            raise ValueError(f"unknown sweep order {self.order!r}")


def parse_smoother(name: str, steps: int, omega: float = 2.0 / 3.0) -> SmootherConfig:
    name = name.lower().replace("-", "_")
    table = {
        "jacobi": ("jacobi", "forward"),
        "gs": ("gauss_seidel", "forward"),
        "gauss_seidel": ("gauss_seidel", "forward"),
        "sgs": ("gauss_seidel", "symmetric"),
        "symmetric_gs": ("gauss_seidel", "symmetric"),
        "forward_gs": ("gauss_seidel", "forward"),
        "gs_forward": ("gauss_seidel", "forward"),
        "backward_gs": ("gauss_seidel", "backward"),
        "gs_backward": ("gauss_seidel", "backward"),
    }
    if name not in table:
        raise ValueError(f"unknown smoother {name!r}")
    kind, order = table[name]
    return SmootherConfig(kind, steps, omega, order)


class BlockSmoother:
    """Precomputed block Jacobi / block Gauss-Seidel sweeps for one matrix."""

    def __init__(self, A: sp.csr_matrix, block_size: int, config: SmootherConfig):
        self.A = A.tocsr()
        self.config = config
        n = A.shape[0]
        coo = self.A.tocoo()
        rb, cb = coo.row // block_size, coo.col // block_size
        if config.kind == "jacobi":
            d = rb == cb
            nblk = n // block_size
            dense = np.zeros((nblk, block_size, block_size))
            loc_r, loc_c = coo.row[d] % block_size, coo.col[d] % block_size
            dense[rb[d], loc_r, loc_c] = coo.data[d]
            try:
                inv = np.linalg.inv(dense)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError("singular diagonal block in smoother") from exc
            self.Dinv = sp.block_diag(list(inv), format="csr") if nblk else sp.csr_matrix((0, 0))
        else:
            self._lower = self._factor(coo, rb >= cb, n)
            self._upper = self._factor(coo, rb <= cb, n)

    @staticmethod
    def _factor(coo, mask, n):
        T = sp.csc_matrix((coo.data[mask], (coo.row[mask], coo.col[mask])), shape=(n, n))
        # natural ordering keeps the block-triangular structure, so the factor has no fill
        lu = splu(T, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                  options=dict(SymmetricMode=True))
        if np.any(lu.U.diagonal() == 0.0):
            raise np.linalg.LinAlgError("singular diagonal block in smoother")
        return lu

    def _sweep(self, x, b, direction):
        r = b - self.A @ x
        if self.config.kind == "jacobi":
            return x + self.config.omega * (self.Dinv @ r)
        lu = self._lower if direction == "forward" else self._upper
        return x + lu.solve(r)

    def smooth(self, x, b, steps=None, adjoint=False):
        """``steps`` relaxation steps; ``adjoint`` reverses the Gauss-Seidel order."""
        steps = self.config.steps if steps is None else steps
        order = self.config.order
        if adjoint:
            order = {"forward": "backward", "backward": "forward"}.get(order, order)
        for _ in range(steps):
            if order == "symmetric":
                x = self._sweep(x, b, "forward")
                x = self._sweep(x, b, "backward")
            else:
                x = self._sweep(x, b, order)
        return x


def smooth(system, smoother: SmootherConfig, x, b, block_size=None):
    """One sweep of block relaxation on ``system`` (a CondensedSystem or matrix)."""
    A = system.matrix if isinstance(system, CondensedSystem) else sp.csr_matrix(system)
    if block_size is None:
        block_size = system.space.block_size if isinstance(system, CondensedSystem) else 1
    return BlockSmoother(A, block_size, smoother).smooth(np.asarray(x, dtype=float), b, steps=1)


@dataclass
class MultigridHierarchy:
    systems: list  # CondensedSystem per level, index 0 is level 1
    injections: list  # injections[i] maps level i+1 -> i+2 (i.e. systems[i] -> systems[i+1])
    smoother: SmootherConfig
    smoothers: list = field(repr=False)
    coarse_lu: object = field(repr=False)

    @classmethod
    def build(cls, meshes: MeshHierarchy, degree: int, method: Method, dt: float,
              smoother: SmootherConfig, top: int | None = None,
              systems: list | None = None) -> "MultigridHierarchy":
        top = len(meshes) if top is None else top
        meshes.extend_to(top)
        if systems is None:
            systems = []
            for lev in range(1, top + 1):
                space = build_trace_space(meshes[lev], degree)
                systems.append(assemble_condensed(space, method, dt))
        injections = [build_injection(systems[i].space, systems[i + 1].space)
                      for i in range(len(systems) - 1)]
        return cls.from_systems(systems, injections, smoother)

    @classmethod
    def from_systems(cls, systems, injections, smoother):
        smoothers = [None] + [BlockSmoother(s.matrix, s.space.block_size, smoother) for s in systems[1:]]
        coarse = splu(systems[0].matrix.tocsc())
        return cls(systems, injections, smoother, smoothers, coarse)

    @property
    def n_levels(self) -> int:
        return len(self.systems)

    def truncate(self, level: int) -> "MultigridHierarchy":
        """The sub-hierarchy on levels 1..level (shares factorizations)."""
        if not 1 <= level <= self.n_levels:
            raise ValueError(f"level {level} outside 1..{self.n_levels}")
        return MultigridHierarchy(self.systems[:level], self.injections[:level - 1],
                                  self.smoother, self.smoothers[:level], self.coarse_lu)

    def matrix(self, level=None):
        level = self.n_levels if level is None else level
        return self.systems[level - 1].matrix


def v_cycle(mg: MultigridHierarchy, level: int, b: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
    """One V-cycle on ``level`` (1-based) for A x = b starting from ``x``."""
    if level < 1 or level > mg.n_levels:
        raise ValueError(f"level {level} outside 1..{mg.n_levels}")
    x = np.zeros_like(b) if x is None else np.array(x, dtype=float)
    if level == 1:
        return mg.coarse_lu.solve(b) if len(b) else x
    A = mg.systems[level - 1].matrix
    sm = mg.smoothers[level - 1]
    x = sm.smooth(x, b)
    I = mg.injections[level - 2]
    rc = I.T @ (b - A @ x)
    x = x + I @ v_cycle(mg, level - 1, rc)
    return sm.smooth(x, b, adjoint=True)


@dataclass
class MGResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: list


class DivergenceError(RuntimeError):
    """Raised when an iteration exceeds its cap; carries the residual history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def mg_solve(mg: MultigridHierarchy, b: np.ndarray, rho: float, x0: np.ndarray | None = None,
             maxiter: int = 200, telemetry=None, level: int | None = None,
             min_iter: int = 0) -> MGResult:
    """Stationary iteration ``x <- x + B (b - A x)`` with one V-cycle as ``B``.

    Stops once ``||A x - b|| / ||b|| < rho`` and at least ``min_iter`` cycles ran.  ``telemetry`` may be a text
    stream that receives ``iter,residual`` CSV rows.
    """
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    level = mg.n_levels if level is None else level
    A = mg.systems[level - 1].matrix
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return MGResult(np.zeros_like(b), 0, True, [0.0])
    res = np.linalg.norm(A @ x - b) / nb
    history = [res]
    if telemetry is not None:
        telemetry.write(f"0,{res:.6e}\n")
    it = 0
    while (res >= rho or it < min_iter) and it < maxiter:
        x = v_cycle(mg, level, b, x)
        it += 1
        res = np.linalg.norm(A @ x - b) / nb
        history.append(res)
        if telemetry is not None:
            telemetry.write(f"{it},{res:.6e}\n")
    return MGResult(x, it, res < rho, history)


def measure_contraction(mg: MultigridHierarchy, level: int | None = None, cycles: int = 40,
                        seed: int = 0) -> float:
    """Asymptotic A-norm error reduction of one V-cycle (power iteration on
    the error propagator, b = 0)."""
    level = mg.n_levels if level is None else level
    A = mg.systems[level - 1].matrix
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(A.shape[0])
    norm = np.sqrt(e @ (A @ e))
    e /= norm
    zero = np.zeros_like(e)
    factors = []
    for _ in range(cycles):
        e = v_cycle(mg, level, zero, e)
        norm = np.sqrt(e @ (A @ e))
        factors.append(norm)
        if norm == 0.0:
            return 0.0
        e /= norm
    tail = factors[-5:]
    return float(np.exp(np.mean(np.log(tail))))
