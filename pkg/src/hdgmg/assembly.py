"""Global trace space, condensed system, right-hand sides and reconstruction."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .basis import AffineMap, EdgeBasis, quadrature, reference_scalar_basis
from .local import ElementFields, ElementOperator, Method, Spaces, condense, element_source_moments
from .mesh import DIRICHLET, NEUMANN, MeshLevel

log = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]

CHUNK = 2048


def _zero_vector(x, y):
    return np.zeros(np.shape(x) + (2,))


@dataclass
class ProblemData:
    """Source, Dirichlet and Neumann data; each maps (x, y) to (..., 2).

    The Neumann datum is the boundary traction ``(grad u - p I) n``.
    """
    f: VectorField = _zero_vector
    u_D: VectorField = _zero_vector
    g_N: VectorField = _zero_vector


def element_flips(mesh: MeshLevel) -> np.ndarray:
    """flip[t, k]: the global parameter of local face k runs from local vertex k+2 to k+1."""
    t = mesh.triangles
    return t[:, [1, 2, 0]] > t[:, [2, 0, 1]]


@dataclass
class TraceSpace:
    mesh: MeshLevel
    degree: int
    face_slot: np.ndarray  # (nF,) unknown block index, -1 on Dirichlet faces
    dirichlet_values: np.ndarray  # (nF, 2, p+1), zero off Dirichlet faces

    @property
    def level(self) -> int:
        return self.mesh.level

    @property
    def block_size(self) -> int:
        return 2 * (self.degree + 1)

    @property
    def n_blocks(self) -> int:
        return int((self.face_slot >= 0).sum())

    @property
    def n_unknowns(self) -> int:
        return self.n_blocks * self.block_size

    @property
    def unknown_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_slot >= 0)

    def dof(self, face, component, mode) -> int:
        slot = self.face_slot[face]
        if slot < 0:
            raise KeyError(f"face {face} carries no unknowns")
        return int(slot * self.block_size + component * (self.degree + 1) + mode)

    def element_dofs(self) -> np.ndarray:
        """(nT, nlam) global unknown index of each local trace dof, -1 on Dirichlet faces."""
        nb = self.degree + 1
        slot = self.face_slot[self.mesh.tri_faces]  # (nT, 3)
        local = np.arange(2 * nb)
        idx = slot[:, :, None] * (2 * nb) + local[None, None, :]
        idx = np.where(slot[:, :, None] >= 0, idx, -1)
        return idx.reshape(len(slot), -1)

    def full_trace(self, lam: np.ndarray, with_dirichlet: bool = True) -> np.ndarray:
        """Face-wise coefficients (nF, 2, p+1) from an unknown vector."""
        full = self.dirichlet_values.copy() if with_dirichlet else np.zeros_like(self.dirichlet_values)
        faces = self.unknown_faces
        full[faces] = np.asarray(lam).reshape(len(faces), 2, self.degree + 1)
        return full

    def element_traces(self, lam: np.ndarray, with_dirichlet: bool = True) -> np.ndarray:
        full = self.full_trace(lam, with_dirichlet)
        return full[self.mesh.tri_faces].reshape(self.mesh.n_triangles, -1)

    def face_mass_weights(self) -> np.ndarray:
        """Weight h_F of every unknown (orthonormal edge basis: int_F b_i b_j = h_F delta_ij)."""
        h = self.mesh.face_length[self.unknown_faces]
        return np.repeat(h, self.block_size)


def _face_points(mesh, faces, s):
    a = mesh.vertices[mesh.faces[faces, 0]]
    b = mesh.vertices[mesh.faces[faces, 1]]
    return a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]


def project_to_faces(mesh: MeshLevel, faces, degree: int, func: VectorField) -> np.ndarray:
    """Face-wise L2 projection of a vector field onto [P_p(F)]^2, shape (len(faces), 2, p+1)."""
    rule = quadrature("edge", 2 * degree + 6)
    b = EdgeBasis(degree).values(rule.points)
    x = _face_points(mesh, faces, rule.points)
    val = np.asarray(func(x[..., 0], x[..., 1]), dtype=float)
    return np.einsum("g,fgc,gj->fcj", rule.weights, val, b)


def build_trace_space(mesh: MeshLevel, degree: int, u_D: VectorField | None = None) -> TraceSpace:
    """Unknowns live on interior and Neumann faces; Dirichlet faces carry the
    face-wise L2 projection of ``u_D``."""
    free = mesh.face_kind != DIRICHLET
    slot = np.full(mesh.n_faces, -1, dtype=np.int64)
    slot[free] = np.arange(int(free.sum()))
    values = np.zeros((mesh.n_faces, 2, degree + 1))
    if u_D is not None:
        dfaces = np.flatnonzero(~free)
        values[dfaces] = project_to_faces(mesh, dfaces, degree, u_D)
    return TraceSpace(mesh, degree, slot, values)


def with_dirichlet_data(space: TraceSpace, u_D: VectorField | None) -> TraceSpace:
    return build_trace_space(space.mesh, space.degree, u_D)


def _chunks(n):
    for start in range(0, n, CHUNK):
        yield slice(start, min(start + CHUNK, n))


def _concat_ops(ops):
    if len(ops) == 1:
        return ops[0]
    first = ops[0]
    return ElementOperator(first.method, first.degree, first.dt,
                           *(np.concatenate([getattr(o, name) for o in ops])
                             for name in ("a_local", "map_lambda", "map_f", "map_m", "M_Q")))


def element_operators(mesh: MeshLevel, method: Method, degree: int, dt: float,
                      face_tau=None) -> ElementOperator:
    v = mesh.vertices[mesh.triangles]
    flips = element_flips(mesh)
    ops = [condense(method, degree, dt, v[c], mesh.star[c], flips[c],
                    face_tau=None if face_tau is None else face_tau[c])
           for c in _chunks(mesh.n_triangles)]
    return _concat_ops(ops)


@dataclass
class CondensedSystem:
    """Sparse SPD condensed matrix on the unknown traces plus what is needed
    to build right-hand sides and reconstruct element fields."""
    matrix: sp.csr_matrix
    space: TraceSpace
    method: Method
    dt: float
    ops: ElementOperator = field(repr=False)
    pressure_coupling: sp.csr_matrix = field(repr=False)  # (n, nT*nQ): (m, p^dt mu)

    @property
    def level(self) -> int:
        return self.space.level

    @property
    def degree(self) -> int:
        return self.space.degree

    @property
    def shape(self):
        return self.matrix.shape

    def export(self, path) -> None:
        """Write the matrix in Matrix Market coordinate format (1-based)."""
        scipy.io.mmwrite(str(path), self.matrix.tocoo(), comment=(
            f"level={self.level} degree={self.degree} dt={self.dt} method={self.method}"))


def _scatter_matrix(rows, cols, vals, shape):
    keep = (rows >= 0) & (cols >= 0)
    m = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=shape).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def assemble_condensed(space: TraceSpace, method: Method, dt: float, face_tau=None) -> CondensedSystem:
    """Sum the element condensed matrices over the unknown trace dofs.

    ``face_tau`` optionally overrides the penalty per (triangle, local face).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    mesh = space.mesh
    ops = element_operators(mesh, method, space.degree, dt, face_tau)
    dofs = space.element_dofs()
    nlam = dofs.shape[1]
    rows = np.repeat(dofs, nlam, axis=1).ravel()
    cols = np.tile(dofs, (1, nlam)).ravel()
    n = space.n_unknowns
    A = _scatter_matrix(rows, cols, ops.a_local.ravel(), (n, n))
    A = (0.5 * (A + A.T)).tocsr()
    A.sort_indices()

    spaces = Spaces(space.degree, method)
    # (m, p^dt mu)_T = m^T M_Q X_p[:, mu]
    Xp = ops.map_lambda[:, spaces.p]
    coup = np.einsum("eab,ebj->eja", ops.M_Q, Xp)  # (nT, nlam, nQ)
    nQ = spaces.nQ
    qcols = (np.arange(mesh.n_triangles)[:, None] * nQ + np.arange(nQ)[None, :])
    r = np.repeat(dofs[:, :, None], nQ, axis=2).ravel()
    c = np.repeat(qcols[:, None, :], nlam, axis=1).ravel()
    P = _scatter_matrix(r, c, coup.ravel(), (n, mesh.n_triangles * nQ))
    log.debug("assembled level %d p=%d dt=%g: %d unknowns, nnz=%d",
              space.level, space.degree, dt, n, A.nnz)
    return CondensedSystem(A, space, method, dt, ops, P)


@dataclass
class DiscreteFields:
    """Element coefficients of (L, u, p); rows are triangles."""
    mesh: MeshLevel
    method: Method
    degree: int
    L: np.ndarray
    u: np.ndarray
    p: np.ndarray

    @property
    def spaces(self) -> Spaces:
        return Spaces(self.degree, self.method)


def source_moments(system: CondensedSystem, f: VectorField) -> np.ndarray:
    mesh = system.space.mesh
    v = mesh.vertices[mesh.triangles]
    return np.concatenate([element_source_moments(system.method, system.degree, v[c], f)
                           for c in _chunks(mesh.n_triangles)])


def neumann_vector(space: TraceSpace, g_N: VectorField) -> np.ndarray:
    """<g_N, mu> over the Neumann faces."""
    b = np.zeros(space.n_unknowns)
    faces = np.flatnonzero(space.mesh.face_kind == NEUMANN)
    if len(faces) == 0:
        return b
    coef = project_to_faces(space.mesh, faces, space.degree, g_N)  # (nf, 2, nb) moments / h_F
    coef *= space.mesh.face_length[faces][:, None, None]
    idx = space.face_slot[faces][:, None] * space.block_size + np.arange(space.block_size)
    b[idx.ravel()] += coef.reshape(len(faces), -1).ravel()
    return b


def _scatter_vector(dofs, vals, n):
    keep = dofs >= 0
    return np.bincount(dofs[keep], weights=vals[keep], minlength=n)


def assemble_rhs(system: CondensedSystem, f: VectorField | None = None, p_prev: np.ndarray | None = None,
                 g_N: VectorField | None = None, fmom: np.ndarray | None = None) -> np.ndarray:
    """b[mu] = (f, u^dt mu) - (1/dt)(p_prev, p^dt mu) + <g_N, mu> - a(lam_D, mu).

    ``p_prev`` holds element pressure coefficients (nT, nQ); Dirichlet data
    are taken from ``system.space``.  Precomputed source moments may be
    passed as ``fmom`` instead of ``f``.
    """
    space = system.space
    ops = system.ops
    spaces = Spaces(space.degree, system.method)
    n = space.n_unknowns
    dofs = space.element_dofs()
    b = np.zeros(n)
    if fmom is None and f is not None:
        fmom = source_moments(system, f)
    if fmom is not None:
        Xu = ops.map_lambda[:, spaces.u]
        b += _scatter_vector(dofs.ravel(), np.einsum("ea,eaj->ej", fmom, Xu).ravel(), n)
    if p_prev is not None:
        b -= system.pressure_coupling @ np.asarray(p_prev).ravel() / system.dt
    if g_N is not None:
        b += neumann_vector(space, g_N)
    if np.any(space.dirichlet_values):
        lam_D = space.element_traces(np.zeros(n), with_dirichlet=True)
        b -= _scatter_vector(dofs.ravel(), np.einsum("eij,ej->ei", ops.a_local, lam_D).ravel(), n)
    return b


def reconstruct_fields(system: CondensedSystem, lam: np.ndarray, p_prev: np.ndarray | None = None,
                       f: VectorField | None = None, fmom: np.ndarray | None = None) -> DiscreteFields:
    """(L, u, p) = map_lambda lam|_T + map_m p_prev|_T + map_f fmom|_T on every element."""
    space = system.space
    ops = system.ops
    spaces = Spaces(space.degree, system.method)
    x = np.einsum("eij,ej->ei", ops.map_lambda, space.element_traces(lam))
    if p_prev is not None:
        x += np.einsum("eij,ej->ei", ops.map_m, np.asarray(p_prev))
    if fmom is None and f is not None:
        fmom = source_moments(system, f)
    if fmom is not None:
        x += np.einsum("eij,ej->ei", ops.map_f, fmom)
    return DiscreteFields(space.mesh, system.method, space.degree,
                          x[:, spaces.L], x[:, spaces.u], x[:, spaces.p])


def reconstruct_pressure(system: CondensedSystem, lam, p_prev, fmom) -> np.ndarray:
    """Only the pressure block of :func:`reconstruct_fields`."""
    ops = system.ops
    sl = Spaces(system.degree, system.method).p
    p = np.einsum("eij,ej->ei", ops.map_lambda[:, sl], system.space.element_traces(lam))
    p += np.einsum("eij,ej->ei", ops.map_m[:, sl], p_prev)
    if fmom is not None:
        p += np.einsum("eij,ej->ei", ops.map_f[:, sl], fmom)
    return p


def pressure_norm(mesh: MeshLevel, p: np.ndarray) -> float:
    """L2 norm of an element-wise P_p field (the reference basis is orthonormal)."""
    return float(np.sqrt(np.sum(np.abs(mesh.signed_area)[:, None] * 2.0 * p * p)))


def evaluate_fields(fields: DiscreteFields, xi: np.ndarray, elements=slice(None)):
    """Values of (L, u, p) at reference points ``xi`` (nq, 2) of the given elements.

    Returns physical points (nE, nq, 2), L (nE, nq, 2, 2), u (nE, nq, 2), p (nE, nq).
    """
    mesh = fields.mesh
    geom = AffineMap(mesh.vertices[mesh.triangles[elements]])
    nE = len(geom.B)
    ev = ElementFields(fields.spaces, geom)
    X = np.broadcast_to(xi, (nE,) + xi.shape)
    Wv, _ = ev.W(X)
    Vv = ev.V(X)
    Qv, _ = ev.Q(X)
    L = np.einsum("eqaij,ea->eqij", Wv, fields.L[elements])
    u = np.einsum("eqai,ea->eqi", Vv, fields.u[elements])
    p = np.einsum("eqa,ea->eq", Qv, fields.p[elements])
    return geom.to_physical(xi), L, u, p


@dataclass(frozen=True)
class FieldErrors:
    u: float
    p: float
    L: float


def compute_errors(fields: DiscreteFields, u_exact: VectorField, p_exact, L_exact) -> FieldErrors:
    """L2 errors of (u, p, L); exact callables map (x, y) to arrays with trailing
    shapes (2,), (), (2, 2)."""
    mesh = fields.mesh
    rule = quadrature("triangle", min(2 * fields.degree + 6, 20))
    eu = ep = eL = 0.0
    for c in _chunks(mesh.n_triangles):
        x, L, u, p = evaluate_fields(fields, rule.points, c)
        w = rule.weights[None, :] * np.abs(mesh.signed_area[c])[:, None] * 2.0
        X, Y = x[..., 0], x[..., 1]
        eu += np.sum(w * np.sum((u - u_exact(X, Y)) ** 2, axis=-1))
        ep += np.sum(w * (p - p_exact(X, Y)) ** 2)
        eL += np.sum(w * np.sum((L - L_exact(X, Y)) ** 2, axis=(-2, -1)))
    return FieldErrors(float(np.sqrt(eu)), float(np.sqrt(ep)), float(np.sqrt(eL)))


def project_pressure(mesh: MeshLevel, degree: int, func) -> np.ndarray:
    """Element-wise L2 projection of a scalar function onto P_p, shape (nT, nQ)."""
    rule = quadrature("triangle", 2 * degree + 6)
    geom = AffineMap(mesh.vertices[mesh.triangles])
    x = geom.to_physical(rule.points)
    phi = reference_scalar_basis(degree).values(rule.points)  # orthonormal on reference
    vals = np.asarray(func(x[..., 0], x[..., 1]), dtype=float)
    return np.einsum("q,eq,qa->ea", rule.weights, np.broadcast_to(vals, x.shape[:2]), phi)


def embed_pressure(coarse: MeshLevel, fine: MeshLevel, degree: int, p: np.ndarray) -> np.ndarray:
    """Exact embedding of an element-wise P_p field into the refined mesh."""
    rule = quadrature("triangle", 2 * degree)
    fgeom = AffineMap(fine.vertices[fine.triangles])
    x = fgeom.to_physical(rule.points)  # (nTf, nq, 2)
    cgeom = AffineMap(coarse.vertices[coarse.triangles[fine.parent]])
    xi_c = cgeom.to_reference(x)
    basis = reference_scalar_basis(degree)
    vals = np.einsum("eqa,ea->eq", basis.values(xi_c), p[fine.parent])
    return np.einsum("q,eq,qa->ea", rule.weights, vals, basis.values(rule.points))


@dataclass(frozen=True)
class ConditionEstimate:
    lambda_min: float
    lambda_max: float
    kappa: float
    converged: bool
    iterations: int


def estimate_condition_number(matrix, tol: float = 1e-6, maxiter: int = 5000, seed: int = 0) -> ConditionEstimate:
    """lambda_max by power iteration, lambda_min by inverse iteration with a sparse LU."""
    A = sp.csc_matrix(matrix)
    n = A.shape[0]
    rng = np.random.default_rng(seed)

    def iterate(apply):
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        mu = 0.0
        for it in range(1, maxiter + 1):
            y = apply(x)
            mu_new = float(x @ y)
            x = y / np.linalg.norm(y)
            if it > 1 and abs(mu_new - mu) <= tol * abs(mu_new):
                return mu_new, True, it
            mu = mu_new
        return mu, False, maxiter

    lmax, ok1, it1 = iterate(lambda x: A @ x)
    lu = splu(A)
    inv, ok2, it2 = iterate(lu.solve)
    lmin = 1.0 / inv
    return ConditionEstimate(lmin, lmax, lmax / lmin, ok1 and ok2, it1 + it2)
