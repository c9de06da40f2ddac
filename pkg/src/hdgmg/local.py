"""Element-local HDG solvers and static condensation for SFH, RT-H and BDM-H.

On an element T the local unknowns (L, u, p) solve, for all test functions
(G, v, q),

    (L, G) + (u, div G)                     = <lam, G n>
    (-div L + grad p, v) + <tau u, v>        = <tau lam, v> + (f, v)
    (1/dt) (p, q) - (u, grad q)              = -<lam.n, q> + (1/dt) (m, q)

with tau = tau* on the stabilized face of SFH and tau = 0 otherwise.  All
routines work on batches of elements: vertex arrays have shape (nE, 3, 2).

Local trace ordering: ``k * 2(p+1) + c * (p+1) + j`` for local face ``k``
(opposite vertex ``k``), velocity component ``c`` and edge mode ``j``.
The edge parameter of local face ``k`` runs from local vertex ``k+1`` to
``k+2`` unless ``flip[k]`` is set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import (AffineMap, EdgeBasis, dim_p, quadrature, reference_rt_basis,
                    reference_scalar_basis)

_REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class Method:
    kind: str  # "SFH", "RTH" or "BDMH"
    tau: float = 0.0

    def __post_init__(self):
        if self.kind not in ("SFH", "RTH", "BDMH"):
            raise ValueError(f"unknown method {self.kind!r}")
        if self.kind == "SFH" and not self.tau > 0.0:
            raise ValueError("SFH requires tau* > 0")
        if self.kind != "SFH" and self.tau != 0.0:
            raise ValueError(f"{self.kind} has no stabilization")

    def __str__(self):
        return f"SFH(tau*={self.tau:g})" if self.kind == "SFH" else self.kind


def SFH(tau: float = 1.0) -> Method:
    return Method("SFH", float(tau))


def RTH() -> Method:
    return Method("RTH")


def BDMH() -> Method:
    return Method("BDMH")


def parse_method(name: str, tau: float = 1.0) -> Method:
    name = name.upper().replace("-", "")
    if name == "SFH":
        return SFH(tau)
    if name in ("RTH", "RT"):
        return RTH()
    if name in ("BDMH", "BDM"):
        return BDMH()
    raise ValueError(f"unknown method {name!r}")


@dataclass(frozen=True)
class Spaces:
    """Dimensions of the local spaces; slices into the stacked (L, u, p) vector."""
    degree: int
    method: Method

    @property
    def n_scalar(self):
        return dim_p(self.degree)

    @property
    def n_vscalar(self):
        """Scalar dimension of each velocity component."""
        return dim_p(self.degree - 1) if self.method.kind == "BDMH" else dim_p(self.degree)

    @property
    def n_rt(self):
        return (self.degree + 1) * (self.degree + 3)

    @property
    def nW(self):
        return 2 * self.n_rt if self.method.kind == "RTH" else 4 * self.n_scalar

    @property
    def nV(self):
        return 2 * self.n_vscalar

    @property
    def nQ(self):
        return self.n_scalar

    @property
    def n(self):
        return self.nW + self.nV + self.nQ

    @property
    def n_lambda(self):
        return 6 * (self.degree + 1)

    @property
    def L(self):
        return slice(0, self.nW)

    @property
    def u(self):
        return slice(self.nW, self.nW + self.nV)

    @property
    def p(self):
        return slice(self.nW + self.nV, self.n)


@dataclass
class Element:
    """A single triangle with its stabilized face and edge orientations."""
    vertices: np.ndarray
    star: int = 0
    flip: tuple = (False, False, False)


class ElementFields:
    """Evaluates (L, u, p) basis functions at reference points of a batch."""

    def __init__(self, spaces: Spaces, geom: AffineMap):
        self.spaces = spaces
        self.geom = geom
        self.scalar = reference_scalar_basis(spaces.degree)
        if spaces.method.kind == "RTH":
            self.rt = reference_rt_basis(spaces.degree)
            self.rt_scale = 1.0 / np.sqrt(np.abs(geom.det))

    def W(self, xi):
        """xi (nE, nq, 2) -> values (nE, nq, nW, 2, 2) and row divergences (nE, nq, nW, 2)."""
        s = self.spaces
        nE, nq = xi.shape[:2]
        val = np.zeros((nE, nq, s.nW, 2, 2))
        div = np.zeros((nE, nq, s.nW, 2))
        if s.method.kind == "RTH":
            psi = self.rt.values(xi)  # (nE, nq, nrt, 2)
            psi = np.einsum("eij,eqrj->eqri", self.geom.B, psi) * self.rt_scale[:, None, None, None]
            dpsi = self.rt.divergence(xi) * self.rt_scale[:, None, None]
            for i in range(2):
                val[:, :, i * s.n_rt:(i + 1) * s.n_rt, i, :] = psi
                div[:, :, i * s.n_rt:(i + 1) * s.n_rt, i] = dpsi
        else:
            phi = self.scalar.values(xi)
            grad = self.geom.physical_grads(self.scalar.grads(xi))
            n = s.n_scalar
            for i in range(2):
                for j in range(2):
                    k = (2 * i + j) * n
                    val[:, :, k:k + n, i, j] = phi
                    div[:, :, k:k + n, i] = grad[..., j]
        return val, div

    def V(self, xi):
        """(nE, nq, nV, 2)."""
        s = self.spaces
        phi = self.scalar.values(xi)[..., :s.n_vscalar]
        nE, nq = xi.shape[:2]
        val = np.zeros((nE, nq, s.nV, 2))
        val[:, :, :s.n_vscalar, 0] = phi
        val[:, :, s.n_vscalar:, 1] = phi
        return val

    def Q(self, xi):
        """Values (nE, nq, nQ) and gradients (nE, nq, nQ, 2)."""
        return self.scalar.values(xi), self.geom.physical_grads(self.scalar.grads(xi))


def face_geometry(vertices, flip, degree, exactness=None):
    """Quadrature data on the three faces of each element.

    Returns reference points (nE, 3, ng, 2), physical points, weights scaled
    by face length (nE, 3, ng), outward unit normals (nE, 3, 2), face lengths
    (nE, 3) and the edge parameters (ng,).
    """
    exactness = 2 * degree + 2 if exactness is None else exactness
    rule = quadrature("edge", exactness)
    v = np.asarray(vertices, dtype=float)
    flip = np.asarray(flip, dtype=bool)
    a_idx = np.array([1, 2, 0])
    b_idx = np.array([2, 0, 1])
    start = np.where(flip[..., None], _REF_VERTICES[b_idx], _REF_VERTICES[a_idx])
    end = np.where(flip[..., None], _REF_VERTICES[a_idx], _REF_VERTICES[b_idx])
    s = rule.points
    xi = start[:, :, None, :] + s[None, None, :, None] * (end - start)[:, :, None, :]

    d = v[:, b_idx] - v[:, a_idx]  # counterclockwise edge vectors
    length = np.hypot(d[..., 0], d[..., 1])
    normal = np.stack([d[..., 1], -d[..., 0]], axis=-1) / length[..., None]
    x = v[:, a_idx][:, :, None, :] + np.where(flip[..., None], 1.0 - s, s)[..., None] * d[:, :, None, :]
    weights = rule.weights[None, None, :] * length[..., None]
    return xi, x, weights, normal, length, s


@dataclass
class LocalMatrices:
    K: np.ndarray  # (nE, n, n) local saddle-point matrix
    R_lambda: np.ndarray  # (nE, n, nlam)
    S_lambda: np.ndarray  # (nE, nlam, nlam) <tau lam, mu>
    M_W: np.ndarray
    M_Q: np.ndarray
    S_V: np.ndarray  # (nE, nV, nV) <tau u, v>
    C_V: np.ndarray  # (nE, nV, nlam) <tau lam, v>
    dt: float


def local_matrices(method: Method, degree: int, dt: float, vertices, star, flip,
                   face_tau=None) -> LocalMatrices:
    spaces = Spaces(degree, method)
    geom = AffineMap(vertices)
    nE = len(geom.B)
    fields = ElementFields(spaces, geom)
    absdet = np.abs(geom.det)

    cell = quadrature("triangle", 2 * degree + 2)
    xi = np.broadcast_to(cell.points, (nE,) + cell.points.shape)
    w = cell.weights[None, :] * absdet[:, None]
    Wv, Wd = fields.W(xi)
    Vv = fields.V(xi)
    Qv, Qg = fields.Q(xi)

    M_W = np.einsum("eq,eqaij,eqbij->eab", w, Wv, Wv)
    D = np.einsum("eq,eqbi,eqai->eab", w, Wd, Vv)  # (div L_b, v_a)
    Gr = np.einsum("eq,eqbi,eqai->eab", w, Qg, Vv)  # (grad q_b, v_a)
    M_Q = np.einsum("eq,eqa,eqb->eab", w, Qv, Qv)

    fxi, _, fw, normal, _, s = face_geometry(vertices, flip, degree)
    ng = fxi.shape[2]
    fWv, _ = fields.W(fxi.reshape(nE, 3 * ng, 2))
    fWv = fWv.reshape(nE, 3, ng, spaces.nW, 2, 2)
    fVv = fields.V(fxi.reshape(nE, 3 * ng, 2)).reshape(nE, 3, ng, spaces.nV, 2)
    fQv, _ = fields.Q(fxi.reshape(nE, 3 * ng, 2))
    fQv = fQv.reshape(nE, 3, ng, spaces.nQ)

    nb = degree + 1
    b = EdgeBasis(degree).values(s)  # (ng, nb)
    eye2 = np.eye(2)
    # trace basis mu_(k,c,j) = e_c b_j on face k
    Gn = np.einsum("ekgaij,ekj->ekgai", fWv, normal)
    C_W = np.einsum("ekg,ekgac,gj->eakcj", fw, Gn, b).reshape(nE, spaces.nW, 3 * 2 * nb)
    C_Q = -np.einsum("ekg,ekga,ekc,gj->eakcj", fw, fQv, normal, b).reshape(nE, spaces.nQ, 3 * 2 * nb)

    if face_tau is None:
        tau = np.zeros((nE, 3))
        tau[np.arange(nE), np.asarray(star)] = method.tau
    else:
        tau = np.broadcast_to(np.asarray(face_tau, dtype=float), (nE, 3))
    S_V = np.einsum("ek,ekg,ekgai,ekgbi->eab", tau, fw, fVv, fVv)
    C_V = np.einsum("ek,ekg,ekgac,gj->eakcj", tau, fw, fVv, b).reshape(nE, spaces.nV, 3 * 2 * nb)
    S_lambda = np.zeros((nE, 3, 2, nb, 3, 2, nb))
    for k in range(3):
        S_lambda[:, k, :, :, k, :, :] = np.einsum("e,eg,gi,gj,cd->ecidj", tau[:, k], fw[:, k], b, b, eye2)
    S_lambda = S_lambda.reshape(nE, 6 * nb, 6 * nb)

    n = spaces.n
    K = np.zeros((nE, n, n))
    L, u, p = spaces.L, spaces.u, spaces.p
    K[:, L, L] = M_W
    K[:, L, u] = D.transpose(0, 2, 1)
    K[:, u, L] = -D
    K[:, u, u] = S_V
    K[:, u, p] = Gr
    K[:, p, u] = -Gr.transpose(0, 2, 1)
    K[:, p, p] = M_Q / dt

    R = np.zeros((nE, n, 6 * nb))
    R[:, L] = C_W
    R[:, u] = C_V
    R[:, p] = C_Q
    return LocalMatrices(K, R, S_lambda, M_W, M_Q, S_V, C_V, dt)


@dataclass
class ElementOperator:
    """Condensed matrices and reconstruction maps for a batch of elements.

    ``map_lambda @ lam + map_f @ fmom + map_m @ m`` gives the stacked local
    coefficients (L, u, p) for traces ``lam``, source moments ``fmom``
    (moments of f against the velocity basis) and old pressure ``m``.
    """
    method: Method
    degree: int
    dt: float
    a_local: np.ndarray  # (nE, nlam, nlam)
    map_lambda: np.ndarray  # (nE, n, nlam)
    map_f: np.ndarray  # (nE, n, nV)
    map_m: np.ndarray  # (nE, n, nQ)
    M_Q: np.ndarray  # (nE, nQ, nQ)

    @property
    def spaces(self) -> Spaces:
        return Spaces(self.degree, self.method)


def condense(method: Method, degree: int, dt: float, vertices, star=None, flip=None,
             form: str = "energy", face_tau=None) -> ElementOperator:
    """Static condensation on a batch of elements.

    ``form="energy"`` builds ``(L lam, L mu) + <tau (u lam - lam), u mu - mu>
    + (1/dt)(p lam, p mu)``; ``form="schur"`` takes the Schur complement of
    the local system bordered by the flux equation.  Both agree up to rounding.
    ``face_tau`` (nE, 3) replaces the star-face penalty by arbitrary per-face
    values; it exists for negative controls.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    v = np.asarray(vertices, dtype=float)
    if v.ndim == 2:
        v = v[None]
    nE = len(v)
    star = np.zeros(nE, dtype=int) if star is None else np.broadcast_to(star, (nE,))
    flip = np.zeros((nE, 3), dtype=bool) if flip is None else np.broadcast_to(flip, (nE, 3))
    spaces = Spaces(degree, method)
    lm = local_matrices(method, degree, dt, v, star, flip, face_tau)

    n = spaces.n
    rhs = np.zeros((nE, n, spaces.n_lambda + spaces.nV + spaces.nQ))
    rhs[:, :, :spaces.n_lambda] = lm.R_lambda
    rhs[:, spaces.u, spaces.n_lambda:spaces.n_lambda + spaces.nV] = np.eye(spaces.nV)
    rhs[:, spaces.p, spaces.n_lambda + spaces.nV:] = lm.M_Q / dt
    try:
        X = np.linalg.solve(lm.K, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular local system for {method}, p={degree}") from exc
    X_lam = X[:, :, :spaces.n_lambda]

    if form == "energy":
        XL, Xu, Xp = X_lam[:, spaces.L], X_lam[:, spaces.u], X_lam[:, spaces.p]
        a = (np.einsum("eai,eab,ebj->eij", XL, lm.M_W, XL)
             + np.einsum("eai,eab,ebj->eij", Xp, lm.M_Q, Xp) / dt)
        if method.tau > 0.0 or face_tau is not None:
            cross = np.einsum("eai,eaj->eij", Xu, lm.C_V)
            a += np.einsum("eai,eab,ebj->eij", Xu, lm.S_V, Xu) - cross - cross.transpose(0, 2, 1) + lm.S_lambda
    elif form == "schur":
        E = lm.R_lambda.copy()
        E[:, spaces.u] *= -1.0
        a = np.einsum("eai,eaj->eij", E, X_lam) + lm.S_lambda
    else:
        raise ValueError(f"unknown form {form!r}")
    a = 0.5 * (a + a.transpose(0, 2, 1))

    return ElementOperator(method, degree, dt, a, X_lam,
                           X[:, :, spaces.n_lambda:spaces.n_lambda + spaces.nV],
                           X[:, :, spaces.n_lambda + spaces.nV:], lm.M_Q)


def _single(element: Element):
    return (np.asarray(element.vertices, dtype=float)[None], np.array([element.star]),
            np.array([element.flip], dtype=bool))


def _split(spaces, x):
    return x[spaces.L], x[spaces.u], x[spaces.p]


def solve_local_lambda(method: Method, element: Element, dt: float, lam, degree: int):
    """(L, u, p) coefficients of the local solution driven by trace ``lam``."""
    v, star, flip = _single(element)
    op = condense(method, degree, dt, v, star, flip)
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (op.spaces.n_lambda,):
        raise ValueError(f"expected {op.spaces.n_lambda} trace coefficients, got {lam.shape}")
    return _split(op.spaces, op.map_lambda[0] @ lam)


def solve_local_f(method: Method, element: Element, dt: float, f_moments, degree: int):
    """Local solution driven by the source moments ``(f, v)_T``."""
    v, star, flip = _single(element)
    op = condense(method, degree, dt, v, star, flip)
    return _split(op.spaces, op.map_f[0] @ np.asarray(f_moments, dtype=float))


def solve_local_m(method: Method, element: Element, dt: float, m, degree: int):
    """Local solution driven by the previous pressure ``m``."""
    v, star, flip = _single(element)
    op = condense(method, degree, dt, v, star, flip)
    return _split(op.spaces, op.map_m[0] @ np.asarray(m, dtype=float))


def element_source_moments(method: Method, degree: int, vertices, f, exactness=None) -> np.ndarray:
    """Moments ``(f, v)_T`` against the velocity basis, shape (nE, nV).

    ``f(x, y)`` returns an array with a trailing axis of length 2.
    """
    spaces = Spaces(degree, method)
    geom = AffineMap(vertices)
    rule = quadrature("triangle", 2 * degree + 6 if exactness is None else exactness)
    x = geom.to_physical(rule.points)
    fx = np.asarray(f(x[..., 0], x[..., 1]), dtype=float)
    w = rule.weights[None, :] * np.abs(geom.det)[:, None]
    xi = np.broadcast_to(rule.points, (len(geom.B),) + rule.points.shape)
    Vv = ElementFields(spaces, geom).V(xi)
    return np.einsum("eq,eqc,eqac->ea", w, fx, Vv)
