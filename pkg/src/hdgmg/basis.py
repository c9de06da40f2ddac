"""Quadrature rules and polynomial bases on triangles and edges.

Reference triangle: (0,0), (1,0), (0,1).  Reference edge: the arc-length
parameter ``s`` in [0, 1].  Cell bases are orthonormal on the reference
triangle and ordered by total degree, so the first ``dim P_{k}`` functions
span ``P_k`` for every ``k <= p``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi

MAX_DEGREE = 4
MAX_EXACTNESS = 20


def _check_degree(p):
    if not 1 <= p <= MAX_DEGREE:
        raise ValueError(f"unsupported polynomial degree {p}; expected 1..{MAX_DEGREE}")


def dim_p(p: int) -> int:
    """Dimension of P_p on a triangle."""
    return (p + 1) * (p + 2) // 2 if p >= 0 else 0


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) reference coordinates, or (nq,) edge parameters
    weights: np.ndarray  # (nq,)
    exactness: int
    domain: str


@lru_cache(maxsize=None)
def quadrature(domain: str, exactness: int) -> QuadratureRule:
    """Gauss rule on the reference edge or a collapsed Gauss-Jacobi rule on the
    reference triangle, exact for polynomials of total degree ``exactness``."""
    if not 0 <= exactness <= MAX_EXACTNESS:
        raise ValueError(f"unsupported quadrature exactness {exactness}")
    k = exactness // 2 + 1
    if domain == "edge":
        x, w = legendre.leggauss(k)
        return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, exactness, domain)
    if domain == "triangle":
        a, wa = legendre.leggauss(k)
        b, wb = roots_jacobi(k, 1.0, 0.0)
        A, B = np.meshgrid(a, b, indexing="ij")
        x = 0.25 * (1.0 + A) * (1.0 - B)
        y = 0.5 * (1.0 + B)
        w = np.outer(wa, wb) / 8.0
        return QuadratureRule(np.stack([x.ravel(), y.ravel()], axis=1), w.ravel(),
                              exactness, domain)
    raise ValueError(f"unknown quadrature domain {domain!r}")


class EdgeBasis:
    """Scaled Legendre polynomials ``sqrt(2k+1) P_k(2s-1)``, orthonormal on [0,1]."""

    def __init__(self, degree: int):
        _check_degree(degree)
        self.degree = degree
        self.size = degree + 1
        self._scale = np.sqrt(2.0 * np.arange(self.size) + 1.0)

    def values(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return legendre.legvander(2.0 * s - 1.0, self.degree) * self._scale

    def derivatives(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.empty(s.shape + (self.size,))
        for k in range(self.size):
            c = np.zeros(self.size)
            c[k] = self._scale[k]
            out[..., k] = 2.0 * legendre.legval(2.0 * s - 1.0, legendre.legder(c))
        return out


def edge_basis(p: int) -> EdgeBasis:
    return EdgeBasis(p)


def _monomial_exponents(p):
    return [(d - j, j) for d in range(p + 1) for j in range(d + 1)]


def _monomials(xi, exps):
    x, y = xi[..., 0], xi[..., 1]
    return np.stack([x ** a * y ** b for a, b in exps], axis=-1)


def _monomial_grads(xi, exps):
    x, y = xi[..., 0], xi[..., 1]
    gx = [a * x ** max(a - 1, 0) * y ** b for a, b in exps]
    gy = [b * x ** a * y ** max(b - 1, 0) for a, b in exps]
    return np.stack([np.stack(gx, axis=-1), np.stack(gy, axis=-1)], axis=-1)


class ReferenceScalarBasis:
    """Orthonormal basis of P_p on the reference triangle (Gram-Schmidt of
    monomials in graded order)."""

    def __init__(self, degree: int):
        self.degree = degree
        self.size = dim_p(degree)
        self._exps = _monomial_exponents(degree)
        q = quadrature("triangle", 2 * degree)
        m = _monomials(q.points, self._exps)
        gram = m.T @ (q.weights[:, None] * m)
        self._coef = np.linalg.inv(np.linalg.cholesky(gram))  # phi = coef @ monomials

    def values(self, xi) -> np.ndarray:
        """(..., 2) reference points -> (..., size)."""
        return _monomials(np.asarray(xi, dtype=float), self._exps) @ self._coef.T

    def grads(self, xi) -> np.ndarray:
        """(..., 2) reference points -> (..., size, 2) reference gradients."""
        g = _monomial_grads(np.asarray(xi, dtype=float), self._exps)
        return np.einsum("ij,...jd->...id", self._coef, g)


@lru_cache(maxsize=None)
def reference_scalar_basis(p: int) -> ReferenceScalarBasis:
    if not 0 <= p <= MAX_DEGREE:
        raise ValueError(f"unsupported polynomial degree {p}")
    return ReferenceScalarBasis(p)


class ReferenceRTBasis:
    """Raviart-Thomas RT_p = [P_p]^2 + x P~_p on the reference triangle.

    The first ``2 dim P_p`` members are ``e_c phi_a``; the remaining ``p + 1``
    are ``xi * xi_1^(p-j) xi_2^j``.
    """

    def __init__(self, degree: int):
        self.degree = degree
        self.scalar = reference_scalar_basis(degree)
        self.size = (degree + 1) * (degree + 3)

    def values(self, xi) -> np.ndarray:
        """(..., 2) -> (..., size, 2)."""
        xi = np.asarray(xi, dtype=float)
        phi = self.scalar.values(xi)
        z = np.zeros_like(phi)
        poly = np.concatenate([np.stack([phi, z], -1), np.stack([z, phi], -1)], axis=-2)
        p = self.degree
        x, y = xi[..., 0], xi[..., 1]
        extra = [x ** (p - j) * y ** j for j in range(p + 1)]
        extra = np.stack([np.stack([x * h, y * h], -1) for h in extra], axis=-2)
        return np.concatenate([poly, extra], axis=-2)

    def divergence(self, xi) -> np.ndarray:
        """(..., 2) -> (..., size)."""
        xi = np.asarray(xi, dtype=float)
        g = self.scalar.grads(xi)
        p = self.degree
        x, y = xi[..., 0], xi[..., 1]
        # div(xi h) = 2 h + xi . grad h = (2 + p) h for homogeneous h of degree p
        extra = np.stack([(p + 2) * x ** (p - j) * y ** j for j in range(p + 1)], -1)
        return np.concatenate([g[..., 0], g[..., 1], extra], axis=-1)


@lru_cache(maxsize=None)
def reference_rt_basis(p: int) -> ReferenceRTBasis:
    _check_degree(p)
    return ReferenceRTBasis(p)


class AffineMap:
    """x = v0 + B xi for a batch of triangles, vertices (nE, 3, 2)."""

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim == 2:
            v = v[None]
        self.vertices = v
        self.origin = v[:, 0]
        self.B = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)  # (nE, 2, 2)
        self.det = self.B[:, 0, 0] * self.B[:, 1, 1] - self.B[:, 0, 1] * self.B[:, 1, 0]
        self.Binv = np.linalg.inv(self.B)

    def to_physical(self, xi):
        """Reference points (nq, 2) shared by all elements, or (nE, ..., 2)."""
        xi = np.asarray(xi, dtype=float)
        if xi.ndim == 2:
            return self.origin[:, None, :] + np.einsum("eij,qj->eqi", self.B, xi)
        flat = xi.reshape(len(self.B), -1, 2)
        x = self.origin[:, None, :] + np.einsum("eij,eqj->eqi", self.B, flat)
        return x.reshape(xi.shape)

    def to_reference(self, x):
        """x (nE, ..., 2) -> reference coordinates of each element."""
        shape = x.shape
        x = x.reshape(len(self.B), -1, 2) - self.origin[:, None, :]
        return np.einsum("eij,eqj->eqi", self.Binv, x).reshape(shape)

    def physical_grads(self, ref_grads):
        """Reference gradients (nE, ..., 2) -> physical gradients: B^{-T} g."""
        shape = ref_grads.shape
        g = ref_grads.reshape(len(self.B), -1, 2)
        return np.einsum("eji,eqj->eqi", self.Binv, g).reshape(shape)


class CellBasis:
    """Orthonormal-on-reference P_p basis on one physical triangle."""

    def __init__(self, degree: int, vertices):
        _check_degree(degree)
        self.degree = degree
        self.ref = reference_scalar_basis(degree)
        self.size = self.ref.size
        self.map = AffineMap(vertices)

    def _xi(self, x):
        x = np.asarray(x, dtype=float)
        return self.map.to_reference(x.reshape(1, -1, 2)).reshape(x.shape)

    def values(self, x) -> np.ndarray:
        return self.ref.values(self._xi(x))

    def grads(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = self.ref.grads(self._xi(x))
        return self.map.physical_grads(g.reshape(1, -1, 2)).reshape(g.shape)

    def interpolate(self, func) -> np.ndarray:
        """Coefficients of the L2 projection of ``func`` onto P_p(T)."""
        q = quadrature("triangle", 2 * self.degree + 6)
        x = self.map.to_physical(q.points)[0]
        vals = self.ref.values(q.points)
        # reference mass matrix is the identity
        return vals.T @ (q.weights * func(x[:, 0], x[:, 1]))

    def evaluate(self, coef, x) -> np.ndarray:
        return self.values(x) @ coef


def cell_basis(p: int, vertices) -> CellBasis:
    return CellBasis(p, vertices)


class RTBasis:
    """RT_p basis on one physical triangle via the scaled Piola map
    ``psi(x) = B psi_hat(xi) / sqrt|det B|``."""

    def __init__(self, degree: int, vertices):
        _check_degree(degree)
        self.degree = degree
        self.ref = reference_rt_basis(degree)
        self.size = self.ref.size
        self.map = AffineMap(vertices)
        self._scale = 1.0 / np.sqrt(abs(self.map.det[0]))

    def _xi(self, x):
        x = np.asarray(x, dtype=float)
        return self.map.to_reference(x.reshape(1, -1, 2)).reshape(x.shape)

    def values(self, x) -> np.ndarray:
        v = self.ref.values(self._xi(x))
        return np.einsum("ij,...j->...i", self.map.B[0], v) * self._scale

    def divergence(self, x) -> np.ndarray:
        return self.ref.divergence(self._xi(x)) * self._scale


def rt_basis(p: int, vertices) -> RTBasis:
    return RTBasis(p, vertices)
