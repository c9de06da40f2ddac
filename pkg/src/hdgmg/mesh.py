"""Nested triangular meshes of the unit square.

A :class:`MeshLevel` stores everything as integer/float numpy arrays.  Local
face ``k`` of a triangle is the edge opposite its vertex ``k``.  Faces are
stored with their vertex ids sorted ascending, which also fixes the
direction of the arc-length parameter used for trace polynomials.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

KIND_NAMES = {INTERIOR: "interior", DIRICHLET: "dirichlet", NEUMANN: "neumann"}

# face_parent[:, 0] values
PARENT_FACE = 0
PARENT_CELL = 1


@dataclass(frozen=True)
class MeshLevel:
    level: int
    vertices: np.ndarray  # (nV, 2)
    triangles: np.ndarray  # (nT, 3), counterclockwise
    faces: np.ndarray  # (nF, 2), sorted vertex ids
    face_cells: np.ndarray  # (nF, 2), -1 where absent
    face_kind: np.ndarray  # (nF,)
    tri_faces: np.ndarray  # (nT, 3), local face k opposite vertex k
    star: np.ndarray  # (nT,), local index of the stabilized face
    parent: np.ndarray | None = None  # (nT,) triangle ids on level - 1
    face_parent: np.ndarray | None = None  # (nF, 2): (PARENT_FACE|PARENT_CELL, id)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def face_length(self) -> np.ndarray:
        d = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def h(self) -> float:
        return float(self.face_length.max())

    @property
    def signed_area(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        a = v[:, 1] - v[:, 0]
        b = v[:, 2] - v[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_kind != INTERIOR)

    def __repr__(self) -> str:
        return (f"MeshLevel(level={self.level}, vertices={self.n_vertices}, "
                f"triangles={self.n_triangles}, faces={self.n_faces})")


def _classify(vertices, faces, face_cells):
    kind = np.full(len(faces), INTERIOR, dtype=np.int64)
    boundary = face_cells[:, 1] < 0
    y = vertices[faces][:, :, 1]
    bottom = (y[:, 0] == 0.0) & (y[:, 1] == 0.0)
    kind[boundary] = DIRICHLET
    kind[boundary & bottom] = NEUMANN
    return kind


def _build_level(level, vertices, triangles, parent=None, face_parent_fn=None):
    local = np.array([[1, 2], [2, 0], [0, 1]])
    edges = np.sort(triangles[:, local], axis=2).reshape(-1, 2)
    faces, inverse = np.unique(edges, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    tri_faces = inverse.reshape(-1, 3)

    face_cells = np.full((len(faces), 2), -1, dtype=np.int64)
    owner = np.repeat(np.arange(len(triangles)), 3)
    for e, t in zip(inverse, owner):
        slot = 0 if face_cells[e, 0] < 0 else 1
        face_cells[e, slot] = t

    kind = _classify(vertices, faces, face_cells)
    # stabilized face: the one with the largest global id
    star = np.argmax(tri_faces, axis=1)
    face_parent = face_parent_fn(faces) if face_parent_fn is not None else None
    return MeshLevel(level, vertices, triangles, faces, face_cells, kind,
                     tri_faces, star, parent, face_parent)


def build_initial_mesh() -> MeshLevel:
    """The 16-triangle criss-cross/diamond mesh of the unit square.

    Faces on ``y = 0`` are Neumann, the remaining boundary is Dirichlet.
    """
    g = [0.0, 0.5, 1.0]
    grid = np.array([(x, y) for y in g for x in g])  # ids 3*j + i
    quarter = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    vertices = np.vstack([grid, quarter])

    triangles = []
    for qj in range(2):
        for qi in range(2):
            c = 9 + 2 * qj + qi
            corners = [3 * qj + qi, 3 * qj + qi + 1,
                       3 * (qj + 1) + qi + 1, 3 * (qj + 1) + qi]
            for k in range(4):
                triangles.append((c, corners[k], corners[(k + 1) % 4]))
    return _build_level(1, vertices, np.array(triangles, dtype=np.int64))


def refine(coarse: MeshLevel) -> MeshLevel:
    """Red refinement: every triangle is split into four by its edge midpoints.

    Fine vertex ``nV + f`` is the midpoint of coarse face ``f``.  Children of
    triangle ``t`` are ``4t .. 4t+3``, the last one being the middle triangle.
    """
    nv = coarse.n_vertices
    mids = 0.5 * (coarse.vertices[coarse.faces[:, 0]] + coarse.vertices[coarse.faces[:, 1]])
    vertices = np.vstack([coarse.vertices, mids])

    v = coarse.triangles
    m = nv + coarse.tri_faces  # m[:, k] is the midpoint opposite vertex k
    children = np.stack([
        np.stack([v[:, 0], m[:, 2], m[:, 1]], axis=1),
        np.stack([m[:, 2], v[:, 1], m[:, 0]], axis=1),
        np.stack([m[:, 1], m[:, 0], v[:, 2]], axis=1),
        np.stack([m[:, 0], m[:, 1], m[:, 2]], axis=1),
    ], axis=1).reshape(-1, 3)
    parent = np.repeat(np.arange(coarse.n_triangles), 4)

    def face_parent_fn(faces):
        out = np.empty((len(faces), 2), dtype=np.int64)
        a, b = faces[:, 0], faces[:, 1]  # a < b, so a coarse vertex comes first
        half = a < nv
        out[half, 0] = PARENT_FACE
        out[half, 1] = b[half] - nv
        # both endpoints are midpoints of two faces of the same coarse cell
        fa, fb = a[~half] - nv, b[~half] - nv
        ca, cb = coarse.face_cells[fa], coarse.face_cells[fb]
        same = (ca[:, :1] == cb) & (cb >= 0)
        cell = np.where(same.any(axis=1), cb[np.arange(len(cb)), same.argmax(axis=1)], -1)
        out[~half, 0] = PARENT_CELL
        out[~half, 1] = cell
        return out

    return _build_level(coarse.level + 1, vertices, children, parent, face_parent_fn)


@dataclass
class MeshHierarchy:
    levels: list[MeshLevel] = field(default_factory=list)

    @classmethod
    def build(cls, n_levels: int) -> "MeshHierarchy":
        levels = [build_initial_mesh()]
        for _ in range(n_levels - 1):
            levels.append(refine(levels[-1]))
        return cls(levels)

    def __getitem__(self, level: int) -> MeshLevel:
        """Mesh on ``level`` (1-based, as in the experiment tables)."""
        if level < 1 or level > len(self.levels):
            raise IndexError(f"level {level} not in 1..{len(self.levels)}")
        return self.levels[level - 1]

    def __len__(self) -> int:
        return len(self.levels)

    def extend_to(self, n_levels: int) -> None:
        while len(self.levels) < n_levels:
            self.levels.append(refine(self.levels[-1]))


def validate(mesh: MeshLevel) -> list[str]:
    """Check the structural invariants of ``mesh``; an empty list means valid."""
    report = []
    v = mesh.vertices
    if np.any(v < 0.0) or np.any(v > 1.0):
        report.append("vertex coordinates outside the unit square")
    area = mesh.signed_area
    for t in np.flatnonzero(area <= 0.0):
        report.append(f"orientation: triangle {t} has signed area {area[t]:.3e}")

    ncell = (mesh.face_cells >= 0).sum(axis=1)
    for f in np.flatnonzero(ncell == 0):
        report.append(f"adjacency: face {f} has no adjacent cell")
    for f in np.flatnonzero((ncell == 1) & (mesh.face_kind == INTERIOR)):
        report.append(f"adjacency: interior face {f} has only one cell")
    for f in np.flatnonzero((ncell == 2) & (mesh.face_kind != INTERIOR)):
        report.append(f"adjacency: boundary face {f} has two cells")

    on_boundary = np.zeros(mesh.n_faces, dtype=bool)
    fv = v[mesh.faces]
    for axis in range(2):
        for side in (0.0, 1.0):
            on_boundary |= (fv[:, 0, axis] == side) & (fv[:, 1, axis] == side)
    for f in np.flatnonzero(on_boundary != (mesh.face_kind != INTERIOR)):
        report.append(f"classification: face {f} kind {KIND_NAMES[int(mesh.face_kind[f])]} "
                      "does not match its position")

    # every triangle face must reference a face with the same endpoints
    local = np.array([[1, 2], [2, 0], [0, 1]])
    expect = np.sort(mesh.triangles[:, local], axis=2)
    got = mesh.faces[mesh.tri_faces]
    for t in np.flatnonzero(np.any(expect != got, axis=(1, 2))):
        report.append(f"conformity: triangle {t} face table inconsistent")

    nb = int((ncell == 1).sum())
    if 2 * mesh.n_faces != 3 * mesh.n_triangles + nb:
        report.append(f"count: faces={mesh.n_faces} but (3N+B)/2={(3 * mesh.n_triangles + nb) / 2}")
    if mesh.star.shape != (mesh.n_triangles,) or np.any((mesh.star < 0) | (mesh.star > 2)):
        report.append("star face index out of range")
    return report


def dump(mesh: MeshLevel) -> str:
    """Plain text dump: ``v x y``, ``t v0 v1 v2``, ``f v0 v1 kind`` records."""
    lines = [f"v {x!r} {y!r}" for x, y in mesh.vertices]
    lines += [f"t {a} {b} {c}" for a, b, c in mesh.triangles]
    lines += [f"f {a} {b} {KIND_NAMES[int(k)]}" for (a, b), k in zip(mesh.faces, mesh.face_kind)]
    return "\n".join(lines) + "\n"
