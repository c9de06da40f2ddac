import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from hdgmg.assembly import (ProblemData, assemble_condensed, assemble_rhs, build_trace_space,
                            embed_pressure, estimate_condition_number, neumann_vector, project_pressure,
                            pressure_norm)
from hdgmg.local import BDMH, RTH, SFH
from hdgmg.mesh import DIRICHLET, MeshHierarchy

EXPECTED_DOFS = {
    1: [368, 1504, 6080, 24448, 98048],
    2: [552, 2256, 9120, 36672, 147072],
    3: [736, 3008, 12160, 48896, 196096],
}


@pytest.fixture(scope="module")
def hier():
    return MeshHierarchy.build(6)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_unknown_counts(hier, p):
    got = [build_trace_space(hier[lv], p).n_unknowns for lv in range(2, 7)]
    assert got == EXPECTED_DOFS[p]
    mesh = hier[3]
    free = np.sum(mesh.face_kind != DIRICHLET)
    assert build_trace_space(mesh, p).n_unknowns == free * 2 * (p + 1)


@pytest.mark.parametrize("p", [1, 2])
def test_condensed_matrix_symmetric_positive_definite(hier, p):
    A = assemble_condensed(build_trace_space(hier[2], p), SFH(), 2.0).matrix
    assert (A - A.T).nnz == 0
    np.linalg.cholesky(A.toarray())


def test_sparsity_follows_face_adjacency(hier):
    space = build_trace_space(hier[2], 1)
    A = assemble_condensed(space, SFH(), 2.0).matrix.tocoo()
    mesh = space.mesh
    faces = space.unknown_faces
    bs = space.block_size
    neighbours = [set() for _ in range(mesh.n_faces)]
    for tf in mesh.tri_faces:
        for f in tf:
            neighbours[f].update(tf)
    for r, c in zip(A.row, A.col):
        assert faces[c // bs] in neighbours[faces[r // bs]]


@pytest.mark.parametrize("p", [1, 2, 3])
def test_method_and_star_independence(hier, p):
    space = build_trace_space(hier[2], p)
    ref = assemble_condensed(space, SFH(1.0), 4.0).matrix
    scale = abs(ref).max()
    for m in (SFH(10.0), RTH(), BDMH()):
        diff = assemble_condensed(space, m, 4.0).matrix - ref
        assert abs(diff).max() / scale < 1e-10
    # move every stabilized face to another local face
    from dataclasses import replace
    mesh2 = replace(space.mesh, star=(space.mesh.star + 1) % 3)
    other = assemble_condensed(build_trace_space(mesh2, p), SFH(3.0), 4.0).matrix
    assert abs(other - ref).max() / scale < 1e-10


def test_rhs_linear_and_zero_for_zero_data(hier):
    space = build_trace_space(hier[2], 1)
    sysm = assemble_condensed(space, SFH(), 2.0)
    f1 = lambda x, y: np.stack([np.sin(x), y * y], -1)  # noqa: E731
    f2 = lambda x, y: np.stack([x, np.cos(y)], -1)  # noqa: E731
    b1 = assemble_rhs(sysm, f=f1)
    b2 = assemble_rhs(sysm, f=f2)
    b12 = assemble_rhs(sysm, f=lambda x, y: 2 * f1(x, y) - f2(x, y))
    np.testing.assert_allclose(b12, 2 * b1 - b2, atol=1e-13)
    p = np.random.default_rng(0).standard_normal((space.mesh.n_triangles, 3))
    np.testing.assert_allclose(assemble_rhs(sysm, p_prev=2 * p), 2 * assemble_rhs(sysm, p_prev=p))
    assert not np.any(assemble_rhs(sysm, f=ProblemData().f, p_prev=0 * p, g_N=ProblemData().g_N))


def test_neumann_vector_only_on_neumann_faces(hier):
    space = build_trace_space(hier[2], 1)
    b = neumann_vector(space, lambda x, y: np.stack([np.ones_like(x), x], -1))
    blocks = np.flatnonzero(np.abs(b.reshape(-1, space.block_size)).sum(1))
    kinds = space.mesh.face_kind[space.unknown_faces[blocks]]
    assert len(blocks) == 4 and np.all(kinds == 2)
    # integral of 1 over the bottom edge with the mode-0 basis (constant 1)
    assert np.isclose(b.reshape(-1, 2, 2)[blocks, 0, 0].sum(), 1.0)


def test_embedding_is_exact(hier):
    coarse, fine = hier[2], hier[3]
    func = lambda x, y: x ** 2 - 3 * x * y + y  # noqa: E731
    pc = project_pressure(coarse, 2, func)
    np.testing.assert_allclose(embed_pressure(coarse, fine, 2, pc), project_pressure(fine, 2, func), atol=1e-13)
    assert np.isclose(pressure_norm(fine, project_pressure(fine, 1, lambda x, y: np.ones_like(x))), 1.0)


def test_matrix_market_export(hier, tmp_path):
    sysm = assemble_condensed(build_trace_space(hier[1], 1), SFH(), 2.0)
    path = tmp_path / "a.mtx"
    sysm.export(path)
    text = path.read_text().splitlines()
    assert text[0].startswith("%%MatrixMarket matrix coordinate real")
    back = scipy.io.mmread(str(path))
    assert abs(sp.csr_matrix(back) - sysm.matrix).max() < 1e-14


def test_condition_estimate_on_diagonal():
    est = estimate_condition_number(sp.diags(np.linspace(1.0, 50.0, 40)), tol=1e-10)
    assert est.converged
    assert np.isclose(est.kappa, 50.0, rtol=1e-6)
