"""Shared helpers for building local trace vectors."""
import numpy as np

from hdgmg.basis import EdgeBasis, quadrature


def random_triangles(rng, n, scale=1.0):
    """n counterclockwise triangles with bounded aspect ratio, shape (n, 3, 2)."""
    out = []
    while len(out) < n:
        v = rng.uniform(-1, 1, (3, 2)) * scale
        d1, d2 = v[1] - v[0], v[2] - v[0]
        area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
        if abs(area) > 0.15 * scale ** 2:
            out.append(v if area > 0 else v[[0, 2, 1]])
    return np.array(out)


def local_trace(vertices, flip, degree, func):
    """Local trace vector of ``func`` on the three faces of one element,
    ordered face, component, mode."""
    rule = quadrature("edge", 2 * degree + 6)
    b = EdgeBasis(degree).values(rule.points)
    out = np.zeros((3, 2, degree + 1))
    for k in range(3):
        a, c = vertices[(k + 1) % 3], vertices[(k + 2) % 3]
        if flip[k]:
            a, c = c, a
        x = a[None, :] + rule.points[:, None] * (c - a)[None, :]
        val = np.asarray(func(x[:, 0], x[:, 1]))
        out[k] = np.einsum("g,gc,gj->cj", rule.weights, val, b)
    return out.ravel()
