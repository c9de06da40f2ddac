"""Manufactured Stokes solution on the unit square."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import ProblemData

PI = np.pi


def velocity(x, y):
    return np.stack([np.sin(PI * x) * np.sin(PI * y), np.cos(PI * x) * np.cos(PI * y)], axis=-1)


def pressure(x, y):
    return np.sin(PI * x) * np.cos(PI * y)


def velocity_gradient(x, y):
    """(grad u)_ij = d u_i / d x_j."""
    sx, cx, sy, cy = np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y)
    row0 = np.stack([PI * cx * sy, PI * sx * cy], axis=-1)
    row1 = np.stack([-PI * sx * cy, -PI * cx * sy], axis=-1)
    return np.stack([row0, row1], axis=-2)


def source(x, y):
    sx, cx, sy, cy = np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y)
    f1 = 2 * PI ** 2 * sx * sy + PI * cx * cy
    f2 = 2 * PI ** 2 * cx * cy - PI * sx * sy
    return np.stack([f1, f2], axis=-1)


def traction_bottom(x, y):
    """(grad u - p I) n with n = (0, -1)."""
    G = velocity_gradient(x, y)
    p = pressure(x, y)
    return np.stack([-G[..., 0, 1], -G[..., 1, 1] + p], axis=-1)


@dataclass(frozen=True)
class ManufacturedProblem:
    """u = (sin sin, cos cos), p = sin(pi x) cos(pi y), L = grad u."""

    def data(self) -> ProblemData:
        return ProblemData(f=source, u_D=velocity, g_N=traction_bottom)

    u = staticmethod(velocity)
    p = staticmethod(pressure)
    L = staticmethod(velocity_gradient)
    f = staticmethod(source)


def zero_problem() -> ProblemData:
    return ProblemData()
