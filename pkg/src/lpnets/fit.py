"""Analytic extraction of map parameters from exact data pairs.

Given consecutive states ``(y0, yf)`` a step ``h`` apart, each extractor
returns the parameters of the system's exact map that carries ``y0`` to
``yf``. These parameters are the regression targets for the network.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .lie import PreconditionError
from .maps import (
    ParticleMapParams,
    PendulumMapParams,
    normal_frame,
    particle_T1,
    particle_composite,
    pendulum_composite,
    se3_rotate,
    se3_step,
    shear_frame,
    so3_map,
)
from .systems import SingularityError, pendulum_casimir

CASIMIR_TOL = 1e-8
# below this |cross| / |a||b| two vectors count as (anti)parallel
_PARALLEL_TOL = 1e-12
# the particle potential is singular on the axis
_PARTICLE_MIN_RADIUS = 1e-9


class DataInconsistencyError(ValueError):
    """The two states of a pair do not lie on the same Casimir level set."""

    def __init__(self, message: str, indices: Sequence[int] = ()):
        super().__init__(message)
        self.indices = list(indices)


class DegenerateRotationError(PreconditionError):
    """Antiparallel endpoints: the shortest rotation axis is undefined."""


class DegenerateProjectionError(PreconditionError):
    """A Casimir gradient vanishes (or gradients are dependent) at the base point."""


def _check_close(a: float, b: float, tol: float, what: str) -> None:
    if abs(a - b) > tol * max(1.0, abs(a), abs(b)):
        raise DataInconsistencyError(f"{what} differs between pair states: {a!r} vs {b!r}")


def _shortest_rotation(u0: np.ndarray, uf: np.ndarray, h: float) -> np.ndarray:
    """``A`` with ``so3_map(u0, A, h)`` parallel to ``uf`` (shortest arc)."""
    c = np.cross(u0, uf)
    s = float(np.linalg.norm(c))
    d = float(np.dot(u0, uf))
    if s <= _PARALLEL_TOL * float(np.linalg.norm(u0) * np.linalg.norm(uf)):
        if d >= 0.0:
            return np.zeros(3)
        raise DegenerateRotationError("endpoints are antiparallel; rotation axis undefined")
    theta = math.atan2(s, d)
    # Pi_dot = -A x Pi turns by -|A| h about A, so A points against the cross product
    return -(theta / h) * (c / s)


# -- rigid body ------------------------------------------------------------


def so3_extract(pi0, pif, h: float, tol: float = CASIMIR_TOL) -> np.ndarray:
    pi0 = np.asarray(pi0, dtype=float)
    pif = np.asarray(pif, dtype=float)
    _check_close(float(np.linalg.norm(pi0)), float(np.linalg.norm(pif)), tol, "|Pi|")
    return _shortest_rotation(pi0, pif, h)


# -- pendulum --------------------------------------------------------------


def pendulum_extract(y0, yf, h: float, tol: float = CASIMIR_TOL) -> PendulumMapParams:
    y0 = np.asarray(y0, dtype=float)
    yf = np.asarray(yf, dtype=float)
    _check_close(pendulum_casimir(y0), pendulum_casimir(yf), tol, "Casimir r - u^2 - v^2")
    a1 = 3.0 * (yf[1] - y0[1]) / h
    a2 = -3.0 * (yf[0] - y0[0]) / h
    return PendulumMapParams((a1, a2, 0.0))


# -- particle --------------------------------------------------------------


def _segment_distance(x0: np.ndarray, x1: np.ndarray) -> float:
    d = x1 - x0
    dd = float(d @ d)
    s = 0.0 if dd == 0.0 else min(1.0, max(0.0, -float(x0 @ d) / dd))
    return float(np.linalg.norm(x0 + s * d))


def particle_extract(y0, yf, h: float) -> ParticleMapParams:
    y0 = np.asarray(y0, dtype=float)
    yf = np.asarray(yf, dtype=float)
    if _segment_distance(y0[2:], yf[2:]) < _PARTICLE_MIN_RADIUS:
        raise SingularityError("drift segment passes through the field axis")
    alpha = 2.0 * (yf[2:] - y0[2:]) / h
    p_mid = particle_T1(y0, alpha, 0.5 * h)[:2]
    beta = 2.0 * (p_mid - yf[:2]) / h
    return ParticleMapParams(tuple(alpha), tuple(beta))


# -- SE(3) -----------------------------------------------------------------


def se3_extract(y0, yf, h: float, tol: float = CASIMIR_TOL) -> np.ndarray:
    """Coefficients ``(a1, a2, bt1, bt2)`` so that ``se3_step(y0, ., h)`` gives ``yf``."""
    y0 = np.asarray(y0, dtype=float)
    yf = np.asarray(yf, dtype=float)
    pi0, p0, pif, pf = y0[:3], y0[3:], yf[:3], yf[3:]
    _check_close(float(p0 @ p0), float(pf @ pf), tol, "|p|^2")
    _check_close(float(pi0 @ p0), float(pif @ pf), tol, "Pi.p")
    xi1, xi2 = normal_frame(p0)
    A = _shortest_rotation(p0, pf, h)
    a1, a2 = float(A @ xi1), float(A @ xi2)
    # rebuild A from the two coefficients so the prediction path is reproduced exactly
    pis, pr = se3_rotate(pi0, p0, a1 * xi1 + a2 * xi2, h)
    e1, e2 = shear_frame(p0, pr)
    D = pif - pis
    return np.array([a1, a2, float(D @ e1), float(D @ e2)])


# -- Casimir-gradient projection ------------------------------------------


def casimir_project(alpha, mu0, casimir_gradients: Sequence[Callable | np.ndarray]) -> np.ndarray:
    """Remove from ``alpha`` its components along the Casimir gradients at ``mu0``.

    Gradients may be callables (evaluated at ``mu0``) or arrays. They are
    orthonormalised (modified Gram-Schmidt) before projecting.
    """
    alpha = np.array(alpha, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    basis: list[np.ndarray] = []
    for g in casimir_gradients:
        v = np.array(g(mu0) if callable(g) else g, dtype=float)
        n0 = float(np.linalg.norm(v))
        if n0 == 0.0:
            raise DegenerateProjectionError("Casimir gradient vanishes at mu0")
        for q in basis:
            v -= (q @ v) * q
        n = float(np.linalg.norm(v))
        if n <= 1e-12 * n0:
            raise DegenerateProjectionError("Casimir gradients are linearly dependent at mu0")
        basis.append(v / n)
    for q in basis:
        alpha -= (q @ alpha) * q
    return alpha


# -- per-system dispatch for training tables and prediction ----------------

TARGET_DIMS = {"rigid-body": 3, "pendulum-ext": 2, "particle-b": 4, "kirchhoff": 4}


def extract_row(system: str, y0, yf, h: float, tol: float = CASIMIR_TOL) -> np.ndarray:
    """Network target for one pair as a flat vector."""
    if system == "rigid-body":
        return so3_extract(y0, yf, h, tol)
    if system == "pendulum-ext":
        return np.array(pendulum_extract(y0, yf, h, tol).alpha[:2])
    if system == "particle-b":
        return particle_extract(y0, yf, h).as_array()
    if system == "kirchhoff":
        return se3_extract(y0, yf, h, tol)
    raise KeyError(f"no extractor for system {system!r}")


def apply_row(system: str, y, row, h: float) -> np.ndarray:
    """One prediction step from a flat parameter vector (inverse of :func:`extract_row`)."""
    row = np.asarray(row, dtype=float)
    if system == "rigid-body":
        return so3_map(y, row, h)
    if system == "pendulum-ext":
        return pendulum_composite(y, (row[0], row[1], 0.0), h)
    if system == "particle-b":
        return particle_composite(y, row, h)
    if system == "kirchhoff":
        return se3_step(y, row, h)
    raise KeyError(f"no map for system {system!r}")


def extract_table(system: str, inputs, targets, h: float, tol: float = CASIMIR_TOL) -> np.ndarray:
    """Targets for every pair; collects all inconsistent rows before raising."""
    inputs = np.atleast_2d(inputs)
    targets = np.atleast_2d(targets)
    out = np.empty((len(inputs), TARGET_DIMS[system]))
    bad: list[int] = []
    for i, (a, b) in enumerate(zip(inputs, targets)):
        try:
            out[i] = extract_row(system, a, b, h, tol)
        except DataInconsistencyError:
            bad.append(i)
    if bad:
        shown = ", ".join(map(str, bad[:20])) + (" ..." if len(bad) > 20 else "")
        raise DataInconsistencyError(f"{len(bad)} pair(s) break Casimir matching: rows {shown}", bad)
    return out


def roundtrip_residuals(system: str, inputs, targets, table, h: float) -> np.ndarray:
    """Max-norm error of re-applying the extracted parameters, per pair."""
    return np.array(
        [np.max(np.abs(apply_row(system, a, row, h) - b)) for a, b, row in zip(inputs, targets, table)]
    )
