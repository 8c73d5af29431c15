"""Small-dimensional Lie algebra helpers for so(3) and se(3).

Vectors are plain ``numpy`` arrays of shape ``(3,)``; matrices are ``(3, 3)``.
Structure tensors are stored dense as ``c[d, a, b] = C^d_{ab}``.
"""

from __future__ import annotations

import numpy as np

UNIT_TOL = 1e-12
_SMALL_ANGLE = 1e-8


class PreconditionError(ValueError):
    """Raised when an input violates a documented precondition."""


def hat(v) -> np.ndarray:
    """Antisymmetric matrix with ``hat(v) @ w == np.cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix by ``angle`` (radians) about a unit ``axis``."""
    n = np.asarray(axis, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
        raise PreconditionError(f"rotation axis must be unit length, got |n| = {np.linalg.norm(n)!r}")
    K = hat(n)
    if abs(angle) < _SMALL_ANGLE:
        # sin(x) ~ x, 1 - cos(x) ~ x^2/2
        s, c1 = angle, 0.5 * angle * angle
    else:
        s, c1 = np.sin(angle), 1.0 - np.cos(angle)
    return np.eye(3) + s * K + c1 * (K @ K)


def rotate(v, axis, angle: float) -> np.ndarray:
    """Rotate ``v`` by ``angle`` about the unit ``axis`` (vector form of Rodrigues).

    Cheaper and slightly more accurate than building the matrix; ``axis`` is
    assumed unit length and is not checked.
    """
    v = np.asarray(v, dtype=float)
    n = np.asarray(axis, dtype=float)
    if abs(angle) < _SMALL_ANGLE:
        s, c1 = angle, 0.5 * angle * angle
    else:
        s, c1 = np.sin(angle), 1.0 - np.cos(angle)
    nxv = np.cross(n, v)
    return v + s * nxv + c1 * np.cross(n, nxv)


def rotate_many(v: np.ndarray, axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Row-wise :func:`rotate` for arrays of shape ``(N, 3)`` and angles ``(N,)``."""
    angle = np.asarray(angle, dtype=float)[:, None]
    small = np.abs(angle) < _SMALL_ANGLE
    s = np.where(small, angle, np.sin(angle))
    c1 = np.where(small, 0.5 * angle * angle, 1.0 - np.cos(angle))
    nxv = np.cross(axis, v)
    return v + s * nxv + c1 * np.cross(axis, nxv)


def is_rotation(R, tol: float = UNIT_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    return bool(np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0.0) and abs(np.linalg.det(R) - 1.0) <= tol)


# -- structure constants ---------------------------------------------------

def levi_civita() -> np.ndarray:
    eps = np.zeros((3, 3, 3))
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        eps[a, b, c] = 1.0
        eps[b, a, c] = -1.0
    return eps


def structure_so3() -> np.ndarray:
    """``c[d, a, b]`` for ``[e_a, e_b] = eps_{abd} e_d``."""
    eps = levi_civita()
    return np.transpose(eps, (2, 0, 1)).copy()


def structure_se3() -> np.ndarray:
    """se(3) in the basis (rotations e_1..e_3, translations f_1..f_3).

    ``[e_a, e_b] = eps_{abc} e_c``, ``[e_a, f_b] = eps_{abc} f_c``, ``[f_a, f_b] = 0``.
    """
    eps_t = structure_so3()
    c = np.zeros((6, 6, 6))
    c[:3, :3, :3] = eps_t
    c[3:, :3, 3:] = eps_t
    c[3:, 3:, :3] = -np.transpose(eps_t, (0, 2, 1))
    return c


def jacobi_residual(c: np.ndarray) -> float:
    """Max |sum over cyclic (a,b,c) of C^e_{ab} C^f_{ec}| over all indices."""
    t = np.einsum("eab,fec->abcf", c, c)
    cyc = t + np.transpose(t, (2, 0, 1, 3)) + np.transpose(t, (1, 2, 0, 3))
    return float(np.max(np.abs(cyc)))


def antisymmetry_residual(c: np.ndarray) -> float:
    return float(np.max(np.abs(c + np.transpose(c, (0, 2, 1)))))


def _check_dims(vec: np.ndarray, c: np.ndarray, what: str) -> None:
    n = c.shape[0]
    if c.shape != (n, n, n) or vec.shape != (n,):
        raise PreconditionError(f"{what} has shape {vec.shape}, structure tensor has {c.shape}")


def lp_matrix_M(alpha, c: np.ndarray, sign: int = 1) -> np.ndarray:
    """Matrix of the linear flow of ``H = <alpha, mu>``: ``mu_dot = M(alpha) @ mu``.

    Entry ``[a, d]`` is ``sign * C^d_{ab} alpha^b``; ``sign`` is the +/- of the
    Lie-Poisson equations (the rigid body and Kirchhoff systems use -1).
    """
    alpha = np.asarray(alpha, dtype=float)
    _check_dims(alpha, c, "alpha")
    return sign * np.einsum("dab,b->ad", c, alpha)


def lp_matrix_N(mu, c: np.ndarray, sign: int = 1) -> np.ndarray:
    """Poisson tensor ``N(mu)[a, b] = sign * C^d_{ab} mu_d``, so ``M(alpha) mu = N(mu) alpha``."""
    mu = np.asarray(mu, dtype=float)
    _check_dims(mu, c, "mu")
    return sign * np.einsum("dab,d->ab", c, mu)


# -- coadjoint actions -----------------------------------------------------

def coad_so3(rot: np.ndarray, pi) -> np.ndarray:
    return np.asarray(rot, dtype=float) @ np.asarray(pi, dtype=float)


def coad_se3(rot: np.ndarray, b, pi, p) -> tuple[np.ndarray, np.ndarray]:
    rot = np.asarray(rot, dtype=float)
    lp = rot @ np.asarray(p, dtype=float)
    return rot @ np.asarray(pi, dtype=float) + np.cross(b, lp), lp
