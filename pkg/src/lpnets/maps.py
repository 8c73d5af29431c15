"""Closed-form flows of the linear test Hamiltonians.

Each map is the exact time-``t`` flow of ``H = <alpha, y>`` for the bracket
of its system, so it is a Poisson map and keeps every Casimir of that
bracket up to round-off.

Sign conventions follow the equations of motion, not prose descriptions:

* rigid body, ``H = A.Pi``: ``Pi_dot = -A x Pi``, i.e. a rotation about
  ``A/|A|`` by the angle ``-|A| t``;
* particle, ``H = alpha.p``: ``p_dot = -B x alpha`` gives
  ``p1 += alpha2 * Phi``, ``p2 -= alpha1 * Phi`` with ``Phi = int_0^t B3``.
  (A form without the ``alpha`` factors and with the opposite sign does not
  match integration of the particle equations; the test suite checks this.)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .lie import PreconditionError, rotate

# -- SO(3) -----------------------------------------------------------------


@dataclass(frozen=True)
class So3MapParams:
    A: tuple[float, float, float]


def so3_map(pi0, A, t: float) -> np.ndarray:
    """Flow of ``Pi_dot = -A x Pi`` for time ``t``."""
    pi0 = np.asarray(pi0, dtype=float)
    A = np.asarray(A, dtype=float)
    w = float(np.linalg.norm(A))
    if w == 0.0 or t == 0:
        return pi0.copy()
    return rotate(pi0, A / w, -w * t)


# -- extended pendulum -----------------------------------------------------


@dataclass(frozen=True)
class PendulumMapParams:
    alpha: tuple[float, float, float]


def pendulum_T1(y0, alpha1: float, t: float) -> np.ndarray:
    y1, y2, y3 = np.asarray(y0, dtype=float)
    d = alpha1 * t
    return np.array([y1, y2 + d, y3 + 2.0 * d * y2 + d * d])


def pendulum_T2(y0, alpha2: float, t: float) -> np.ndarray:
    y1, y2, y3 = np.asarray(y0, dtype=float)
    d = alpha2 * t
    return np.array([y1 - d, y2, y3 - 2.0 * d * y1 + d * d])


def pendulum_T3(y0, alpha3: float, t: float) -> np.ndarray:
    y1, y2, y3 = np.asarray(y0, dtype=float)
    c, s = np.cos(2.0 * alpha3 * t), np.sin(2.0 * alpha3 * t)
    return np.array([c * y1 - s * y2, s * y1 + c * y2, y3])


def pendulum_composite(y0, alpha, h: float) -> np.ndarray:
    """``T3 o T2 o T1`` with three equal sub-steps ``h/3``."""
    if isinstance(alpha, PendulumMapParams):
        alpha = alpha.alpha
    a1, a2, a3 = np.asarray(alpha, dtype=float)
    dt = h / 3.0
    return pendulum_T3(pendulum_T2(pendulum_T1(y0, a1, dt), a2, dt), a3, dt)


# -- charged particle ------------------------------------------------------

_PHI_SMALL_ALPHA = 1e-6


def phi_quadrature(t: float, X, alpha) -> float:
    """``int_0^t |X + alpha s| ds`` by adaptive quadrature."""
    X = np.asarray(X, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if t == 0:
        return 0.0
    aa = float(alpha @ alpha)
    if aa == 0.0:
        return float(np.linalg.norm(X)) * t
    lo, hi = sorted((0.0, float(t)))
    # split at the closest approach, where the integrand has a (near-)kink
    s_star = -float(X @ alpha) / aa
    cuts = [lo, s_star, hi] if lo < s_star < hi else [lo, hi]

    def integrand(s):
        return float(np.hypot(X[0] + alpha[0] * s, X[1] + alpha[1] * s))

    with warnings.catch_warnings():
        # the tolerances sit at round-off level; quad says so when it gets there
        warnings.simplefilter("ignore", IntegrationWarning)
        val = sum(quad(integrand, a, b, epsabs=1e-15, epsrel=1e-14, limit=500)[0] for a, b in zip(cuts, cuts[1:]))
    return val if t > 0 else -val


def phi_closed_form(t: float, X, alpha) -> float:
    """Antiderivative ``Phi(t)`` of ``|X + alpha s|``; use differences ``Phi(t) - Phi(0)``.

    The logarithm is evaluated as ``log(cross^2) - log(A r - w)`` when
    ``w < 0`` so that the argument never suffers cancellation.
    """
    X = np.asarray(X, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    A = float(np.hypot(alpha[0], alpha[1]))
    if A <= 1e-9:
        raise PreconditionError("phi_closed_form needs |alpha| > 1e-9; use phi_quadrature")
    x1, x2 = X[0] + alpha[0] * t, X[1] + alpha[1] * t
    r = float(np.hypot(x1, x2))
    w = float(X @ alpha) + A * A * t
    cross = X[0] * alpha[1] - X[1] * alpha[0]
    c2 = cross * cross
    if c2 == 0.0:
        log_term = 0.0
    elif w >= 0.0:
        log_term = c2 * np.log(A * r + w)
    else:
        log_term = c2 * (np.log(c2) - np.log(A * r - w))
    return (A * w * r + log_term) / (2.0 * A**3)


def phi_increment(t: float, X, alpha) -> float:
    """``int_0^t B3(X + alpha s) ds``: closed form, quadrature for tiny ``|alpha|``."""
    alpha = np.asarray(alpha, dtype=float)
    if float(np.hypot(alpha[0], alpha[1])) < _PHI_SMALL_ALPHA:
        return phi_quadrature(t, X, alpha)
    return phi_closed_form(t, X, alpha) - phi_closed_form(0.0, X, alpha)


@dataclass(frozen=True)
class ParticleMapParams:
    alpha: tuple[float, float]
    beta: tuple[float, float]

    def as_array(self) -> np.ndarray:
        return np.array([*self.alpha, *self.beta], dtype=float)

    @classmethod
    def from_array(cls, v) -> "ParticleMapParams":
        v = np.asarray(v, dtype=float)
        return cls((v[0], v[1]), (v[2], v[3]))


def particle_T1(state, alpha, t: float) -> np.ndarray:
    """Flow of ``H = alpha.p`` on ``(p1, p2, x1, x2)``."""
    p1, p2, x1, x2 = np.asarray(state, dtype=float)
    a1, a2 = np.asarray(alpha, dtype=float)
    if a1 == 0.0 and a2 == 0.0:
        return np.array([p1, p2, x1, x2])
    dphi = phi_increment(t, (x1, x2), (a1, a2))
    return np.array([p1 + a2 * dphi, p2 - a1 * dphi, x1 + a1 * t, x2 + a2 * t])


def particle_T2(state, beta, t: float) -> np.ndarray:
    """Flow of ``H = beta.x``: a constant force."""
    p1, p2, x1, x2 = np.asarray(state, dtype=float)
    b1, b2 = np.asarray(beta, dtype=float)
    return np.array([p1 - b1 * t, p2 - b2 * t, x1, x2])


def particle_composite(state, params, h: float) -> np.ndarray:
    """``T2(h/2) o T1(h/2)``; ``params`` is ``(a1, a2, b1, b2)`` or :class:`ParticleMapParams`."""
    v = params.as_array() if isinstance(params, ParticleMapParams) else np.asarray(params, dtype=float)
    return particle_T2(particle_T1(state, v[:2], 0.5 * h), v[2:], 0.5 * h)


# -- SE(3) -----------------------------------------------------------------


@dataclass(frozen=True)
class Se3MapParams:
    A: tuple[float, float, float]
    b: tuple[float, float, float]


def se3_rotate(pi0, p0, A, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Flow of ``H = A.Pi``: both vectors rotate together."""
    pi0 = np.asarray(pi0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    A = np.asarray(A, dtype=float)
    w = float(np.linalg.norm(A))
    if w == 0.0 or t == 0:
        return pi0.copy(), p0.copy()
    n = A / w
    return rotate(pi0, n, -w * t), rotate(p0, n, -w * t)


def se3_shear(pi0, p0, b, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Flow of ``H = b.p``: ``Pi_dot = -b x p`` with ``p`` fixed."""
    p0 = np.asarray(p0, dtype=float)
    return np.asarray(pi0, dtype=float) - t * np.cross(b, p0), p0.copy()


def se3_map(pi0, p0, params: Se3MapParams, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Rotation generated by ``A.Pi`` followed by the shear generated by ``b.p``."""
    pi1, p1 = se3_rotate(pi0, p0, params.A, t)
    return se3_shear(pi1, p1, params.b, t)



_E1 = np.array([1.0, 0.0, 0.0])
_E2 = np.array([0.0, 1.0, 0.0])
FRAME_TOL = 1e-8


class FrameDegeneracyError(PreconditionError):
    """The normal-plane frame is undefined (zero ``p``)."""


def normal_frame(p) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal pair spanning the plane normal to ``p``.

    Built from ``p x e1``; switches to ``e2`` when ``p`` is (nearly) along ``e1``.
    """
    p = np.asarray(p, dtype=float)
    pn = float(np.linalg.norm(p))
    if pn == 0.0:
        raise FrameDegeneracyError("no plane normal to p = 0")
    c = np.cross(p, _E1)
    if np.linalg.norm(c) < FRAME_TOL * max(pn, 1.0):
        c = np.cross(p, _E2)
    xi1 = c / np.linalg.norm(c)
    xi2 = np.cross(p, xi1) / pn
    return xi1, xi2


def shear_frame(p0, pf) -> tuple[np.ndarray, np.ndarray]:
    """``E1 = p0 x pf`` normalised and ``E2 = E1 x pf`` normalised; both normal to ``pf``.

    Falls back to :func:`normal_frame` of ``pf`` when ``p0`` and ``pf`` are parallel.
    """
    p0 = np.asarray(p0, dtype=float)
    pf = np.asarray(pf, dtype=float)
    c = np.cross(p0, pf)
    cn = float(np.linalg.norm(c))
    if cn < 1e-12 * float(np.dot(pf, pf)):
        return normal_frame(pf)
    u = pf / np.linalg.norm(pf)
    e1 = c / cn
    # when p0 ~ pf the cross product carries relative round-off; one
    # Gram-Schmidt pass restores orthogonality to pf at the ulp level
    e1 = e1 - np.dot(e1, u) * u
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e1, u)
    e2 = e2 - np.dot(e2, u) * u
    return e1, e2 / np.linalg.norm(e2)


def se3_step(y, coeffs, h: float) -> np.ndarray:
    """One LPNets step for Kirchhoff from the four coefficients ``(a1, a2, bt1, bt2)``.

    ``A = a1 xi1 + a2 xi2`` in the frame normal to ``p``; both momenta are rotated
    by the flow of ``A.Pi`` over ``h``; then ``Pi`` is sheared by
    ``bt1 E1 + bt2 E2`` in the frame normal to the new ``p``.
    """
    y = np.asarray(y, dtype=float)
    a1, a2, bt1, bt2 = np.asarray(coeffs, dtype=float)
    pi0, p0 = y[:3], y[3:]
    xi1, xi2 = normal_frame(p0)
    pis, pf = se3_rotate(pi0, p0, a1 * xi1 + a2 * xi2, h)
    e1, e2 = shear_frame(p0, pf)
    return np.concatenate([pis + bt1 * e1 + bt2 * e2, pf])


def shear_generator(delta, p, t: float) -> np.ndarray:
    """The ``b`` whose shear flow over ``t`` adds ``delta`` (normal to ``p``) to ``Pi``."""
    p = np.asarray(p, dtype=float)
    return np.cross(delta, p) / (float(np.dot(p, p)) * t)
