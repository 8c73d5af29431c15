"""Benchmark Poisson systems: rigid body, extended pendulum, charged particle, Kirchhoff.

Every system is written as ``y_dot = B(y) @ grad H(y)`` and bundled into a
:class:`PoissonSystem`; the explicit right-hand sides below are the same
equations in their textbook component form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lie import hat

StateFn = Callable[[np.ndarray], np.ndarray]
ScalarFn = Callable[[np.ndarray], float]


class SingularityError(ArithmeticError):
    """State too close to a singular point of the field or potential."""


@dataclass(frozen=True)
class Invariant:
    name: str
    value: ScalarFn
    grad: StateFn | None = None


@dataclass(frozen=True)
class PoissonSystem:
    name: str
    dim: int
    rhs: StateFn
    hamiltonian: ScalarFn
    grad_hamiltonian: StateFn
    poisson_tensor: Callable[[np.ndarray], np.ndarray]
    casimirs: tuple[Invariant, ...] = ()
    extra_invariants: tuple[Invariant, ...] = ()
    params: dict = field(default_factory=dict)


def _positive_diag(values: Sequence[float], what: str) -> np.ndarray:
    d = np.asarray(values, dtype=float).reshape(3)
    if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
        raise ValueError(f"{what} must have strictly positive finite diagonal, got {d}")
    return d


@dataclass(frozen=True)
class RigidBodyParams:
    inertia: tuple[float, float, float] = (1.0, 2.0, 3.0)

    def __post_init__(self):
        _positive_diag(self.inertia, "inertia")


@dataclass(frozen=True)
class KirchhoffParams:
    inertia: tuple[float, float, float] = (1.0, 2.0, 1.0)
    mass: tuple[float, float, float] = (1.0, 2.0, 1.0)

    def __post_init__(self):
        _positive_diag(self.inertia, "inertia")
        _positive_diag(self.mass, "mass")


# -- rigid body ------------------------------------------------------------

def rigid_body_rhs(pi, params: RigidBodyParams = RigidBodyParams()) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    return -np.cross(pi / np.asarray(params.inertia), pi)


def rigid_body_system(params: RigidBodyParams = RigidBodyParams()) -> PoissonSystem:
    inv = 1.0 / np.asarray(params.inertia, dtype=float)
    return PoissonSystem(
        name="rigid-body",
        dim=3,
        rhs=lambda y: rigid_body_rhs(y, params),
        hamiltonian=lambda y: 0.5 * float(np.dot(y, inv * y)),
        grad_hamiltonian=lambda y: inv * y,
        poisson_tensor=hat,
        casimirs=(Invariant("C", lambda y: float(np.dot(y, y)), lambda y: 2.0 * np.asarray(y)),),
        params={"inertia": list(params.inertia)},
    )


# -- extended pendulum -----------------------------------------------------

def pendulum_tensor(y) -> np.ndarray:
    u, v, _ = y
    return np.array([[0.0, -1.0, -2.0 * v], [1.0, 0.0, 2.0 * u], [2.0 * v, -2.0 * u, 0.0]])


def pendulum_energy(y) -> float:
    u, v, r = y
    return 0.5 * u * u - np.cos(v) + u * r - u**3 - u * v * v


def pendulum_energy_grad(y) -> np.ndarray:
    u, v, r = y
    return np.array([u + r - 3.0 * u * u - v * v, np.sin(v) - 2.0 * u * v, u])


def pendulum_casimir(y) -> float:
    u, v, r = y
    return r - u * u - v * v


def pendulum_casimir_grad(y) -> np.ndarray:
    u, v, _ = y
    return np.array([-2.0 * u, -2.0 * v, 1.0])


def pendulum_ext_rhs(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return pendulum_tensor(y) @ pendulum_energy_grad(y)


def pendulum_system() -> PoissonSystem:
    return PoissonSystem(
        name="pendulum-ext",
        dim=3,
        rhs=pendulum_ext_rhs,
        hamiltonian=pendulum_energy,
        grad_hamiltonian=pendulum_energy_grad,
        poisson_tensor=pendulum_tensor,
        casimirs=(Invariant("C", pendulum_casimir, pendulum_casimir_grad),),
    )


# -- charged particle in B = (0, 0, |x_perp|), phi = 1 / (100 |x_perp|) ----------

_PARTICLE_R2_MIN = 1e-12


def _radius(x1: float, x2: float) -> float:
    r2 = x1 * x1 + x2 * x2
    if r2 < _PARTICLE_R2_MIN:
        raise SingularityError(f"particle at distance {np.sqrt(r2):.3e} from the axis")
    return float(np.sqrt(r2))


def particle_field(x) -> np.ndarray:
    return np.array([0.0, 0.0, _radius(x[0], x[1])])


def particle_rhs(state) -> np.ndarray:
    """Full 6-dimensional field for ``state = (p, x)`` with q = m = 1."""
    state = np.asarray(state, dtype=float)
    p, x = state[:3], state[3:]
    r = _radius(x[0], x[1])
    dphi = np.array([-x[0], -x[1], 0.0]) / (100.0 * r**3)
    # p_dot = -B x dH/dp - dH/dx, x_dot = dH/dp
    return np.concatenate([-np.cross([0.0, 0.0, r], p) - dphi, p])


def particle_energy(y) -> float:
    """H on the planar state ``(p1, p2, x1, x2)``."""
    p1, p2, x1, x2 = y
    return 0.5 * (p1 * p1 + p2 * p2) + 1.0 / (100.0 * _radius(x1, x2))


def particle_energy_grad(y) -> np.ndarray:
    p1, p2, x1, x2 = y
    r = _radius(x1, x2)
    return np.array([p1, p2, -x1 / (100.0 * r**3), -x2 / (100.0 * r**3)])


def particle_momentum_integral(y) -> float:
    """``x1 p2 - x2 p1 + (x1^2 + x2^2)^(3/2) / 3``, conserved in planar motion."""
    p1, p2, x1, x2 = y
    return x1 * p2 - x2 * p1 + (x1 * x1 + x2 * x2) ** 1.5 / 3.0


def particle_tensor(y) -> np.ndarray:
    _, _, x1, x2 = y
    b3 = _radius(x1, x2)
    return np.array(
        [
            [0.0, b3, -1.0, 0.0],
            [-b3, 0.0, 0.0, -1.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
        ]
    )


def particle_planar_rhs(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return particle_tensor(y) @ particle_energy_grad(y)


def particle_system() -> PoissonSystem:
    return PoissonSystem(
        name="particle-b",
        dim=4,
        rhs=particle_planar_rhs,
        hamiltonian=particle_energy,
        grad_hamiltonian=particle_energy_grad,
        poisson_tensor=particle_tensor,
        casimirs=(),
        extra_invariants=(Invariant("I", particle_momentum_integral),),
    )


def planar_to_full(y) -> np.ndarray:
    p1, p2, x1, x2 = y
    return np.array([p1, p2, 0.0, x1, x2, 0.0])


def full_to_planar(state) -> np.ndarray:
    s = np.asarray(state, dtype=float)
    return np.array([s[0], s[1], s[3], s[4]])


# -- Kirchhoff (SE(3)) -----------------------------------------------------

def kirchhoff_rhs(pi, p, params: KirchhoffParams = KirchhoffParams()) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    p = np.asarray(p, dtype=float)
    w = pi / np.asarray(params.inertia)
    v = p / np.asarray(params.mass)
    return np.concatenate([-np.cross(w, pi) - np.cross(v, p), -np.cross(w, p)])


def se3_tensor(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    B = np.zeros((6, 6))
    B[:3, :3] = hat(y[:3])
    B[:3, 3:] = hat(y[3:])
    B[3:, :3] = hat(y[3:])
    return B


def kirchhoff_system(params: KirchhoffParams = KirchhoffParams()) -> PoissonSystem:
    inv = np.concatenate([1.0 / np.asarray(params.inertia), 1.0 / np.asarray(params.mass)])
    return PoissonSystem(
        name="kirchhoff",
        dim=6,
        rhs=lambda y: kirchhoff_rhs(y[:3], y[3:], params),
        hamiltonian=lambda y: 0.5 * float(np.dot(y, inv * y)),
        grad_hamiltonian=lambda y: inv * np.asarray(y),
        poisson_tensor=se3_tensor,
        casimirs=(
            Invariant("C1", lambda y: float(np.dot(y[3:], y[3:])), lambda y: np.concatenate([np.zeros(3), 2.0 * y[3:]])),
            Invariant("C2", lambda y: float(np.dot(y[:3], y[3:])), lambda y: np.concatenate([y[3:], y[:3]])),
        ),
        params={"inertia": list(params.inertia), "mass": list(params.mass)},
    )


# -- registry --------------------------------------------------------------

SYSTEM_NAMES = ("rigid-body", "pendulum-ext", "particle-b", "kirchhoff")


def get_system(name: str, **params) -> PoissonSystem:
    if name == "rigid-body":
        return rigid_body_system(RigidBodyParams(**{k: tuple(v) for k, v in params.items()}))
    if name == "pendulum-ext":
        return pendulum_system()
    if name == "particle-b":
        return particle_system()
    if name == "kirchhoff":
        return kirchhoff_system(KirchhoffParams(**{k: tuple(v) for k, v in params.items()}))
    raise KeyError(f"unknown system {name!r}; expected one of {', '.join(SYSTEM_NAMES)}")


def invariants_report(system: PoissonSystem, state) -> list[tuple[str, float]]:
    y = np.asarray(state, dtype=float)
    out = [("H", float(system.hamiltonian(y)))]
    out += [(c.name, float(c.value(y))) for c in system.casimirs]
    out += [(q.name, float(q.value(y))) for q in system.extra_invariants]
    return out
