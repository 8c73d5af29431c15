"""Iterated prediction and diagnostics: drifts, discrepancy, Lyapunov estimate."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .ode import Trajectory, integrate
from .systems import PoissonSystem


class RolloutDivergenceError(ArithmeticError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


class WindowTooShortError(ValueError):
    """Separation saturated before a usable growth window was observed."""


def rollout(
    predictor: Callable[[np.ndarray], np.ndarray],
    map_applier: Callable[[np.ndarray, np.ndarray, float], np.ndarray],
    mu0,
    steps: int,
    h: float,
) -> Trajectory:
    """``mu_{j+1} = map_applier(mu_j, predictor(mu_j), h)`` for ``steps`` steps.

    ``steps = 0`` returns the initial state alone.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    mu = np.array(mu0, dtype=float)
    states = np.empty((steps + 1, mu.size))
    states[0] = mu
    for j in range(steps):
        mu = map_applier(mu, predictor(mu), h)
        if not np.all(np.isfinite(mu)):
            raise RolloutDivergenceError(j + 1)
        states[j + 1] = mu
    return Trajectory(h * np.arange(steps + 1), states)


# -- conservation ---------------------------------------------------------

# below this absolute mean a quantity's drift is reported in absolute terms
ZERO_MEAN = 1e-8


@dataclass
class ConservationSeries:
    times: np.ndarray
    names: list[str]
    values: np.ndarray  # (T, Q) raw values
    relative: np.ndarray  # (Q(t) - Q(0)) / <Q>, or absolute where flagged
    absolute: np.ndarray  # Q(t) - Q(0)
    absolute_fallback: list[bool]

    def max_rel(self, name: str) -> float:
        k = self.names.index(name)
        return float(np.max(np.abs(self.relative[:, k])))


def conservation_series(traj: Trajectory, system: PoissonSystem) -> ConservationSeries:
    """Drift of H, each Casimir and each extra invariant along ``traj``.

    Relative drift is normalised by the absolute mean over the trajectory.
    When that mean is below ``ZERO_MEAN`` (e.g. a Casimir whose level is
    zero) a relative figure means nothing, so the absolute drift is
    reported instead and flagged.
    """
    funcs = [("H", system.hamiltonian)]
    funcs += [(c.name, c.value) for c in system.casimirs]
    funcs += [(q.name, q.value) for q in system.extra_invariants]
    names = [n for n, _ in funcs]
    vals = np.array([[f(y) for _, f in funcs] for y in traj.states], dtype=float).reshape(len(traj), len(funcs))
    absd = vals - vals[0]
    mean = vals.mean(axis=0)
    small = np.abs(mean) < ZERO_MEAN
    flags = [bool(f) for f in small]
    rel = np.where(small[None, :], absd, absd / np.where(small, 1.0, np.abs(mean)))
    return ConservationSeries(traj.times.copy(), names, vals, rel, absd, flags)


def discrepancy(a: Trajectory, b: Trajectory) -> np.ndarray:
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=0.0, atol=1e-9):
        raise ValueError("trajectories are on different time grids")
    return np.linalg.norm(a.states - b.states, axis=1)


def log_slope(times, values, t_min: float = 0.0, t_max: float | None = None) -> tuple[float, float]:
    """Least-squares fit ``log(values) ~ log K + lam * t``; returns ``(lam, K)``."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    sel = (t >= t_min) & (v > 0.0)
    if t_max is not None:
        sel &= t <= t_max
    if sel.sum() < 3:
        raise WindowTooShortError("fewer than three positive samples in the fit window")
    lam, logk = np.polyfit(t[sel], np.log(v[sel]), 1)
    return float(lam), float(np.exp(logk))


# -- Lyapunov exponent --------------------------------------------------------


def project_to_casimirs(system: PoissonSystem, y, levels, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Newton projection of ``y`` onto ``{C_j = levels_j}`` along the Casimir gradients."""
    y = np.array(y, dtype=float)
    cas = system.casimirs
    if not cas:
        return y
    levels = np.asarray(levels, dtype=float)
    for _ in range(max_iter):
        r = np.array([c.value(y) for c in cas]) - levels
        if np.max(np.abs(r)) <= tol * max(1.0, float(np.max(np.abs(levels)))):
            return y
        J = np.array([c.grad(y) for c in cas])  # (d, n)
        y -= J.T @ np.linalg.solve(J @ J.T, r)
    raise ArithmeticError("Casimir projection did not converge")


@dataclass
class LyapunovResult:
    exponent: float
    times: np.ndarray
    mean_log_sep: np.ndarray
    window: tuple[float, float]


def lyapunov_estimate(
    system: PoissonSystem,
    mu0,
    perturbation: float,
    t_max: float,
    h: float,
    directions: int = 32,
    seed: int = 0,
    saturation: float = 1e-2,
) -> LyapunovResult:
    """Leading exponent from the growth of same-Casimir separations.

    ``directions`` perturbations of size ``perturbation`` are drawn at
    random, projected back onto the Casimir level sets of ``mu0``, and
    integrated alongside the reference. The mean of the log separations is
    fitted by least squares over the window where the mean separation stays
    below ``saturation`` times the state norm. Averaging over directions
    removes most of the dependence on the particular perturbation.
    """
    if not perturbation > 0.0:
        raise ValueError("perturbation must be positive")
    if directions < 1:
        raise ValueError("need at least one direction")
    mu0 = np.asarray(mu0, dtype=float)
    levels = [c.value(mu0) for c in system.casimirs]
    ref = integrate(system.rhs, mu0, t_max, h)
    rng = np.random.Generator(np.random.PCG64(seed))
    logs = []
    for _ in range(directions):
        d = rng.normal(size=mu0.size)
        y = project_to_casimirs(system, mu0 + perturbation * d / np.linalg.norm(d), levels)
        other = integrate(system.rhs, y, t_max, h)
        sep = discrepancy(ref, other)
        logs.append(np.log(np.maximum(sep, 1e-300)))
    mean_log = np.mean(logs, axis=0)
    limit = np.log(saturation * float(np.linalg.norm(mu0)))
    over = np.nonzero(mean_log > limit)[0]
    end = int(over[0]) if over.size else len(mean_log)
    if end < 4:
        raise WindowTooShortError("separation saturates within the first steps; lower the perturbation")
    t = ref.times[:end]
    lam, _ = np.polyfit(t, mean_log[:end], 1)
    return LyapunovResult(float(lam), ref.times, mean_log, (float(t[0]), float(t[-1])))


# -- CSV -------------------------------------------------------------------


def write_diagnostics_csv(path, series: ConservationSeries, disc: np.ndarray | None = None) -> None:
    """``t, dH_rel, dC_rel, ..., dH_abs, ..., discrepancy``."""
    head = ["t"] + [f"d{n}_rel" for n in series.names] + [f"d{n}_abs" for n in series.names]
    if disc is not None:
        head.append("discrepancy")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        for k, t in enumerate(series.times):
            row = [t, *series.relative[k], *series.absolute[k]]
            if disc is not None:
                row.append(disc[k])
            w.writerow([repr(float(v)) for v in row])


def write_long_csv(path, series: ConservationSeries, disc: np.ndarray | None = None) -> None:
    """Plot-ready long format ``t, quantity, kind, value``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "quantity", "kind", "value"])
        for k, t in enumerate(series.times):
            for q, n in enumerate(series.names):
                w.writerow([repr(float(t)), n, "rel", repr(float(series.relative[k, q]))])
                w.writerow([repr(float(t)), n, "abs", repr(float(series.absolute[k, q]))])
            if disc is not None:
                w.writerow([repr(float(t)), "discrepancy", "abs", repr(float(disc[k]))])
