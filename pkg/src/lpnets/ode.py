"""Ground-truth trajectories, data pairs and initial-condition sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

RTOL = 1e-13
ATOL = 1e-14


class IntegrationError(RuntimeError):
    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last good time {last_time!r})")
        self.last_time = last_time


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("one state per time required")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.states.shape[1]


@dataclass
class DataPairs:
    inputs: np.ndarray
    targets: np.ndarray
    step: float

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.inputs.shape != self.targets.shape:
            raise ValueError(f"inputs {self.inputs.shape} and targets {self.targets.shape} differ")
        if not self.step > 0:
            raise ValueError("step must be positive")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @staticmethod
    def concat(parts: list["DataPairs"]) -> "DataPairs":
        if not parts:
            raise ValueError("nothing to concatenate")
        steps = {p.step for p in parts}
        if len(steps) != 1:
            raise ValueError(f"mixed steps {sorted(steps)}")
        return DataPairs(
            np.vstack([p.inputs for p in parts]), np.vstack([p.targets for p in parts]), parts[0].step
        )


def time_grid(t_end: float, h: float) -> np.ndarray:
    n = int(round(t_end / h))
    if abs(n * h - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError(f"t_end={t_end} is not a multiple of h={h}")
    return h * np.arange(n + 1)


def integrate(
    rhs: Callable[[np.ndarray], np.ndarray],
    y0,
    t_end: float,
    grid_step: float,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> Trajectory:
    """Integrate an autonomous field with DOP853, sampled on ``0, h, ..., t_end``."""
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    if not (rtol > 0 and atol > 0):
        raise ValueError("tolerances must be positive")
    y0 = np.asarray(y0, dtype=float)
    times = time_grid(t_end, grid_step)
    if len(times) == 1:
        return Trajectory(times, y0[None, :])
    try:
        sol = solve_ivp(
            lambda t, y: rhs(y),
            (0.0, times[-1]),
            y0,
            method="DOP853",
            t_eval=times,
            rtol=rtol,
            atol=atol,
        )
    except ArithmeticError as exc:
        raise IntegrationError(str(exc), float("nan")) from exc
    if sol.status != 0:
        last = float(sol.t[-1]) if sol.t.size else 0.0
        raise IntegrationError(sol.message, last)
    # the final grid point is the integrator's own step end, not an interpolant
    return Trajectory(times, sol.y.T.copy())


def flow(rhs, y0, t: float, rtol: float = RTOL, atol: float = ATOL) -> np.ndarray:
    """State after time ``t`` (no grid)."""
    y0 = np.asarray(y0, dtype=float)
    if t == 0:
        return y0.copy()
    sol = solve_ivp(lambda _t, y: rhs(y), (0.0, t), y0, method="DOP853", rtol=rtol, atol=atol)
    if sol.status != 0:
        raise IntegrationError(sol.message, float(sol.t[-1]))
    return sol.y[:, -1].copy()


def make_pairs(traj: Trajectory) -> DataPairs:
    if len(traj) < 2:
        raise ValueError("need at least two trajectory points to form a pair")
    h = float(traj.times[1] - traj.times[0])
    return DataPairs(traj.states[:-1], traj.states[1:], h)


def sample_cube(center, half_width: float, count: int, seed: int) -> np.ndarray:
    """``count`` points uniform in the cube ``center +/- half_width`` (PCG64 stream)."""
    if half_width < 0:
        raise ValueError("half_width must be non-negative")
    center = np.asarray(center, dtype=float)
    rng = np.random.Generator(np.random.PCG64(seed))
    return center + rng.uniform(-half_width, half_width, size=(count, center.size))


# -- CSV -------------------------------------------------------------------

def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def write_trajectory_csv(path, traj: Trajectory) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"s{i}" for i in range(traj.dim)])
        for t, s in zip(traj.times, traj.states):
            w.writerow([_fmt(t)] + [_fmt(v) for v in s])


def read_trajectory_csv(path) -> Trajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Trajectory(data[:, 0], data[:, 1:])


def write_pairs_csv(path, pairs: DataPairs) -> None:
    d = pairs.inputs.shape[1]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"in{i}" for i in range(d)] + [f"out{i}" for i in range(d)])
        for a, b in zip(pairs.inputs, pairs.targets):
            w.writerow([_fmt(v) for v in a] + [_fmt(v) for v in b])


def read_pairs_csv(path, step: float) -> DataPairs:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d = data.shape[1] // 2
    return DataPairs(data[:, :d], data[:, d:], step)
