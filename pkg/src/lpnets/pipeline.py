"""Experiment stages shared by the command line and the acceptance tests.

Each stage is a plain function on in-memory objects; :mod:`lpnets.cli`
adds configuration parsing, run directories and files around them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import glpnets, mlp
from .fit import TARGET_DIMS, apply_row, extract_table, roundtrip_residuals
from .ode import DataPairs, Trajectory, integrate, make_pairs, sample_cube
from .rollout import ConservationSeries, WindowTooShortError, conservation_series, discrepancy, log_slope, rollout
from .systems import PoissonSystem, get_system

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name)
    if not isinstance(sec, dict):
        raise ConfigError(f"config needs a '{name}' object")
    return sec


def make_system(cfg: dict) -> PoissonSystem:
    sec = _section(cfg, "system")
    try:
        return get_system(sec["name"], **sec.get("params", {}))
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad system parameters: {exc}") from exc


def initial_conditions(sec: dict, dim: int, seed: int) -> np.ndarray:
    """Explicit ``initial_conditions`` list, or a seeded ``sample`` cube."""
    if "initial_conditions" in sec:
        ics = np.array(sec["initial_conditions"], dtype=float).reshape(-1, dim) if sec["initial_conditions"] else np.empty((0, dim))
    elif "sample" in sec:
        s = sec["sample"]
        ics = sample_cube(s["center"], float(s["half_width"]), int(s["count"]), int(s.get("seed", seed)))
    else:
        raise ConfigError("give either 'initial_conditions' or 'sample'")
    if ics.shape[1:] != (dim,):
        raise ConfigError(f"initial conditions must have {dim} components")
    return ics


# -- generate --------------------------------------------------------------


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    pairs: DataPairs | None
    step: float


def generate(cfg: dict) -> Dataset:
    system = make_system(cfg)
    data = _section(cfg, "data")
    h = float(data.get("h", 0.1))
    t_end = float(data["t_end"])
    ics = initial_conditions(data, system.dim, int(cfg.get("seed", 0)))
    rtol = float(data.get("rtol", 1e-13))
    atol = float(data.get("atol", 1e-14))
    if len(ics) == 0:
        log.warning("no initial conditions: nothing to generate")
        return Dataset([], None, h)
    trajs = [integrate(system.rhs, y0, t_end, h, rtol, atol) for y0 in ics]
    pairs = DataPairs.concat([make_pairs(t) for t in trajs])
    return Dataset(trajs, pairs, h)


# -- fit -------------------------------------------------------------------


@dataclass
class FitResult:
    table: np.ndarray
    residuals: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max()) if self.residuals.size else 0.0


class ResidualError(ArithmeticError):
    pass


def fit_targets(cfg: dict, pairs: DataPairs) -> FitResult:
    name = _section(cfg, "system")["name"]
    sec = cfg.get("fit", {})
    tol = float(sec.get("casimir_tol", 1e-8))
    table = extract_table(name, pairs.inputs, pairs.targets, pairs.step, tol)
    res = roundtrip_residuals(name, pairs.inputs, pairs.targets, table, pairs.step)
    limit = float(sec.get("max_residual", 1e-9))
    if res.size and res.max() > limit:
        worst = int(np.argmax(res))
        raise ResidualError(f"round-trip residual {res.max():.3e} exceeds {limit:.1e} (row {worst})")
    return FitResult(table, res)


# -- train -----------------------------------------------------------------


def train_config(sec: dict, seed: int) -> mlp.TrainConfig:
    keys = {"lr_start", "lr_end", "epochs", "split", "batch", "target_mse", "log_every"}
    kw = {k: sec[k] for k in keys if k in sec}
    try:
        return mlp.TrainConfig(seed=int(sec.get("seed", seed)), **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train section: {exc}") from exc


def train_mlp(cfg: dict, pairs: DataPairs, table: np.ndarray) -> mlp.TrainResult:
    name = _section(cfg, "system")["name"]
    sec = _section(cfg, "train")
    seed = int(cfg.get("seed", 0))
    layers = list(sec["layers"])
    if layers[0] != pairs.inputs.shape[1] or layers[-1] != TARGET_DIMS[name]:
        raise ConfigError(
            f"layers {layers} do not fit {pairs.inputs.shape[1]} inputs and {TARGET_DIMS[name]} outputs"
        )
    model = mlp.build(layers, seed)
    return mlp.train(model, pairs.inputs, table, train_config(sec, seed))


def train_glpnets(cfg: dict, pairs: DataPairs) -> tuple[glpnets.GlpnetsModel, glpnets.BfgsResult]:
    sec = _section(cfg, "train")
    if _section(cfg, "system")["name"] != "rigid-body":
        raise ConfigError("G-LPNets is implemented for the rigid body only")
    model = glpnets.cyclic_model(int(sec.get("modules", 6)), pairs.step, seed=int(sec.get("seed", cfg.get("seed", 0))))
    target = sec.get("target_loss", 5e-10)
    return glpnets.fit(
        model,
        pairs.inputs,
        pairs.targets,
        max_iters=int(sec.get("max_iters", 3500)),
        target=None if target is None else float(target),
        tol=float(sec.get("gtol", 1e-14)),
    )


# -- predict ---------------------------------------------------------------


def lpnets_stepper(system_name: str, model: mlp.MlpModel):
    """``(predictor, map_applier)`` pair for :func:`rollout`."""
    return (lambda y: mlp.forward(model, y)), (lambda y, row, h: apply_row(system_name, y, row, h))


def glpnets_stepper(model: glpnets.GlpnetsModel):
    return (lambda y: None), (lambda y, _row, _h: glpnets.model_apply(y, model))


@dataclass
class Prediction:
    rollout: Trajectory
    truth: Trajectory | None
    conservation: ConservationSeries
    truth_conservation: ConservationSeries | None
    discrepancy: np.ndarray | None
    summary: dict[str, Any] = field(default_factory=dict)


def prediction_starts(cfg: dict, system: PoissonSystem, dataset: Dataset | None) -> np.ndarray:
    sec = _section(cfg, "predict")
    if sec.get("from_data_end"):
        if dataset is None or not dataset.trajectories:
            raise ConfigError("predict.from_data_end needs generated trajectories")
        return np.array([t.states[-1] for t in dataset.trajectories])
    return initial_conditions(sec, system.dim, int(cfg.get("seed", 0)) + 7)


def predict(cfg: dict, stepper, starts: np.ndarray) -> list[Prediction]:
    system = make_system(cfg)
    sec = _section(cfg, "predict")
    h = float(_section(cfg, "data").get("h", 0.1))
    steps = int(sec.get("steps", 1000))
    slope_from = sec.get("slope_from")
    with_truth = bool(sec.get("ground_truth", True))
    predictor, applier = stepper
    out = []
    for y0 in starts:
        traj = rollout(predictor, applier, y0, steps, h)
        truth = integrate(system.rhs, y0, steps * h, h) if with_truth and steps > 0 else None
        cons = conservation_series(traj, system)
        tcons = conservation_series(truth, system) if truth is not None else None
        disc = discrepancy(traj, truth) if truth is not None else None
        summary = {
            "start": [float(v) for v in y0],
            "steps": steps,
            "t_end": float(traj.times[-1]),
            "max_rel_drift": {n: cons.max_rel(n) for n in cons.names},
            "absolute_fallback": dict(zip(cons.names, cons.absolute_fallback)),
        }
        if tcons is not None:
            summary["truth_max_rel_drift"] = {n: tcons.max_rel(n) for n in tcons.names}
        if disc is not None:
            summary["final_discrepancy"] = float(disc[-1])
            summary["max_discrepancy"] = float(disc.max())
            if slope_from is not None:
                try:
                    summary["discrepancy_log_slope"] = log_slope(traj.times, disc, float(slope_from))[0]
                except WindowTooShortError:
                    summary["discrepancy_log_slope"] = None
        out.append(Prediction(traj, truth, cons, tcons, disc, summary))
    return out
