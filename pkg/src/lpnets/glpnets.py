"""Global LPNets for the rigid body.

A model is a fixed sequence of rotations about the frame axes
``e1, e2, e3, e1, ...``. Module ``s`` turns its input ``mu`` about
``e_axis`` by the gated angle

    phi_s = a_s * sigmoid(alpha_s * mu[axis]) + b_s.

Because ``mu[axis]`` is unchanged by that rotation, every module is a
Poisson map of the rigid-body bracket (it is the flow of a Hamiltonian
that depends on ``mu[axis]`` only), and ``|mu|^2`` is kept exactly.
The parameters are fit directly by BFGS on the one-step MSE, with
gradients by reverse accumulation through the rotation chain.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import line_search
from scipy.special import expit

log = logging.getLogger(__name__)

# (i, j) plane turned by a rotation about axis k, right-handed
_PLANES = ((1, 2), (2, 0), (0, 1))


@dataclass
class GlpnetsModule:
    axis: int  # 0, 1, 2 for e1, e2, e3
    a: float = 0.0
    alpha: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.axis not in (0, 1, 2):
            raise ValueError(f"axis index must be 0, 1 or 2, got {self.axis}")


@dataclass
class GlpnetsModel:
    modules: list[GlpnetsModule]
    step: float = 0.1

    def __post_init__(self):
        if not self.modules:
            raise ValueError("a model needs at least one module")

    @property
    def sub_step(self) -> float:
        return self.step / len(self.modules)

    @property
    def n_params(self) -> int:
        return 3 * len(self.modules)

    def params(self) -> np.ndarray:
        return np.array([[m.a, m.alpha, m.b] for m in self.modules]).ravel()

    def with_params(self, theta) -> "GlpnetsModel":
        theta = np.asarray(theta, dtype=float).reshape(-1, 3)
        if len(theta) != len(self.modules):
            raise ValueError("parameter vector does not match the module count")
        mods = [GlpnetsModule(m.axis, *map(float, t)) for m, t in zip(self.modules, theta)]
        return GlpnetsModel(mods, self.step)

    @property
    def axes(self) -> list[int]:
        return [m.axis for m in self.modules]


def cyclic_model(n_modules: int, step: float = 0.1, seed: int | None = None) -> GlpnetsModel:
    """Modules on axes e1, e2, e3, e1, ...; random small init if ``seed`` is given, else zeros."""
    mods = [GlpnetsModule(s % 3) for s in range(n_modules)]
    model = GlpnetsModel(mods, step)
    if seed is None:
        return model
    rng = np.random.Generator(np.random.PCG64(seed))
    theta = np.empty((n_modules, 3))
    theta[:, 0] = rng.uniform(-0.1, 0.1, n_modules)
    theta[:, 1] = rng.uniform(-1.0, 1.0, n_modules)
    theta[:, 2] = rng.uniform(-0.1, 0.1, n_modules)
    return model.with_params(theta.ravel())


def _turn(mu: np.ndarray, axis: int, phi) -> np.ndarray:
    i, j = _PLANES[axis]
    c, s = np.cos(phi), np.sin(phi)
    out = mu.copy()
    out[..., i] = c * mu[..., i] - s * mu[..., j]
    out[..., j] = s * mu[..., i] + c * mu[..., j]
    return out


def module_apply(mu0, m: GlpnetsModule) -> np.ndarray:
    mu0 = np.asarray(mu0, dtype=float)
    phi = m.a * expit(m.alpha * mu0[..., m.axis]) + m.b
    return _turn(mu0, m.axis, phi)


def model_apply(mu0, model: GlpnetsModel) -> np.ndarray:
    """Apply the modules in order; ``mu0`` may be a single state or an ``(N, 3)`` batch."""
    mu = np.asarray(mu0, dtype=float)
    for m in model.modules:
        mu = module_apply(mu, m)
    return mu


def loss_and_grad(model: GlpnetsModel, inputs, targets) -> tuple[float, np.ndarray]:
    """Mean over pairs of the squared residual norm, and its exact gradient."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    Y = np.atleast_2d(np.asarray(targets, dtype=float))
    if len(X) == 0:
        raise ValueError("no data pairs")
    # forward, keeping what the backward pass needs
    tape = []
    mu = X
    for m in model.modules:
        g = expit(m.alpha * mu[:, m.axis])
        phi = m.a * g + m.b
        nu = _turn(mu, m.axis, phi)
        tape.append((mu, g, phi, nu))
        mu = nu
    r = mu - Y
    n = len(X)
    loss = float(np.sum(r * r) / n)

    grad = np.empty((len(model.modules), 3))
    G = (2.0 / n) * r
    for s in range(len(model.modules) - 1, -1, -1):
        m = model.modules[s]
        mu, g, phi, nu = tape[s]
        i, j = _PLANES[m.axis]
        k = m.axis
        # d nu_i / d phi = -nu_j, d nu_j / d phi = nu_i
        g_phi = -G[:, i] * nu[:, j] + G[:, j] * nu[:, i]
        dg = g * (1.0 - g)
        grad[s] = (np.dot(g_phi, g), np.dot(g_phi, m.a * dg * mu[:, k]), g_phi.sum())
        c, sn = np.cos(phi), np.sin(phi)
        G_prev = G.copy()
        G_prev[:, i] = c * G[:, i] + sn * G[:, j]
        G_prev[:, j] = -sn * G[:, i] + c * G[:, j]
        G_prev[:, k] = G[:, k] + g_phi * m.a * dg * m.alpha
        G = G_prev
    return loss, grad.ravel()


# -- BFGS --------------------------------------------------------------------


@dataclass
class BfgsResult:
    x: np.ndarray
    loss: float
    iters: int
    status: str
    trace: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status in ("target", "gtol", "max_iters")


def bfgs_minimize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    max_iters: int = 3500,
    tol: float = 1e-14,
    target: float | None = None,
) -> BfgsResult:
    """Full-memory BFGS with a strong-Wolfe line search.

    ``fun`` returns ``(value, gradient)``. Stops when the gradient norm
    drops below ``tol``, the value drops below ``target``, or after
    ``max_iters`` iterations. A failed line search (after one retry along
    steepest descent) ends the run with status ``"line_search_failed"``;
    the best iterate is returned either way.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    cache: dict = {}

    def evaluate(z):
        key = z.tobytes()
        if key not in cache:
            cache.clear()
            v, g = fun(z)
            cache[key] = (float(v), np.array(g, dtype=float))
        return cache[key]

    f, g = evaluate(x)
    H = np.eye(n)
    # first trial step of length about 1/2 along -g, as in the usual BFGS start
    f_prev = f + float(np.linalg.norm(g)) / 2.0
    trace = [(0, f, float(np.linalg.norm(g)))]
    status = "max_iters"
    it = 0
    while True:
        gnorm = float(np.linalg.norm(g))
        if not np.isfinite(f):
            status = "non_finite"
            break
        if target is not None and f < target:
            status = "target"
            break
        if gnorm < tol:
            status = "gtol"
            break
        if it >= max_iters:
            break
        p = -H @ g
        if not float(g @ p) < 0.0:
            H = np.eye(n)
            p = -g
        ls = line_search(
            lambda z: evaluate(z)[0], lambda z: evaluate(z)[1], x, p, gfk=g, old_fval=f, old_old_fval=f_prev
        )
        step = ls[0]
        if step is None and not np.array_equal(H, np.eye(n)):
            H = np.eye(n)
            p = -g
            ls = line_search(lambda z: evaluate(z)[0], lambda z: evaluate(z)[1], x, p, gfk=g, old_fval=f)
            step = ls[0]
        if step is None:
            status = "line_search_failed"
            log.warning("BFGS line search failed at iteration %d (loss %.3e)", it, f)
            break
        s = step * p
        x_new = x + s
        f_new, g_new = evaluate(x_new)
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-300:
            rho = 1.0 / sy
            Hy = H @ y
            H += ((sy + y @ Hy) * rho * rho) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))
        f_prev, f, g, x = f, f_new, g_new, x_new
        it += 1
        trace.append((it, f, float(np.linalg.norm(g))))
    return BfgsResult(x, f, it, status, trace)


def fit(model: GlpnetsModel, inputs, targets, max_iters: int = 3500, target: float | None = 5e-10,
        tol: float = 1e-14) -> tuple[GlpnetsModel, BfgsResult]:
    res = bfgs_minimize(
        lambda th: loss_and_grad(model.with_params(th), inputs, targets),
        model.params(),
        max_iters=max_iters,
        tol=tol,
        target=target,
    )
    return model.with_params(res.x), res


# -- persistence -----------------------------------------------------------


def to_dict(model: GlpnetsModel, extra: dict | None = None) -> dict:
    return {
        "kind": "glpnets",
        "step": model.step,
        "sub_step": model.sub_step,
        "modules": [{"axis": m.axis + 1, "a": m.a, "alpha": m.alpha, "b": m.b} for m in model.modules],
        **(extra or {}),
    }


def from_dict(d: dict) -> GlpnetsModel:
    if d.get("kind") != "glpnets":
        raise ValueError("not a G-LPNets checkpoint")
    mods = [GlpnetsModule(int(m["axis"]) - 1, float(m["a"]), float(m["alpha"]), float(m["b"])) for m in d["modules"]]
    return GlpnetsModel(mods, float(d["step"]))


def save(model: GlpnetsModel, path, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(to_dict(model, extra), indent=1))


def load(path) -> GlpnetsModel:
    return from_dict(json.loads(Path(path).read_text()))


def write_trace_csv(path, trace) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "loss", "grad_norm"])
        for it, f, gn in trace:
            w.writerow([it, repr(float(f)), repr(float(gn))])
