"""``lpnets`` command line: generate -> fit -> train -> predict from one JSON config.

All outputs of one experiment live under ``<out>/<name>-<hash>-<timestamp>/``
where ``hash`` identifies the (seed-resolved) configuration. Later stages
reuse the newest run directory with the same name and hash, so the four
commands can be chained with identical arguments.

Exit codes: 0 success, 2 configuration error, 3 data inconsistency,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import copy
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from importlib import resources
from pathlib import Path
from typing import Iterator

import numpy as np

from . import __version__, glpnets, mlp
from .fit import DataInconsistencyError
from .ode import DataPairs, IntegrationError, Trajectory, read_pairs_csv, read_trajectory_csv, write_pairs_csv, write_trajectory_csv
from .pipeline import (
    ConfigError,
    Dataset,
    ResidualError,
    fit_targets,
    generate,
    glpnets_stepper,
    lpnets_stepper,
    make_system,
    predict,
    prediction_starts,
    train_glpnets,
    train_mlp,
)
from .rollout import RolloutDivergenceError, write_diagnostics_csv, write_long_csv
from .systems import SingularityError

log = logging.getLogger("lpnets")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MANIFEST_VERSION = 1
PRESETS = ("rigid-body-single", "rigid-body-multi", "pendulum-ext", "particle-b", "kirchhoff", "rigid-body-glpnets")


class StageError(RuntimeError):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- config and run directory ----------------------------------------------


def load_config(source: str, seed: int | None = None) -> dict:
    """Read a config file, or a shipped preset by name."""
    path = Path(source)
    try:
        if path.exists():
            text = path.read_text()
        elif source in PRESETS:
            text = resources.files("lpnets.presets").joinpath(f"{source}.json").read_text()
        else:
            raise ConfigError(f"no config file or preset named {source!r}")
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    for sec in ("system", "data"):
        if sec not in cfg:
            raise ConfigError(f"config is missing the '{sec}' section")
    cfg.setdefault("name", cfg["system"].get("name", "experiment"))
    cfg.setdefault("seed", 0)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:10]


def find_run_dir(root: Path, cfg: dict) -> Path | None:
    prefix = f"{cfg['name']}-{config_hash(cfg)}-"
    if not root.is_dir():
        return None
    runs = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith(prefix))
    return runs[-1] if runs else None


def new_run_dir(root: Path, cfg: dict) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%dT%H%M%S%f")
    path = root / f"{cfg['name']}-{config_hash(cfg)}-{stamp}"
    path.mkdir(parents=True)
    return path


def require_run_dir(root: Path, cfg: dict) -> Path:
    run = find_run_dir(root, cfg)
    if run is None:
        raise StageError(f"no run directory for this config under {root}; run 'lpnets generate' first", EXIT_CONFIG)
    return run


@contextlib.contextmanager
def atomic_path(path: Path) -> Iterator[Path]:
    """Yield a temporary sibling path; move it over ``path`` only on success."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_json(path: Path, obj) -> None:
    with atomic_path(path) as tmp:
        tmp.write_text(json.dumps(obj, indent=1, sort_keys=True))


def update_manifest(run: Path, cfg: dict, stage: str, record: dict) -> None:
    mpath = run / "manifest.json"
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {
        "manifest_version": MANIFEST_VERSION,
        "package_version": __version__,
        "config_hash": config_hash(cfg),
        "config": cfg,
        "stages": {},
    }
    record = dict(record, finished=_dt.datetime.now().isoformat(timespec="seconds"))
    manifest["stages"][stage] = record
    write_json(mpath, manifest)


# -- stages ------------------------------------------------------------------


def _load_dataset(run: Path, cfg: dict) -> Dataset:
    h = float(cfg["data"].get("h", 0.1))
    ppath = run / "data" / "pairs.csv"
    if not ppath.exists():
        raise StageError(f"{ppath} missing; run 'lpnets generate' first", EXIT_CONFIG)
    trajs = [read_trajectory_csv(p) for p in sorted((run / "data").glob("trajectory_*.csv"))]
    return Dataset(trajs, read_pairs_csv(ppath, h), h)


def cmd_generate(cfg: dict, root: Path) -> Path:
    t0 = time.time()
    run = new_run_dir(root, cfg)
    data_dir = run / "data"
    data_dir.mkdir()
    try:
        ds = generate(cfg)
    except IntegrationError as exc:
        update_manifest(run, cfg, "generate", {"status": "failed", "error": str(exc), "partial": True})
        raise StageError(f"integration failed: {exc}", EXIT_NUMERIC) from exc
    for k, tr in enumerate(ds.trajectories):
        with atomic_path(data_dir / f"trajectory_{k:03d}.csv") as tmp:
            write_trajectory_csv(tmp, tr)
    if ds.pairs is not None:
        with atomic_path(data_dir / "pairs.csv") as tmp:
            write_pairs_csv(tmp, ds.pairs)
    update_manifest(
        run,
        cfg,
        "generate",
        {
            "status": "ok",
            "trajectories": len(ds.trajectories),
            "pairs": 0 if ds.pairs is None else len(ds.pairs),
            "h": ds.step,
            "rtol": float(cfg["data"].get("rtol", 1e-13)),
            "atol": float(cfg["data"].get("atol", 1e-14)),
            "seed": cfg["seed"],
            "seconds": round(time.time() - t0, 3),
        },
    )
    log.info("generated %d trajectories, %s pairs in %s", len(ds.trajectories), 0 if ds.pairs is None else len(ds.pairs), run)
    return run


def cmd_fit(cfg: dict, root: Path) -> Path:
    run = require_run_dir(root, cfg)
    ds = _load_dataset(run, cfg)
    try:
        res = fit_targets(cfg, ds.pairs)
    except DataInconsistencyError as exc:
        write_json(run / "fit" / "rejected.json", {"rows": exc.indices, "message": str(exc)})
        raise StageError(str(exc), EXIT_DATA) from exc
    except ResidualError as exc:
        raise StageError(str(exc), EXIT_NUMERIC) from exc
    except SingularityError as exc:
        raise StageError(str(exc), EXIT_NUMERIC) from exc
    k = res.table.shape[1]
    with atomic_path(run / "fit" / "targets.csv") as tmp:
        header = ",".join([f"in{i}" for i in range(ds.pairs.inputs.shape[1])] + [f"param{i}" for i in range(k)])
        np.savetxt(tmp, np.hstack([ds.pairs.inputs, res.table]), delimiter=",", header=header, comments="", fmt="%.17g")
    report = {"status": "ok", "rows": len(res.table), "max_residual": res.max_residual}
    write_json(run / "fit" / "report.json", report)
    update_manifest(run, cfg, "fit", report)
    log.info("fit %d rows, max round-trip residual %.3e", len(res.table), res.max_residual)
    return run


def _load_targets(run: Path) -> np.ndarray:
    path = run / "fit" / "targets.csv"
    if not path.exists():
        raise StageError(f"{path} missing; run 'lpnets fit' first", EXIT_CONFIG)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    k = sum(1 for h in header if h.startswith("param"))
    return data[:, -k:]


def cmd_train(cfg: dict, root: Path) -> Path:
    kind = cfg.get("train", {}).get("kind", "mlp")
    if kind == "glpnets":
        return cmd_glpnets_train(cfg, root)
    if kind != "mlp":
        raise ConfigError(f"unknown train.kind {kind!r}")
    run = require_run_dir(root, cfg)
    ds = _load_dataset(run, cfg)
    table = _load_targets(run)
    out = run / "train"
    try:
        res = train_mlp(cfg, ds.pairs, table)
    except mlp.DivergenceError as exc:
        with atomic_path(out / "loss.csv") as tmp:
            mlp.write_history_csv(tmp, exc.history)
        update_manifest(run, cfg, "train", {"status": "diverged", "epoch": exc.epoch})
        raise StageError(str(exc), EXIT_NUMERIC) from exc
    with atomic_path(out / "loss.csv") as tmp:
        mlp.write_history_csv(tmp, res.history)
    extra = {"train_config": cfg["train"], "final_train_mse": res.train_mse, "final_val_mse": res.val_mse}
    with atomic_path(out / "model.json") as tmp:
        mlp.save(res.model, tmp, extra)
    update_manifest(
        run,
        cfg,
        "train",
        {"status": "ok", "epochs_run": res.history[-1][0], "train_mse": res.train_mse, "val_mse": res.val_mse,
         "n_params": res.model.n_params},
    )
    log.info("trained %d epochs: train MSE %.3e, val MSE %.3e", res.history[-1][0], res.train_mse, res.val_mse)
    return run


def cmd_glpnets_train(cfg: dict, root: Path) -> Path:
    run = require_run_dir(root, cfg)
    ds = _load_dataset(run, cfg)
    model, res = train_glpnets(cfg, ds.pairs)
    out = run / "train"
    with atomic_path(out / "trace.csv") as tmp:
        glpnets.write_trace_csv(tmp, res.trace)
    with atomic_path(out / "model.json") as tmp:
        glpnets.save(model, tmp, {"loss": res.loss, "iters": res.iters, "status": res.status})
    update_manifest(run, cfg, "train", {"status": res.status, "loss": res.loss, "iters": res.iters})
    if not np.isfinite(res.loss):
        raise StageError("G-LPNets loss is not finite", EXIT_NUMERIC)
    log.info("G-LPNets: loss %.3e after %d iterations (%s)", res.loss, res.iters, res.status)
    return run


def cmd_predict(cfg: dict, root: Path) -> Path:
    run = require_run_dir(root, cfg)
    ckpt = run / "train" / "model.json"
    if not ckpt.exists():
        raise StageError(f"{ckpt} missing; train a model first", EXIT_CONFIG)
    doc = json.loads(ckpt.read_text())
    name = cfg["system"]["name"]
    stepper = glpnets_stepper(glpnets.from_dict(doc)) if doc.get("kind") == "glpnets" else lpnets_stepper(name, mlp.from_dict(doc))
    system = make_system(cfg)
    dataset = _load_dataset(run, cfg) if cfg.get("predict", {}).get("from_data_end") else None
    starts = prediction_starts(cfg, system, dataset)
    try:
        preds = predict(cfg, stepper, starts)
    except (RolloutDivergenceError, IntegrationError, SingularityError) as exc:
        raise StageError(f"prediction failed: {exc}", EXIT_NUMERIC) from exc
    out = run / "predict"
    for k, p in enumerate(preds):
        with atomic_path(out / f"rollout_{k:03d}.csv") as tmp:
            write_trajectory_csv(tmp, p.rollout)
        if p.truth is not None:
            with atomic_path(out / f"truth_{k:03d}.csv") as tmp:
                write_trajectory_csv(tmp, p.truth)
        with atomic_path(out / f"diagnostics_{k:03d}.csv") as tmp:
            write_diagnostics_csv(tmp, p.conservation, p.discrepancy)
        with atomic_path(out / f"diagnostics_long_{k:03d}.csv") as tmp:
            write_long_csv(tmp, p.conservation, p.discrepancy)
        if p.truth_conservation is not None:
            with atomic_path(out / f"truth_diagnostics_{k:03d}.csv") as tmp:
                write_diagnostics_csv(tmp, p.truth_conservation)
    summary = {"runs": [p.summary for p in preds]}
    write_json(out / "summary.json", summary)
    update_manifest(run, cfg, "predict", {"status": "ok", "rollouts": len(preds)})
    for k, p in enumerate(preds):
        drift = ", ".join(f"{n} {v:.2e}" for n, v in p.summary["max_rel_drift"].items())
        log.info("rollout %d: max relative drift %s", k, drift)
    return run


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "train": cmd_train,
    "predict": cmd_predict,
    "glpnets-train": cmd_glpnets_train,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lpnets", description="Learn Lie-Poisson dynamics with exact Poisson maps.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help=f"JSON config file or preset ({', '.join(PRESETS)})")
        p.add_argument("--out", default="runs", help="root directory for run directories (default: ./runs)")
        p.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    limiter = contextlib.nullcontext()
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(args.threads)
    try:
        cfg = load_config(args.config, args.seed)
        with limiter:
            run = COMMANDS[args.command](copy.deepcopy(cfg), Path(args.out))
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataInconsistencyError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, IntegrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(run)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
