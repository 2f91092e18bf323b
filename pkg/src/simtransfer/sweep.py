"""Perturbation sweeps: every method on every grid point and seed, as CSV plus a JSON summary."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .baselines import GDA_WEIGHTS, OEC_GAMMAS, GdaPolicy, OecPolicy
from .collect import CollectConfig, train_loop
from .control import IlqrConfig, env_dynamics, task_cost
from .core import RngStream
from .envs import EnvParams, default_params, expert_policy
from .invdyn import TrainConfig
from .scoring import compute_references, eval_streams, sample_complexity, score_policy
from .transfer import TransferPolicy

METHODS = ("expert", "oec", "gda", "ours-direct", "ours-correction", "ours-correction-history")
AXES = ("tilt", "gravity_scale", "noise")
TILT_GRID = (0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0)
GRAVITY_GRID = (0.8, 0.9, 1.0, 1.1, 1.2)
NOISE_GRID = tuple((s, r) for s in (0.2, 1.0) for r in (0.0, 0.9, 1.0))
CSV_HEADER = ("env", "method", "axis", "value", "seed", "score", "samples_to_75")

# learned-method variants: (inverse-model mode, uses history window)
OURS = {
    "ours-direct": ("direct", True),
    "ours-correction": ("correction", False),
    "ours-correction-history": ("correction", True),
}


def default_grid(axis: str) -> tuple:
    return {"tilt": TILT_GRID, "gravity_scale": GRAVITY_GRID, "noise": NOISE_GRID}[axis]


@dataclass
class SweepSpec:
    """One method on one perturbation axis.

    ``base`` holds parameter overrides shared by source and target (the
    reacher gravity axis, for instance, needs a tilted plane to feel gravity).
    """

    env: str
    method: str
    axis: str
    values: list = field(default_factory=list)
    seeds: int = 10
    master_seed: int = 0
    base: dict = field(default_factory=dict)
    window: int = 2
    stop_after: int | None = None

    def __post_init__(self):
        if not self.values:
            self.values = list(default_grid(self.axis))
        if self.env == "reacher2" and self.axis == "gravity_scale" and "plane_tilt" not in self.base:
            self.base = {**self.base, "plane_tilt": math.pi / 2}

    def validate(self) -> SweepSpec:
        if self.env not in ("reacher2", "bouncer1d"):
            raise ValueError(f"unknown env kind {self.env!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.axis not in AXES:
            raise ValueError(f"unknown axis {self.axis!r}; expected one of {AXES}")
        if self.axis == "tilt" and self.env != "reacher2":
            raise ValueError("the tilt axis only applies to reacher2")
        if not self.values:
            raise ValueError("grid must be nonempty")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if self.window < 0:
            raise ValueError("window must be >= 0")
        return self


def source_params(spec: SweepSpec) -> EnvParams:
    return replace(default_params(spec.env), **spec.base).validate()


def perturb(source: EnvParams, axis: str, value) -> EnvParams:
    """Target parameters at one grid point; tilt values are in degrees."""
    if axis == "tilt":
        return replace(source, plane_tilt=math.radians(float(value))).validate()
    if axis == "gravity_scale":
        return replace(source, gravity_scale=float(value)).validate()
    sigma, rho = value
    return source.with_noise(float(sigma), float(rho)).validate()


def format_value(axis: str, value) -> str:
    if axis == "noise":
        return f"{float(value[0])!r}/{float(value[1])!r}"
    return repr(float(value))


@dataclass
class MethodConfig:
    """Everything a single (method, target, seed) evaluation needs beyond the envs."""

    collect: CollectConfig = field(default_factory=CollectConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ilqr: IlqrConfig = field(default_factory=IlqrConfig)
    window: int = 2
    stop_after: int | None = None
    oec_gammas: tuple = OEC_GAMMAS
    gda_weights: tuple = GDA_WEIGHTS


def hyperparameter_grid(method: str, mc: MethodConfig) -> tuple:
    return {"oec": mc.oec_gammas, "gda": mc.gda_weights}.get(method, (None,))


def baseline_factory(method: str, source: EnvParams, param, rng: RngStream, cfg: IlqrConfig) -> Callable:
    """Fresh baseline policy per episode; GDA episode ``i`` samples its prior from ``rng.child(i)``."""
    T = env_dynamics(source)
    cost = task_cost(source.kind)
    if method == "oec":
        return lambda: OecPolicy(T, cost, param, cfg)
    counter = iter(range(1 << 62))
    return lambda: GdaPolicy(T, cost, rng.child(next(counter)), w=param, cfg=cfg)


def evaluate(
    method: str,
    source: EnvParams,
    target: EnvParams,
    rng: RngStream,
    mc: MethodConfig,
    param=None,
    out_dir: str | Path | None = None,
) -> tuple[float, int | None]:
    """Normalized target score of one method for one seed, plus samples-to-0.75 for learned methods.

    Stream layout: ``rng.child(0)`` evaluation episodes (shared by every
    method), ``rng.child(1)`` learning, ``rng.child(2)`` baseline internals.
    """
    expert = expert_policy(source)
    streams = eval_streams(rng.child(0), mc.collect.eval_episodes)
    refs = compute_references(source, lambda: expert, streams)
    if method == "expert":
        return score_policy(target, lambda: expert, refs, streams), None
    if method in ("oec", "gda"):
        make = baseline_factory(method, source, param, rng.child(2), mc.ilqr)
        return score_policy(target, make, refs, streams), None
    mode, history = OURS[method]
    W = mc.window if history else 0
    # the learning loop draws its own evaluation episodes from rng.child(1).child(2)
    res = train_loop(
        source, target, expert, mc.collect, mc.train, W, mode, rng.child(1),
        stop_after=mc.stop_after, out_dir=out_dir,
    )
    if len(res.curve):
        return res.curve.scores[-1], sample_complexity(res.curve)
    tp = TransferPolicy(source, expert, res.model)
    return score_policy(target, lambda: tp, refs, streams), None


def _quartiles(x) -> dict:
    q25, q50, q75 = np.percentile(np.asarray(x, dtype=float), [25, 50, 75])
    return {"median": float(q50), "q25": float(q25), "q75": float(q75), "iqr": float(q75 - q25)}


def run_sweep(spec: SweepSpec, mc: MethodConfig | None = None, out_dir: str | Path | None = None) -> list[dict]:
    """Evaluate ``spec`` on every grid point and seed.

    Seed ``s`` of grid point ``g`` uses ``RngStream(master_seed, g, s)``.
    Baselines are run for every hyperparameter in their grid and the best
    median per grid point is reported.  With ``out_dir`` the CSV
    (``sweep.csv``) is flushed after every grid point and ``summary.json``
    rewritten.
    """
    spec.validate()
    mc = mc or MethodConfig()
    mc = replace(mc, window=spec.window, stop_after=spec.stop_after)
    source = source_params(spec)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(CSV_HEADER)
    rows: list[dict] = []
    summary = {"env": spec.env, "method": spec.method, "axis": spec.axis, "seeds": spec.seeds, "points": []}
    for g, value in enumerate(spec.values):
        target = perturb(source, spec.axis, value)
        by_param = {}
        for param in hyperparameter_grid(spec.method, mc):
            results = [
                evaluate(spec.method, source, target, RngStream(spec.master_seed, g, s), mc, param)
                for s in range(spec.seeds)
            ]
            by_param[param] = results
        best = max(by_param, key=lambda k: np.median([r[0] for r in by_param[k]]))
        point_rows = [
            {
                "env": spec.env, "method": spec.method, "axis": spec.axis,
                "value": format_value(spec.axis, value), "seed": s, "score": sc, "samples_to_75": n,
            }
            for s, (sc, n) in enumerate(by_param[best])
        ]
        rows.extend(point_rows)
        point = {"value": format_value(spec.axis, value), **_quartiles([r["score"] for r in point_rows])}
        if best is not None:
            point["best_param"] = best
            point["median_by_param"] = {repr(k): float(np.median([r[0] for r in v])) for k, v in by_param.items()}
        if spec.method in OURS:
            reached = [r["samples_to_75"] for r in point_rows if r["samples_to_75"] is not None]
            point["samples_to_75_median"] = float(np.median(reached)) if reached else None
            point["reached"] = len(reached)
        summary["points"].append(point)
        if out is not None:
            with open(out / "sweep.csv", "a", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                for r in point_rows:
                    w.writerow(csv_fields(r))
            (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return rows


def csv_fields(r: dict) -> list[str]:
    n = r["samples_to_75"]
    if r["method"] in OURS:
        n_str = "" if n is None else str(n)
    else:
        n_str = "NA"
    return [r["env"], r["method"], r["axis"], r["value"], str(r["seed"]), repr(float(r["score"])), n_str]


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(rows: list[dict]) -> dict:
    """Median and IQR of score per grid value (rows as returned by ``run_sweep``)."""
    by_value: dict[str, list[float]] = {}
    for r in rows:
        by_value.setdefault(r["value"], []).append(float(r["score"]))
    return {v: _quartiles(s) for v, s in by_value.items()}

