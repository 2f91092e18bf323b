"""Command-line front end.

Every subcommand takes an optional JSON config (``--config path``) plus any
number of ``--dotted.key value`` overrides, resolves them into a
``RunConfig``, writes ``config.resolved.json`` into the output directory and
only ever writes below that directory.

Exit codes: 0 success, 1 invalid configuration, 2 failure while running.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path

from .collect import CollectConfig, collect_iteration, initial_model, observation_scale, steps_to_dataset, train_loop
from .control import IlqrConfig
from .core import RngStream
from .envs import EnvParams, NoiseParams, default_params, expert_policy, make_env
from .invdyn import InverseModel, TrainConfig
from .scoring import compute_references, eval_streams, sample_complexity, score_policy
from .sweep import AXES, CSV_HEADER, METHODS, OURS, MethodConfig, SweepSpec, csv_fields, evaluate, run_sweep
from .transfer import TransferPolicy

log = logging.getLogger(__name__)

COMMANDS = ("expert", "collect", "train", "eval", "sweep", "baseline")


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 1."""


@dataclass
class SweepSection:
    axis: str = "tilt"
    values: list = field(default_factory=list)
    seeds: int = 10
    stop_after: int | None = None


@dataclass
class RunConfig:
    seed: int = 0
    env: str = "reacher2"
    source: EnvParams | None = None
    target: EnvParams | None = None
    method: str = "ours-correction-history"
    mode: str = "correction"
    W: int = 2
    collect: CollectConfig = field(default_factory=CollectConfig)
    nn: TrainConfig = field(default_factory=TrainConfig)
    ilqr: IlqrConfig = field(default_factory=IlqrConfig)
    sweep: SweepSection = field(default_factory=SweepSection)
    model: str | None = None
    out: str = "runs/default"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["nn"]["hidden"] = list(self.nn.hidden)
        return d


# ----------------------------------------------------------------------------
# Config resolution
# ----------------------------------------------------------------------------

_SECTIONS = {"collect": CollectConfig, "nn": TrainConfig, "ilqr": IlqrConfig, "sweep": SweepSection}


def _coerce(value, default, key: str):
    """Check ``value`` against the type of ``default``; ints are accepted for floats."""
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return type(default)(value)
    return value


def _field_default(f):
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return None


def _merge_dataclass(cls, base, overrides: dict, prefix: str):
    if not isinstance(overrides, dict):
        raise ConfigError(f"{prefix}: expected an object, got {overrides!r}")
    known = {f.name: f for f in fields(cls)}
    kw = {}
    for k, v in overrides.items():
        if k not in known:
            raise ConfigError(f"unknown key {prefix}.{k}")
        current = getattr(base, k)
        if isinstance(current, NoiseParams):
            kw[k] = _merge_dataclass(NoiseParams, current, v, f"{prefix}.{k}")
            continue
        default = current if current is not None else _field_default(known[k])
        kw[k] = _coerce(v, default, f"{prefix}.{k}")
    return replace(base, **kw)


_OPTIONAL_INT = {"sweep.stop_after"}


def resolve(raw: dict) -> RunConfig:
    """Build a validated ``RunConfig`` from a nested dict (defaults fill the rest)."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    for k in raw:
        if k not in known:
            raise ConfigError(f"unknown key {k}")
    cfg = RunConfig()
    top = {}
    for k in ("seed", "env", "method", "mode", "W", "out"):
        if k in raw:
            top[k] = _coerce(raw[k], getattr(cfg, k), k)
    if "model" in raw:
        if raw["model"] is not None and not isinstance(raw["model"], str):
            raise ConfigError(f"model: expected a path string, got {raw['model']!r}")
        top["model"] = raw["model"]
    cfg = replace(cfg, **top)
    if cfg.env not in ("reacher2", "bouncer1d"):
        raise ConfigError(f"env: must be reacher2 or bouncer1d, got {cfg.env!r}")
    try:
        source = _merge_dataclass(EnvParams, default_params(cfg.env), raw.get("source") or {}, "source")
        if source.kind != cfg.env:
            raise ConfigError(f"source.kind ({source.kind}) must equal env ({cfg.env})")
        target = _merge_dataclass(EnvParams, source, raw.get("target") or {}, "target")
        if target.kind != cfg.env:
            raise ConfigError(f"target.kind ({target.kind}) must equal env ({cfg.env})")
        source.validate()
        target.validate()
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"invariant violated: {e}") from None
    sections = {}
    for name, cls in _SECTIONS.items():
        sec = raw.get(name) or {}
        base = getattr(cfg, name)
        if name == "sweep" and isinstance(sec, dict) and sec.get("stop_after") is not None:
            if isinstance(sec["stop_after"], bool) or not isinstance(sec["stop_after"], int):
                raise ConfigError(f"sweep.stop_after: expected an integer, got {sec['stop_after']!r}")
        sections[name] = _merge_dataclass(cls, base, sec, name)
    sections["nn"] = replace(sections["nn"], hidden=tuple(sections["nn"].hidden))
    cfg = replace(cfg, source=source, target=target, **sections)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.method not in METHODS:
        raise ConfigError(f"method: must be one of {METHODS}, got {cfg.method!r}")
    if cfg.mode not in ("direct", "correction"):
        raise ConfigError(f"mode: must be direct or correction, got {cfg.mode!r}")
    if cfg.W < 0:
        raise ConfigError("W: must be >= 0")
    if cfg.seed < 0:
        raise ConfigError("seed: must be >= 0")
    if cfg.sweep.axis not in AXES:
        raise ConfigError(f"sweep.axis: must be one of {AXES}, got {cfg.sweep.axis!r}")
    if cfg.sweep.seeds < 1:
        raise ConfigError("sweep.seeds: must be >= 1")
    if cfg.sweep.axis == "tilt" and cfg.env != "reacher2" and cfg.sweep.values:
        raise ConfigError("sweep.axis: tilt only applies to reacher2")
    if cfg.nn.epochs < 1 or cfg.nn.batch < 1 or not cfg.nn.lr > 0:
        raise ConfigError("nn: epochs and batch must be >= 1 and lr > 0")
    if not 0.0 <= cfg.nn.val_fraction < 1.0:
        raise ConfigError("nn.val_fraction: must lie in [0, 1)")
    if any(h < 1 for h in cfg.nn.hidden):
        raise ConfigError("nn.hidden: layer widths must be >= 1")
    if cfg.ilqr.horizon < 1:
        raise ConfigError("ilqr.horizon: must be >= 1")
    try:
        cfg.collect.validate()
    except ValueError as e:
        raise ConfigError(f"collect: {e}") from None
    return cfg


def parse_value(text: str):
    """Override values are JSON when they parse as JSON, plain strings otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = raw
    for k in keys[:-1]:
        nxt = node.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"{dotted}: {k} is not a section")
        node = nxt
    node[keys[-1]] = value


def parse_overrides(tokens: list[str]) -> list[tuple[str, object]]:
    out = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"expected --key value, got {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, text = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"missing value for --{key}")
            text = tokens[i + 1]
            i += 2
        out.append((key, parse_value(text)))
    return out


def parse_config(path: str | None = None, overrides: list[tuple[str, object]] | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
    for key, value in overrides or []:
        apply_override(raw, key, value)
    return resolve(raw)


def emit(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


# ----------------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------------


def _method_config(cfg: RunConfig) -> MethodConfig:
    return MethodConfig(cfg.collect, cfg.nn, cfg.ilqr, window=cfg.W, stop_after=cfg.sweep.stop_after)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(csv_fields(r))


def cmd_expert(cfg: RunConfig, out: Path) -> None:
    """Source expert and zero-policy reference returns on the evaluation episodes."""
    expert = expert_policy(cfg.source)
    streams = eval_streams(RngStream(cfg.seed).child(0), cfg.collect.eval_episodes)
    refs = compute_references(cfg.source, lambda: expert, streams)
    target_score = score_policy(cfg.target, lambda: expert, refs, streams)
    _write_json(out / "expert.json", {
        "env": cfg.env, "expert_return": refs.expert, "zero_return": refs.zero,
        "target_score": target_score, "episodes": cfg.collect.eval_episodes,
    })


def _load_or_init_model(cfg: RunConfig, rng: RngStream) -> InverseModel:
    if cfg.model is not None:
        return InverseModel.load(cfg.model)
    env = make_env(cfg.source)
    return initial_model(cfg.mode, cfg.W, env.d_obs, env.d_act, rng, cfg.nn.hidden)


def cmd_collect(cfg: RunConfig, out: Path) -> None:
    """One collection iteration with the current (or initial) inverse model."""
    rng = RngStream(cfg.seed)
    expert = expert_policy(cfg.source)
    model = _load_or_init_model(cfg, rng.child(4))
    tp = TransferPolicy(cfg.source, expert, model)
    scale = observation_scale(cfg.source, expert, rng.child(3))
    steps, stats = collect_iteration(cfg.target, tp, cfg.collect, rng.child(0, 0), scale)
    steps_to_dataset(steps, model.mode).save(out / "dataset.jsonl")
    _write_json(out / "collect_stats.json", {
        "samples": len(steps), "episodes": len(stats.episode_lengths), "resets": stats.resets,
        "injections": stats.injections, "mean_episode_length": stats.mean_episode_length,
    })


def cmd_train(cfg: RunConfig, out: Path) -> None:
    """The interleaved collect/retrain loop; writes dataset, curve and final model."""
    expert = expert_policy(cfg.source)
    res = train_loop(
        cfg.source, cfg.target, expert, cfg.collect, cfg.nn, cfg.W, cfg.mode, RngStream(cfg.seed),
        stop_after=cfg.sweep.stop_after, out_dir=out,
    )
    res.model.save(out / "model.json")
    n = sample_complexity(res.curve)
    _write_json(out / "train_summary.json", {
        "curve": res.curve.to_records(), "samples_to_75": n,
        "references": {"expert": res.references.expert, "zero": res.references.zero},
    })


def cmd_eval(cfg: RunConfig, out: Path) -> None:
    """Score the expert and a saved transfer policy on the target."""
    rng = RngStream(cfg.seed)
    expert = expert_policy(cfg.source)
    streams = eval_streams(rng.child(0), cfg.collect.eval_episodes)
    refs = compute_references(cfg.source, lambda: expert, streams)
    rows = [{"env": cfg.env, "method": "expert", "axis": "target", "value": "config", "seed": cfg.seed,
             "score": score_policy(cfg.target, lambda: expert, refs, streams), "samples_to_75": None}]
    model_path = Path(cfg.model) if cfg.model is not None else out / "model.json"
    if model_path.exists():
        tp = TransferPolicy(cfg.source, expert, InverseModel.load(model_path))
        rows.append({"env": cfg.env, "method": cfg.method, "axis": "target", "value": "config",
                     "seed": cfg.seed, "score": score_policy(cfg.target, lambda: tp, refs, streams),
                     "samples_to_75": None})
    _write_csv(out / "eval.csv", rows)


def cmd_baseline(cfg: RunConfig, out: Path) -> None:
    """Every hyperparameter of the configured MPC baseline on the target, one row each."""
    if cfg.method not in ("oec", "gda"):
        raise ConfigError(f"method: baseline needs oec or gda, got {cfg.method!r}")
    mc = _method_config(cfg)
    grid = mc.oec_gammas if cfg.method == "oec" else mc.gda_weights
    rows = []
    for param in grid:
        score, _ = evaluate(cfg.method, cfg.source, cfg.target, RngStream(cfg.seed), mc, param)
        rows.append({"env": cfg.env, "method": cfg.method, "axis": "gamma" if cfg.method == "oec" else "w",
                     "value": repr(float(param)), "seed": cfg.seed, "score": score, "samples_to_75": None})
    _write_csv(out / "baseline.csv", rows)


def cmd_sweep(cfg: RunConfig, out: Path) -> None:
    """One method over a perturbation grid; writes sweep.csv and summary.json."""
    values = [tuple(v) if isinstance(v, list) else v for v in cfg.sweep.values]
    spec = SweepSpec(
        cfg.env, cfg.method, cfg.sweep.axis, values, cfg.sweep.seeds, cfg.seed,
        base=_source_overrides(cfg.source), window=cfg.W, stop_after=cfg.sweep.stop_after,
    )
    try:
        spec.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    run_sweep(spec, _method_config(cfg), out)


def _source_overrides(source: EnvParams) -> dict:
    base = default_params(source.kind)
    return {f.name: getattr(source, f.name) for f in fields(EnvParams) if getattr(source, f.name) != getattr(base, f.name)}


HANDLERS = {
    "expert": cmd_expert, "collect": cmd_collect, "train": cmd_train,
    "eval": cmd_eval, "sweep": cmd_sweep, "baseline": cmd_baseline,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simtransfer", description="Inverse-dynamics policy transfer lab.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=HANDLERS[name].__doc__.strip().splitlines()[0] if HANDLERS[name].__doc__ else None)
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args, rest = ap.parse_known_args(argv)
    except SystemExit as e:
        return 1 if e.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = parse_config(args.config, parse_overrides(rest))
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved.json").write_text(emit(cfg))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"config error: output directory not writable: {e}", file=sys.stderr)
        return 1
    try:
        HANDLERS[args.command](cfg, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - every other failure is a runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0
