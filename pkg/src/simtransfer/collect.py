"""Interleaved target-domain data collection and the training loop around it."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import Policy, RngStream, Trajectory, Window, pad_window, write_jsonl
from .envs import EnvParams, apply_motor_noise, init_noise, make_env, rollout
from .invdyn import (
    InvDataset,
    InverseModel,
    TrainConfig,
    TrainReport,
    input_dim,
    random_model,
    sample_input,
    train,
    zero_model,
)
from .scoring import References, ScoreCurve, compute_references, eval_streams, score_policy
from .transfer import TransferPolicy

log = logging.getLogger(__name__)

DEGENERATE_LABEL_VAR = 0.5
OBS_SCALE_FLOOR = 1e-3


@dataclass
class CollectConfig:
    p_inject: float = 0.1
    inject_std: float = 0.3
    deviation_threshold: float = 2.0
    patience: int = 5
    samples_per_iter: int = 5000
    iterations: int = 30
    eval_episodes: int = 10

    def validate(self) -> CollectConfig:
        if not 0.0 <= self.p_inject <= 1.0:
            raise ValueError("p_inject must lie in [0, 1]")
        if not self.inject_std >= 0:
            raise ValueError("inject_std must be >= 0")
        if not self.deviation_threshold > 0:
            raise ValueError("deviation_threshold must be > 0")
        if self.patience < 1 or self.samples_per_iter < 1 or self.iterations < 0:
            raise ValueError("patience and samples_per_iter must be >= 1, iterations >= 0")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")
        return self


@dataclass(frozen=True)
class LabeledStep:
    window: Window
    action: np.ndarray
    next_obs: np.ndarray
    source_action: np.ndarray


@dataclass
class CollectStats:
    episode_lengths: list[int] = field(default_factory=list)
    resets: int = 0
    injections: int = 0
    deviations: list[float] = field(default_factory=list)

    @property
    def mean_episode_length(self) -> float:
        return float(np.mean(self.episode_lengths)) if self.episode_lengths else 0.0


def observation_scale(source: EnvParams, source_policy: Policy, rng: RngStream, episodes: int = 5):
    """Per-dimension std of observations along source-expert rollouts."""
    obs = []
    for i in range(episodes):
        obs.extend(rollout(source, source_policy, rng.child(i)).observations)
    return np.maximum(np.std(np.array(obs), axis=0), OBS_SCALE_FLOOR)


def steps_to_dataset(steps: list[LabeledStep], mode: str) -> InvDataset:
    xs = np.array([sample_input(s.window, s.next_obs) for s in steps])
    if mode == "correction":
        ys = np.array([s.action - s.source_action for s in steps])
    else:
        ys = np.array([s.action for s in steps])
    return InvDataset(xs, ys)


def collect_iteration(
    target: EnvParams,
    tp: TransferPolicy,
    cfg: CollectConfig,
    rng: RngStream,
    obs_scale: np.ndarray,
) -> tuple[list[LabeledStep], CollectStats]:
    """Run the current transfer policy in the target env until enough steps are gathered.

    Episode ``i`` uses ``rng.child(i)``; per step it draws one uniform for the
    injection decision, an injection normal only if injecting, then the motor
    noise.  A source-env rollout of ``pi_source`` from the same initial state
    runs alongside as the deviation reference.
    """
    env = make_env(target)
    src_env = make_env(tp.source)
    W = tp.model.W
    steps: list[LabeledStep] = []
    shifts: list[np.ndarray] = []
    stats = CollectStats()
    ep = 0
    while len(steps) < cfg.samples_per_iter:
        erng = rng.child(ep)
        ep += 1
        state = env.initial_state(erng)
        ns = init_noise(target.noise, env.d_act, erng)
        traj = Trajectory([env.observe(state)])
        ref_state = state
        ref_traj = Trajectory([src_env.observe(ref_state)])
        over = 0
        for _ in range(target.episode_len):
            window = pad_window(traj, W, env.d_act)
            a_target, a_source, _ = tp.target_action(traj)
            a = a_target
            if erng.gen.random() < cfg.p_inject:
                a = np.clip(a_target + cfg.inject_std * erng.gen.standard_normal(env.d_act), -1.0, 1.0)
                stats.injections += 1
                shifts.append(a - a_target)
            executed, ns = apply_motor_noise(a, ns, target.noise, erng)
            state, r = env.step(state, executed)
            o_next = env.observe(state)
            steps.append(LabeledStep(window, a, o_next, a_source))
            traj.append(a, r, o_next)

            ref_a = np.clip(tp.source_policy(ref_traj), -1.0, 1.0)
            ref_state, ref_r = src_env.step(ref_state, ref_a)
            ref_traj.append(ref_a, ref_r, src_env.observe(ref_state))
            dev = float(np.max(np.abs(o_next - ref_traj.last_obs) / obs_scale))
            stats.deviations.append(dev)
            over = over + 1 if dev > cfg.deviation_threshold else 0
            if len(steps) >= cfg.samples_per_iter or env.unstable(state):
                break
            if over >= cfg.patience:
                stats.resets += 1
                break
        stats.episode_lengths.append(len(traj))

    # label variance around the commanded action; the policy's own actions
    # may legitimately be bang-bang, so only the injected part is judged
    if len(shifts) > 1 and np.any(np.var(np.array(shifts), axis=0) > DEGENERATE_LABEL_VAR):
        warnings.warn(
            "injected action labels have very high variance (mostly at the clip boundary); "
            "the injection settings look degenerate",
            RuntimeWarning,
            stacklevel=2,
        )
    return steps, stats


@dataclass
class LoopResult:
    model: InverseModel
    curve: ScoreCurve
    stats: list[CollectStats] = field(default_factory=list)
    references: References | None = None
    reports: list[TrainReport] = field(default_factory=list)


def initial_model(mode: str, W: int, d_obs: int, d_act: int, rng: RngStream, hidden) -> InverseModel:
    if mode == "correction":
        return zero_model(d_obs, d_act, W, "correction", hidden)
    return random_model(d_obs, d_act, W, rng, "direct", hidden)


def train_loop(
    source: EnvParams,
    target: EnvParams,
    source_policy: Policy,
    cfg: CollectConfig,
    train_cfg: TrainConfig,
    W: int,
    mode: str,
    rng: RngStream,
    *,
    stop_after: int | None = None,
    threshold: float = 0.75,
    out_dir: str | Path | None = None,
) -> LoopResult:
    """Alternate collection and retraining from scratch on the cumulative data.

    After each iteration the current transfer policy is scored on a fixed set
    of ``eval_episodes`` target episodes without injection.  With
    ``stop_after=k`` the loop ends early once ``k`` consecutive scores are at
    or above ``threshold``.  Stream layout: ``rng.child(0, it)`` collection,
    ``rng.child(1, it)`` training, ``rng.child(2)`` evaluation episodes,
    ``rng.child(3)`` observation scale, ``rng.child(4)`` initial weights.
    """
    cfg.validate()
    env = make_env(source)
    d_obs, d_act = env.d_obs, env.d_act
    model = initial_model(mode, W, d_obs, d_act, rng.child(4), train_cfg.hidden)
    streams = eval_streams(rng.child(2), cfg.eval_episodes)
    refs = compute_references(source, lambda: source_policy, streams)
    obs_scale = observation_scale(source, source_policy, rng.child(3))
    data = InvDataset.empty(input_dim(W, d_obs, d_act), d_act)
    result = LoopResult(model, ScoreCurve(), references=refs)
    out = Path(out_dir) if out_dir is not None else None
    streak = 0
    for it in range(cfg.iterations):
        tp = TransferPolicy(source, source_policy, model)
        steps, stats = collect_iteration(target, tp, cfg, rng.child(0, it), obs_scale)
        new = steps_to_dataset(steps, mode)
        data = data.extend(new)
        model, report = train(data, W, rng.child(1, it), mode, train_cfg)
        tp = TransferPolicy(source, source_policy, model)
        score = score_policy(target, lambda: tp, refs, streams)
        result.curve.append(len(data), score)
        result.stats.append(stats)
        result.reports.append(report)
        result.model = model
        log.info(
            "iter %d: %d samples, score %.3f, mean ep len %.1f, resets %d",
            it, len(data), score, stats.mean_episode_length, stats.resets,
        )
        if out is not None:
            new.save(out / "dataset.jsonl", append=it > 0)
            write_jsonl(
                out / "curve.jsonl",
                [{"iteration": it, "samples": len(data), "score": score,
                  "mean_episode_length": stats.mean_episode_length, "resets": stats.resets,
                  "val_loss": report.val_loss[report.best_epoch] if report.val_loss else None}],
                append=it > 0,
            )
        streak = streak + 1 if score >= threshold else 0
        if stop_after is not None and streak >= stop_after:
            break
    return result
