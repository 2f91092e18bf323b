"""Shared data model: trajectories, history windows and seeded random streams."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np


class PaddingError(ValueError):
    """Raised when a trajectory is too short for the requested window."""


class RngStream:
    """Seedable random stream identified by ``(seed, key)``.

    The same ``(seed, key)`` always replays the same sample sequence.
    Sub-streams derived with :meth:`child` are statistically independent of
    the parent and of each other (numpy ``SeedSequence`` spawn keys).
    """

    def __init__(self, seed: int, *key: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *key: int) -> RngStream:
        return RngStream(self.seed, *self.key, *key)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"


@dataclass
class Trajectory:
    """Alternating observations and actions with one reward per action.

    ``observations`` always holds one more entry than ``actions``.  Lists are
    appended to while an episode runs; treat a finished trajectory as a value.
    """

    observations: list[np.ndarray]
    actions: list[np.ndarray] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.observations = [np.asarray(o, dtype=float) for o in self.observations]
        self.actions = [np.asarray(a, dtype=float) for a in self.actions]
        self.rewards = [float(r) for r in self.rewards]
        if len(self.observations) != len(self.actions) + 1:
            raise ValueError("need exactly one more observation than actions")
        if len(self.rewards) != len(self.actions):
            raise ValueError("need one reward per action")

    def append(self, action, reward: float, next_obs) -> None:
        self.actions.append(np.asarray(action, dtype=float))
        self.rewards.append(float(reward))
        self.observations.append(np.asarray(next_obs, dtype=float))

    def __len__(self):
        return len(self.actions)

    @property
    def last_obs(self) -> np.ndarray:
        return self.observations[-1]

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    def to_record(self) -> dict:
        return {
            "obs": [o.tolist() for o in self.observations],
            "act": [a.tolist() for a in self.actions],
            "rew": list(self.rewards),
        }

    @classmethod
    def from_record(cls, rec: dict) -> Trajectory:
        return cls(rec["obs"], rec["act"], rec["rew"])


@dataclass(frozen=True)
class Window:
    """The last ``W + 1`` observations and ``W`` actions, oldest first."""

    observations: np.ndarray  # (W + 1, d_obs)
    actions: np.ndarray  # (W, d_act)

    @property
    def W(self) -> int:
        return len(self.actions)

    @property
    def latest(self) -> np.ndarray:
        return self.observations[-1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.observations.ravel(), self.actions.ravel()])


def tail_window(traj: Trajectory, W: int, d_act: int | None = None) -> Window:
    """The last ``W + 1`` observations and ``W`` actions, without padding.

    ``d_act`` only matters for shaping an empty action block when the
    trajectory holds no actions.
    """
    if W < 0:
        raise ValueError("W must be >= 0")
    if len(traj.observations) < W + 1:
        raise PaddingError(
            f"trajectory has {len(traj.observations)} observations, window needs {W + 1}"
        )
    obs = np.array(traj.observations[len(traj.observations) - W - 1 :])
    if traj.actions:
        d_act = traj.actions[0].shape[0]
    d_act = d_act or 0
    acts = np.array(traj.actions[len(traj.actions) - W :]) if W else np.zeros((0, d_act))
    return Window(obs, acts.reshape(W, -1) if W else acts)


def pad_window(traj: Trajectory, W: int, d_act: int | None = None) -> Window:
    """Like :func:`tail_window` but repeat-pads the episode start.

    Missing observations are copies of the first one; missing actions are
    zeros.  ``d_act`` is only needed when the trajectory has no actions yet.
    """
    if W < 0:
        raise ValueError("W must be >= 0")
    n_obs = len(traj.observations)
    if n_obs >= W + 1:
        return tail_window(traj, W, d_act)
    if d_act is None:
        if not traj.actions:
            raise ValueError("d_act is required to pad a trajectory without actions")
        d_act = traj.actions[0].shape[0]
    missing = W + 1 - n_obs
    obs = [traj.observations[0]] * missing + list(traj.observations)
    acts = [np.zeros(d_act)] * missing + list(traj.actions)
    return Window(np.array(obs), np.array(acts).reshape(W, d_act))


def write_jsonl(path: str | Path, records: Iterable[dict], append: bool = False) -> None:
    with open(path, "a" if append else "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def save_trajectories(path: str | Path, trajs: Iterable[Trajectory]) -> None:
    write_jsonl(path, (t.to_record() for t in trajs))


def load_trajectories(path: str | Path) -> list[Trajectory]:
    return [Trajectory.from_record(r) for r in read_jsonl(path)]


# A policy sees the trajectory so far and returns the next action.
Policy = Callable[[Trajectory], np.ndarray]
