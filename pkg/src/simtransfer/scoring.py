"""Normalized scores, score curves and sample-complexity extraction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Policy, RngStream
from .envs import EnvParams, rollout, zero_policy, make_env

SCORE_CLIP = (-0.5, 1.5)
THRESHOLD = 0.75

PolicyFactory = Callable[[], Policy]


def normalized_score(R: float, R_expert_src: float, R_zero_src: float, clip: bool = True) -> float:
    """Affine rescale: the source expert scores 1, the zero policy 0."""
    denom = R_expert_src - R_zero_src
    if not denom > 0:
        raise ValueError("expert reference must beat the zero-policy reference")
    s = (R - R_zero_src) / denom
    return float(np.clip(s, *SCORE_CLIP)) if clip else float(s)


@dataclass
class ScoreCurve:
    points: list[tuple[int, float]] = field(default_factory=list)

    def append(self, samples: int, score: float) -> None:
        if self.points and samples <= self.points[-1][0]:
            raise ValueError("sample counts must be strictly increasing")
        self.points.append((int(samples), float(score)))

    def __len__(self):
        return len(self.points)

    @property
    def samples(self) -> list[int]:
        return [p[0] for p in self.points]

    @property
    def scores(self) -> list[float]:
        return [p[1] for p in self.points]

    def to_records(self) -> list[dict]:
        return [{"samples": n, "score": s} for n, s in self.points]


def moving_median(values, width: int = 3) -> np.ndarray:
    """Centered moving median, window truncated at the ends."""
    v = np.asarray(values, dtype=float)
    half = width // 2
    return np.array([np.median(v[max(0, i - half) : i + half + 1]) for i in range(len(v))])


def sample_complexity(curve: ScoreCurve, threshold: float = THRESHOLD) -> int | None:
    """First sample count whose own score clears ``threshold`` and from which on
    the 3-point moving median never drops below it; ``None`` if never."""
    scores = curve.scores
    if not scores:
        return None
    med = moving_median(scores)
    ok_from = len(scores)
    for i in range(len(scores) - 1, -1, -1):
        if med[i] < threshold:
            break
        ok_from = i
    for i in range(ok_from, len(scores)):
        if scores[i] >= threshold:
            return curve.samples[i]
    return None


def eval_streams(rng: RngStream, n: int) -> list[RngStream]:
    return [rng.child(i) for i in range(n)]


def mean_return(p: EnvParams, make_policy: PolicyFactory, streams: list[RngStream]) -> float:
    """Mean episode return; each stream is replayed from its start."""
    returns = [
        rollout(p, make_policy(), RngStream(s.seed, *s.key)).total_reward for s in streams
    ]
    return float(np.mean(returns))


@dataclass(frozen=True)
class References:
    """Source-environment returns of the expert and of the zero policy."""

    expert: float
    zero: float

    def score(self, R: float, clip: bool = True) -> float:
        return normalized_score(R, self.expert, self.zero, clip)


def compute_references(source: EnvParams, make_expert: PolicyFactory, streams) -> References:
    d_act = make_env(source).d_act
    return References(
        mean_return(source, make_expert, streams),
        mean_return(source, lambda: zero_policy(d_act), streams),
    )


def score_policy(target: EnvParams, make_policy: PolicyFactory, refs: References, streams) -> float:
    return refs.score(mean_return(target, make_policy, streams))
