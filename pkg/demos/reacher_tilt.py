"""Transfer the planar-arm expert to a plane tilted by 90 degrees.

In the source the arm moves in a horizontal plane, so gravity does no work.
Tilting the plane makes gravity act fully in the plane of motion.  The
computed-torque expert knows nothing about that load, and its tip sags
away from the goal.  The transfer policy learns the correction from target
data alone.

Run: python3 demos/reacher_tilt.py  (several minutes on one core)
"""

from __future__ import annotations

import math

from simtransfer.collect import CollectConfig, train_loop
from simtransfer.core import RngStream
from simtransfer.envs import expert_policy, reacher_params
from simtransfer.invdyn import TrainConfig
from simtransfer.scoring import eval_streams, sample_complexity, score_policy

source = reacher_params()
target = reacher_params(plane_tilt=math.pi / 2)
expert = expert_policy(source)

rng = RngStream(0)
cfg = CollectConfig(iterations=8)
result = train_loop(source, target, expert, cfg, TrainConfig(), W=2, mode="correction", rng=rng, stop_after=3)

streams = eval_streams(rng.child(2), cfg.eval_episodes)
print(f"expert replayed on target: {score_policy(target, lambda: expert, result.references, streams):.3f}")
for (n, s), st in zip(result.curve.points, result.stats):
    print(f"after {n:6d} target samples: score {s:.3f}  (deviation resets {st.resets})")
print("samples to 0.75:", sample_complexity(result.curve))
