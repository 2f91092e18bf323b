"""Transfer the bouncer expert to a bouncier, heavier target.

The target has restitution 0.5 and 1.2x gravity.  The PD expert is
fairly robust to this change on its own, so the interest here is that the
transfer policy starts at (and stays at) expert level after the first round
of collection, while the MPC baselines in the test suite do not.

Run: python3 demos/bouncer_contact.py  (about a minute on one core)
"""

from __future__ import annotations

from simtransfer.collect import CollectConfig, train_loop
from simtransfer.core import RngStream
from simtransfer.envs import bouncer_params, expert_policy
from simtransfer.invdyn import TrainConfig
from simtransfer.scoring import eval_streams, sample_complexity, score_policy

source = bouncer_params()
target = bouncer_params(restitution=0.5, gravity_scale=1.2)
expert = expert_policy(source)

cfg = CollectConfig(iterations=3)
result = train_loop(source, target, expert, cfg, TrainConfig(), W=2, mode="correction", rng=RngStream(0))

streams = eval_streams(RngStream(0).child(2), cfg.eval_episodes)
print(f"expert replayed on target: {score_policy(target, lambda: expert, result.references, streams):.3f}")
for n, s in result.curve.points:
    print(f"after {n:6d} target samples: score {s:.3f}")
print("samples to 0.75:", sample_complexity(result.curve))
