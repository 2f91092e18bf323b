"""Transfer policy: source action, one simulated source step, inverse model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Policy, Trajectory, pad_window
from .envs import EnvParams, make_env
from .invdyn import InverseModel, query


@dataclass
class TransferPolicy:
    """Runs ``pi_source`` through the source simulator and asks ``phi`` for the target action.

    The source simulator is re-synchronized to the latest target observation
    at every step, then stepped once without noise to get the desired next
    observation.
    """

    source: EnvParams
    source_policy: Policy
    model: InverseModel
    _env: object = field(init=False, repr=False)

    def __post_init__(self):
        self._env = make_env(self.source)
        d_in = (self.model.W + 2) * self._env.d_obs + self.model.W * self._env.d_act
        if self.model.mlp.d_in != d_in or self.model.d_act != self._env.d_act:
            raise ValueError("inverse model dims do not match the source environment")

    def target_action(self, traj: Trajectory) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(a_target, a_source, o_hat_next)`` for the trajectory so far."""
        if not traj.observations:
            raise ValueError("empty trajectory")
        a_source = np.clip(np.asarray(self.source_policy(traj), dtype=float), -1.0, 1.0)
        o_hat = self.predict_next(traj, a_source)
        window = pad_window(traj, self.model.W, self._env.d_act)
        return query(self.model, window, o_hat, a_source), a_source, o_hat

    def predict_next(self, traj: Trajectory, action) -> np.ndarray:
        state = self._env.state_from_obs(traj.last_obs, len(traj))
        nxt, _ = self._env.step(state, action)
        return self._env.observe(nxt)

    def __call__(self, traj: Trajectory) -> np.ndarray:
        return self.target_action(traj)[0]
