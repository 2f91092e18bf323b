from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from simtransfer.core import RngStream, Trajectory
from simtransfer.envs import bouncer_params, expert_policy, make_env, reacher_params, rollout
from simtransfer.invdyn import InverseModel, random_model, zero_model
from simtransfer.nn import Mlp, identity_normalizer
from simtransfer.transfer import TransferPolicy


@pytest.mark.parametrize("kind", ["reacher2", "bouncer1d"])
def test_zero_correction_equals_expert_bitwise(kind):
    src = reacher_params() if kind == "reacher2" else bouncer_params()
    tgt = replace(src, gravity_scale=1.2)
    env = make_env(src)
    expert = expert_policy(src)
    tp = TransferPolicy(src, expert, zero_model(env.d_obs, env.d_act, 2, "correction", hidden=(8,)))
    a = rollout(tgt, tp, RngStream(3)).to_record()
    b = rollout(tgt, expert, RngStream(3)).to_record()
    assert a == b


def test_zero_correction_no_gap_reproduces_prediction():
    p = bouncer_params()
    env = make_env(p)
    tp = TransferPolicy(p, expert_policy(p), zero_model(4, 1, 0, "correction", hidden=(4,)))
    state = env.initial_state(RngStream(0))
    traj = Trajectory([env.observe(state)])
    for _ in range(60):
        a, _, o_hat = tp.target_action(traj)
        state, r = env.step(state, a)
        traj.append(a, r, env.observe(state))
        np.testing.assert_array_equal(traj.last_obs, o_hat)


def _bouncer_free_flight_inverse(p) -> InverseModel:
    """Exact inverse of the thrust -> velocity map away from contact, as a ReLU net.

    ``a = (v' - v) / (n dt k) + g / k`` with ``k`` the thrust gain; the linear
    map is written as ``relu(z) - relu(-z)``.
    """
    k = p.torque_scale * p.torque_max / p.mass1
    span = p.substeps * p.dt * k
    w = np.zeros(8)
    w[1], w[5] = -1.0 / span, 1.0 / span
    bias = p.gravity * p.gravity_scale / k
    W1 = np.stack([w, -w])
    b1 = np.array([bias, -bias])
    mlp = Mlp([W1, np.array([[1.0, -1.0]])], [b1, np.zeros(1)])
    return InverseModel(mlp, identity_normalizer(8), 0, "direct")


def test_perfect_inverse_reproduces_prediction():
    p = bouncer_params()
    env = make_env(p)
    tp = TransferPolicy(p, expert_policy(p), _bouncer_free_flight_inverse(p))
    state = env.initial_state(RngStream(0))
    state = type(state)(0.3, 0.5, state.t)
    traj = Trajectory([env.observe(state)])
    for _ in range(5):
        a, a_src, o_hat = tp.target_action(traj)
        np.testing.assert_allclose(a, a_src, atol=1e-12)
        state, r = env.step(state, a)
        traj.append(a, r, env.observe(state))
        np.testing.assert_allclose(traj.last_obs, o_hat, atol=1e-12)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        TransferPolicy(reacher_params(), expert_policy(reacher_params()), random_model(4, 1, 0, RngStream(0)))
