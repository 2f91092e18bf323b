from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simtransfer.baselines import (
    JointGaussian,
    OecPolicy,
    OecState,
    expert_direct,
    gda_condition,
    gda_prior,
    gda_update,
    oec_dynamics,
    oec_update,
)
from simtransfer.control import DynamicsFn, IlqrConfig, env_dynamics, linear_dynamics, task_cost
from simtransfer.core import RngStream, Trajectory
from simtransfer.envs import bouncer_params, expert_policy, rollout

F_SRC = np.array([[0.9, 0.2], [-0.1, 0.8]])
G_SRC = np.array([[0.0], [0.5]])


def _rel(A, B):
    return np.linalg.norm(A - B, 2) / np.linalg.norm(B, 2)


# -- expert direct ------------------------------------------------------------


def test_expert_direct_is_identity():
    p = bouncer_params()
    pi = expert_policy(p)
    tr = rollout(p, pi, RngStream(0))
    for t in range(0, 50, 7):
        sub = Trajectory(tr.observations[: t + 1], tr.actions[:t], tr.rewards[:t])
        assert np.array_equal(expert_direct(pi, sub), pi(sub))


# -- output error control -----------------------------------------------------


def test_oec_full_gain_offset():
    T = linear_dynamics(F_SRC, G_SRC)
    c = np.array([0.3, -0.2])
    o, a = np.array([1.0, 2.0]), np.array([0.5])
    s = oec_update(OecState(np.zeros(2), 1.0), T(o, a) + c, o, a, T)
    np.testing.assert_allclose(s.e, c, atol=1e-15)
    adapted = oec_dynamics(T, s.e)
    o2, a2 = np.array([-0.4, 0.1]), np.array([-0.3])
    np.testing.assert_allclose(adapted(o2, a2), T(o2, a2) + c, atol=1e-15)


def test_oec_no_gap_stays_zero():
    T = linear_dynamics(F_SRC, G_SRC)
    s = OecState(np.zeros(2), 0.2)
    o = np.array([1.0, 0.0])
    for _ in range(20):
        a = np.array([0.1])
        o_next = T(o, a)
        s = oec_update(s, o_next, o, a, T)
        o = o_next
    assert np.all(s.e == 0.0)


def test_oec_geometric_series():
    T = linear_dynamics(F_SRC, G_SRC)
    c = np.array([1.0, -2.0])
    s = OecState(np.zeros(2), 0.2)
    o, a = np.array([0.3, 0.1]), np.array([0.2])
    for _ in range(10):
        s = oec_update(s, T(o, a) + c, o, a, T)
    np.testing.assert_allclose(s.e, (1 - 0.8**10) * c, atol=1e-14)
    assert (1 - 0.8**10) == pytest.approx(0.8926, abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(
    gamma=st.floats(0.01, 1.0),
    errs=st.lists(st.lists(st.floats(-5, 5), min_size=2, max_size=2), min_size=1, max_size=30),
)
def test_oec_error_is_convex_combination(gamma, errs):
    T = DynamicsFn(lambda O, A, K: np.zeros_like(O), 2, 1)
    s = OecState(np.zeros(2), gamma)
    bound = 0.0
    for err in errs:
        err = np.array(err)
        s = oec_update(s, err, np.zeros(2), np.zeros(1), T)
        bound = max(bound, np.linalg.norm(err))
        assert np.linalg.norm(s.e) <= bound + 1e-12


def test_oec_adapted_kernel_matches_python_map():
    T = env_dynamics(bouncer_params())
    e = np.array([0.01, -0.04, 0.0, 0.0])
    f = oec_dynamics(T, e)
    assert f.kernel is not None
    from simtransfer import _fastilqr as fast

    o, a = np.array([0.2, 0.3, 0.1, 0.2]), np.array([0.4])
    step, prm = f.kernel
    np.testing.assert_allclose(fast._step(step, o, a, 3, prm), f(o, a, 3), atol=1e-12)
    np.testing.assert_allclose(f(o, a, 3), T(o, a, 3) + e, atol=1e-15)


def test_oec_policy_runs_in_bouncer():
    p = bouncer_params(episode_len=20)
    pol = OecPolicy(env_dynamics(p), task_cost("bouncer1d"), 0.2, IlqrConfig(horizon=10))
    tr = rollout(p, pol, RngStream(0))
    assert len(tr) == 20
    assert all(np.all(np.abs(a) <= 1) for a in tr.actions)


# -- Gaussian dynamics adaptation ---------------------------------------------


def test_condition_textbook_case():
    g = JointGaussian(np.zeros(2), np.array([[1.0, 0.5], [0.5, 1.0]]))
    lin = gda_condition(g, 1, 0)
    assert lin.F[0, 0] == 0.5
    assert lin.f[0] == 0.0
    assert lin.cov[0, 0] == 0.75


def test_condition_independent_blocks():
    mean = np.array([0.1, 0.2, 0.3, 5.0])
    cov = np.diag([1.0, 2.0, 3.0, 4.0])
    lin = gda_condition(JointGaussian(mean, cov), 1, 2)
    np.testing.assert_array_equal(lin.F, 0.0)
    np.testing.assert_array_equal(lin.f, [5.0])


@pytest.mark.parametrize("seed", range(5))
def test_condition_matches_normal_equations(seed):
    r = np.random.default_rng(seed)
    n, m = 3, 2
    d = 2 * n + m
    A = r.normal(size=(d, d))
    cov = A @ A.T + 0.1 * np.eye(d)
    mean = r.normal(size=d)
    lin = gda_condition(JointGaussian(mean, cov), n, m)
    dx = n + m
    # regression normal equations: F Sxx = Syx
    F = np.linalg.solve(cov[:dx, :dx], cov[dx:, :dx].T).T
    np.testing.assert_allclose(lin.F, F, atol=1e-10)
    np.testing.assert_allclose(lin.f, mean[dx:] - F @ mean[:dx], atol=1e-10)
    np.testing.assert_allclose(lin.cov, cov[dx:, dx:] - F @ cov[:dx, dx:], atol=1e-10)


def test_condition_singular_block_retries_with_ridge():
    cov = np.zeros((3, 3))
    lin = gda_condition(JointGaussian(np.zeros(3), cov, lam=1e-6), 1, 1)
    assert np.all(np.isfinite(lin.F))


def test_prior_recovers_linear_source():
    T = linear_dynamics(F_SRC, G_SRC)
    g = gda_prior(T, np.array([0.5, -0.5]), RngStream(0), n_samples=10_000)
    np.linalg.cholesky(g.cov)
    lin = gda_condition(g, 2, 1)
    FG = np.hstack([F_SRC, G_SRC])
    assert _rel(lin.F, FG) <= 0.05


def test_prior_of_constant_model():
    T = DynamicsFn(lambda O, A, K: np.ones_like(O), 2, 1)
    g = gda_prior(T, np.zeros(2), RngStream(0), n_samples=50, lam=1e-6)
    np.testing.assert_allclose(g.cov[3:, 3:], 1e-6 * np.eye(2), atol=1e-15)
    with pytest.raises(ValueError):
        gda_prior(T, np.zeros(2), RngStream(0), n_samples=5)


def test_update_limits():
    g = JointGaussian(np.arange(3.0), np.eye(3), w=0.0, lam=0.0)
    same = gda_update(g, np.array([5.0, 5.0, 5.0]))
    np.testing.assert_array_equal(same.mean, g.mean)
    np.testing.assert_array_equal(same.cov, g.cov)
    full = gda_update(JointGaussian(np.arange(3.0), np.eye(3), w=1.0, lam=1e-6), np.array([5.0, 4.0, 3.0]))
    np.testing.assert_array_equal(full.mean, [5.0, 4.0, 3.0])
    np.testing.assert_allclose(full.cov, 1e-6 * np.eye(3), atol=1e-20)
    with pytest.raises(ValueError):
        gda_update(g, np.zeros(2))


def test_update_tracks_shifted_linear_target():
    T = linear_dynamics(F_SRC, G_SRC)
    F_t = F_SRC + np.array([[0.05, -0.1], [0.1, 0.05]])
    G_t = 1.3 * G_SRC
    c = np.array([0.2, -0.1])
    g = gda_prior(T, np.zeros(2), RngStream(0))
    r = np.random.default_rng(1)
    for _ in range(10_000):
        o = r.normal(size=2)
        a = r.uniform(-1, 1, 1)
        g = gda_update(g, np.concatenate([o, a, F_t @ o + G_t @ a + c]))
    lin = gda_condition(g, 2, 1)
    assert _rel(lin.F, np.hstack([F_t, G_t])) <= 0.1
    np.linalg.cholesky(g.cov)
