"""Comparison policies: the unadapted expert and two adaptive-MPC schemes.

Output error control adds a decayed one-step prediction error to the source
model.  Gaussian dynamics adaptation keeps a joint Gaussian over
``(o_t, a_t, o_{t+1})`` seeded from source-model samples, updates it with
exponential forgetting on target transitions, and conditions it into a local
linear model.  Both re-plan with iLQR every control step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import DynamicsFn, IlqrConfig, QuadCost, linear_dynamics, mpc_action
from .core import Policy, RngStream, Trajectory

OEC_GAMMAS = (0.1, 0.2, 0.5)
GDA_WEIGHTS = (0.02, 0.05, 0.2)


def expert_direct(source_policy: Policy, traj: Trajectory) -> np.ndarray:
    return source_policy(traj)


# ----------------------------------------------------------------------------
# Output error control
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class OecState:
    e: np.ndarray
    gamma: float = 0.2


def oec_update(s: OecState, o_t, o_prev, a_prev, T_source: DynamicsFn, k_prev: int = 0) -> OecState:
    """``e <- (1 - gamma) e + gamma (o_t - T_source(o_prev, a_prev))``."""
    err = np.asarray(o_t, dtype=float) - T_source(o_prev, a_prev, k_prev)
    return OecState((1.0 - s.gamma) * s.e + s.gamma * err, s.gamma)


def oec_dynamics(T_source: DynamicsFn, e: np.ndarray) -> DynamicsFn:
    """``T_source + e`` as a dynamics function (keeps the source's fast paths)."""
    single = kernel = None
    if T_source.single is not None:
        single = lambda o, a, k: T_source.single(o, a, k) + e  # noqa: E731
    if T_source.kernel is not None and T_source.offset_slot:
        step, prm = T_source.kernel
        prm = prm.copy()
        prm[-len(e):] += e
        kernel = (step, prm)
    return DynamicsFn(
        lambda O, A, K: T_source.fn(O, A, K) + e, T_source.d_obs, T_source.d_act, single, kernel, kernel is not None
    )


class OecPolicy:
    """MPC on ``T_source + e_t``; ``e_t`` refreshed from every observed transition."""

    def __init__(self, T_source: DynamicsFn, cost: QuadCost, gamma: float = 0.2, cfg: IlqrConfig | None = None):
        self.T, self.cost, self.cfg = T_source, cost, cfg or IlqrConfig()
        self.state = OecState(np.zeros(T_source.d_obs), gamma)
        self.warm = None

    def __call__(self, traj: Trajectory) -> np.ndarray:
        t = len(traj)
        if t:
            o_prev, a_prev = traj.observations[-2], traj.actions[-1]
            self.state = oec_update(self.state, traj.last_obs, o_prev, a_prev, self.T, t - 1)
        f = oec_dynamics(self.T, self.state.e)
        a, self.warm, _ = mpc_action(f, self.cost, traj.last_obs, self.warm, self.cfg, t)
        return a


# ----------------------------------------------------------------------------
# Gaussian dynamics adaptation
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class JointGaussian:
    """Gaussian over ``z = (o, a, o')``.

    ``n0`` is recorded as the prior's pseudo-count; the forgetting update
    itself uses the fixed weight ``w``.
    """

    mean: np.ndarray
    cov: np.ndarray
    n0: float = 50.0
    w: float = 0.05
    lam: float = 1e-6


@dataclass(frozen=True)
class LinearGaussianDynamics:
    F: np.ndarray  # (d_obs, d_obs + d_act)
    f: np.ndarray
    cov: np.ndarray

    def as_dynamics(self, d_obs: int, d_act: int) -> DynamicsFn:
        return linear_dynamics(self.F[:, :d_obs], self.F[:, d_obs:], self.f)


def gda_prior(
    T_source: DynamicsFn,
    center,
    rng: RngStream,
    n_samples: int = 200,
    k: int = 0,
    n0: float = 50.0,
    w: float = 0.05,
    lam: float = 1e-6,
) -> JointGaussian:
    """Fit a Gaussian to source-model transitions sampled around ``center``.

    Draw order: all observation perturbations ``N(0, 0.1^2)``, then all
    actions ``U[-1, 1]``.
    """
    center = np.asarray(center, dtype=float)
    n, m = T_source.d_obs, T_source.d_act
    if n_samples < 2 * n + m + 2:
        raise ValueError("n_samples must be at least the joint dimension + 2")
    O = center + 0.1 * rng.gen.standard_normal((n_samples, n))
    A = rng.gen.uniform(-1.0, 1.0, size=(n_samples, m))
    Z = np.concatenate([O, A, T_source.batch(O, A, k)], axis=1)
    cov = np.cov(Z, rowvar=False, bias=True) + lam * np.eye(Z.shape[1])
    return JointGaussian(Z.mean(axis=0), 0.5 * (cov + cov.T), n0, w, lam)


def gda_update(g: JointGaussian, z) -> JointGaussian:
    """Exponentially weighted mean/covariance update with ridge ``lam``."""
    z = np.asarray(z, dtype=float)
    if z.shape != g.mean.shape:
        raise ValueError("transition vector has the wrong dimension")
    w = g.w
    mean = (1.0 - w) * g.mean + w * z
    d = z - mean
    cov = (1.0 - w) * g.cov + w * np.outer(d, d) + g.lam * np.eye(len(z))
    return JointGaussian(mean, 0.5 * (cov + cov.T), g.n0, w, g.lam)


def gda_condition(g: JointGaussian, d_obs: int, d_act: int) -> LinearGaussianDynamics:
    """Condition ``p(o' | o, a)``; retries once with a 10x ridge if the input block is singular."""
    dx = d_obs + d_act
    if g.mean.shape[0] != dx + d_obs:
        raise ValueError("joint dimension does not match d_obs, d_act")
    Sxx = g.cov[:dx, :dx]
    Syx = g.cov[dx:, :dx]
    Syy = g.cov[dx:, dx:]
    try:
        L = np.linalg.cholesky(Sxx)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky(Sxx + 10.0 * g.lam * np.eye(dx))
    # F = Syx Sxx^-1 via two triangular solves on the transpose
    F = np.linalg.solve(L.T, np.linalg.solve(L, Syx.T)).T
    f = g.mean[dx:] - F @ g.mean[:dx]
    res = Syy - F @ Syx.T
    return LinearGaussianDynamics(F, f, 0.5 * (res + res.T))


class GdaPolicy:
    """MPC on the conditioned local linear model.

    The prior is rebuilt around the first observation of each episode; every
    later step folds the latest target transition into the joint Gaussian.
    """

    def __init__(
        self,
        T_source: DynamicsFn,
        cost: QuadCost,
        rng: RngStream,
        w: float = 0.05,
        n0: float = 50.0,
        n_samples: int = 200,
        cfg: IlqrConfig | None = None,
    ):
        self.T, self.cost, self.rng = T_source, cost, rng
        self.w, self.n0, self.n_samples = w, n0, n_samples
        self.cfg = cfg or IlqrConfig()
        self.joint: JointGaussian | None = None
        self.warm = None

    def __call__(self, traj: Trajectory) -> np.ndarray:
        t = len(traj)
        if t == 0 or self.joint is None:
            self.joint = gda_prior(self.T, traj.last_obs, self.rng, self.n_samples, t, self.n0, self.w)
        else:
            z = np.concatenate([traj.observations[-2], traj.actions[-1], traj.last_obs])
            self.joint = gda_update(self.joint, z)
        lin = gda_condition(self.joint, self.T.d_obs, self.T.d_act)
        f = lin.as_dynamics(self.T.d_obs, self.T.d_act)
        a, self.warm, _ = mpc_action(f, self.cost, traj.last_obs, self.warm, self.cfg, t)
        return a
