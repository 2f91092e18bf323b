"""Desk-scale physics environments used as source and target domains.

Two environments are provided:

* ``reacher2`` -- a planar two-link arm with point masses at the elbow and
  the tip, driven by joint torques, whose plane can be tilted so that part of
  gravity acts in-plane.  Reward is the negative tip-to-target distance.
* ``bouncer1d`` -- a point mass above the ground driven by a vertical thrust,
  with instantaneous restitution at contact.  Reward is the negative distance
  to a periodic hopping reference.

Both are pure step functions over explicit state.  Observations are
invertible to states (see :meth:`Env.state_from_obs`), which is what lets the
transfer policy set the source simulator to the latest target observation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .core import RngStream, Trajectory

ENV_KINDS = ("reacher2", "bouncer1d")

OMEGA_MAX = 50.0  # rad/s; beyond this the reacher episode is aborted
TARGET_RADIUS = (0.05, 0.2)
BOUNCE_HEIGHT = 0.5
BOUNCE_PERIOD = 1.0
BOUNCER_Y0 = 0.05
# RK4 micro-steps per reacher substep; at full torque the arm is stiff enough
# that one RK4 step of dt misses a fine-step reference by ~0.3 rad/s
RK4_MICROSTEPS = 8


@dataclass(frozen=True)
class NoiseParams:
    sigma: float = 0.0
    rho: float = 0.0

    def validate(self):
        if not self.sigma >= 0:
            raise ValueError("noise.sigma must be >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("noise.rho must lie in [0, 1]")


@dataclass(frozen=True)
class EnvParams:
    """Full physical parameterization of one environment instance.

    ``mass2``, ``link1`` and ``link2`` are ignored by the bouncer, ``plane_tilt``
    too.  ``torque_max`` is N*m for the reacher and N for the bouncer.
    """

    kind: str = "reacher2"
    gravity: float = 9.81
    gravity_scale: float = 1.0
    plane_tilt: float = 0.0
    mass1: float = 1.7
    mass2: float = 1.7
    link1: float = 0.1
    link2: float = 0.1
    torque_scale: float = 1.0
    torque_max: float = 10.0
    restitution: float = 0.8
    dt: float = 0.01
    substeps: int = 2
    episode_len: int = 150
    noise: NoiseParams = field(default_factory=NoiseParams)

    @property
    def control_dt(self) -> float:
        return self.dt * self.substeps

    def validate(self) -> EnvParams:
        if self.kind not in ENV_KINDS:
            raise ValueError(f"kind must be one of {ENV_KINDS}, got {self.kind!r}")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.episode_len < 0:
            raise ValueError("episode_len must be >= 0")
        if not self.torque_scale > 0:
            raise ValueError("torque_scale must be > 0")
        if not self.torque_max > 0:
            raise ValueError("torque_max must be > 0")
        if not 0.0 < self.restitution <= 1.0:
            raise ValueError("restitution must lie in (0, 1]")
        for name in ("mass1", "mass2", "link1", "link2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        self.noise.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> EnvParams:
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown EnvParams field(s): {sorted(unknown)}")
        if "noise" in d and not isinstance(d["noise"], NoiseParams):
            d["noise"] = NoiseParams(**d["noise"])
        return cls(**d).validate()

    def with_noise(self, sigma: float, rho: float) -> EnvParams:
        return replace(self, noise=NoiseParams(sigma, rho))


def reacher_params(**kw) -> EnvParams:
    return EnvParams(kind="reacher2", **kw).validate()


def bouncer_params(**kw) -> EnvParams:
    kw.setdefault("mass1", 1.0)
    kw.setdefault("torque_max", 20.0)
    kw.setdefault("episode_len", 200)
    return EnvParams(kind="bouncer1d", **kw).validate()


def default_params(kind: str) -> EnvParams:
    return reacher_params() if kind == "reacher2" else bouncer_params()


# ----------------------------------------------------------------------------
# Reacher2
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ReacherState:
    theta1: float
    theta2: float
    omega1: float
    omega2: float
    target: tuple[float, float]


def _reacher_qdd(q1, q2, w1, w2, tau1, tau2, p: EnvParams, g_eff, xp=math):
    """Joint accelerations of the point-mass arm; works on floats or arrays."""
    m1, m2, l1, l2 = p.mass1, p.mass2, p.link1, p.link2
    c2, s2 = xp.cos(q2), xp.sin(q2)
    c1, c12 = xp.cos(q1), xp.cos(q1 + q2)
    M11 = m1 * l1 * l1 + m2 * (l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * c2)
    M12 = m2 * (l2 * l2 + l1 * l2 * c2)
    M22 = m2 * l2 * l2
    h = m2 * l1 * l2 * s2
    r1 = tau1 + h * (2.0 * w1 * w2 + w2 * w2) - g_eff * ((m1 + m2) * l1 * c1 + m2 * l2 * c12)
    r2 = tau2 - h * w1 * w1 - g_eff * m2 * l2 * c12
    det = M11 * M22 - M12 * M12
    return (M22 * r1 - M12 * r2) / det, (M11 * r2 - M12 * r1) / det


def reacher_mass_matrix(q2: float, p: EnvParams) -> np.ndarray:
    m1, m2, l1, l2 = p.mass1, p.mass2, p.link1, p.link2
    c2 = math.cos(q2)
    M11 = m1 * l1 * l1 + m2 * (l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * c2)
    M12 = m2 * (l2 * l2 + l1 * l2 * c2)
    return np.array([[M11, M12], [M12, m2 * l2 * l2]])


def reacher_bias(q1, q2, w1, w2, p: EnvParams) -> np.ndarray:
    """Coriolis/centrifugal plus gravity torques, C(q, qd) qd + G(q)."""
    m1, m2, l1, l2 = p.mass1, p.mass2, p.link1, p.link2
    g_eff = reacher_gravity(p)
    h = m2 * l1 * l2 * math.sin(q2)
    c12 = math.cos(q1 + q2)
    return np.array(
        [
            -h * (2.0 * w1 * w2 + w2 * w2) + g_eff * ((m1 + m2) * l1 * math.cos(q1) + m2 * l2 * c12),
            h * w1 * w1 + g_eff * m2 * l2 * c12,
        ]
    )


def reacher_gravity(p: EnvParams) -> float:
    """In-plane gravity magnitude; points along -y of the arm plane."""
    return p.gravity * p.gravity_scale * math.sin(p.plane_tilt)


def reacher_tip(theta1, theta2, p: EnvParams, xp=math):
    x = p.link1 * xp.cos(theta1) + p.link2 * xp.cos(theta1 + theta2)
    y = p.link1 * xp.sin(theta1) + p.link2 * xp.sin(theta1 + theta2)
    return x, y


def _rk4_arm(q1, q2, w1, w2, tau1, tau2, p, g_eff, h, xp=math):
    def deriv(a, b, c, d):
        e, f = _reacher_qdd(a, b, c, d, tau1, tau2, p, g_eff, xp)
        return c, d, e, f

    k1 = deriv(q1, q2, w1, w2)
    k2 = deriv(q1 + 0.5 * h * k1[0], q2 + 0.5 * h * k1[1], w1 + 0.5 * h * k1[2], w2 + 0.5 * h * k1[3])
    k3 = deriv(q1 + 0.5 * h * k2[0], q2 + 0.5 * h * k2[1], w1 + 0.5 * h * k2[2], w2 + 0.5 * h * k2[3])
    k4 = deriv(q1 + h * k3[0], q2 + h * k3[1], w1 + h * k3[2], w2 + h * k3[3])
    s = h / 6.0
    return (
        q1 + s * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        q2 + s * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        w1 + s * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
        w2 + s * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]),
    )


def reacher_step(state: ReacherState, action, p: EnvParams) -> tuple[ReacherState, float]:
    """Advance one control step (``substeps`` x ``RK4_MICROSTEPS`` RK4 steps covering ``dt`` each)."""
    u = p.torque_scale * p.torque_max
    a1 = min(max(float(action[0]), -1.0), 1.0)
    a2 = min(max(float(action[1]), -1.0), 1.0)
    g_eff = reacher_gravity(p)
    q1, q2, w1, w2 = state.theta1, state.theta2, state.omega1, state.omega2
    h = p.dt / RK4_MICROSTEPS
    for _ in range(p.substeps * RK4_MICROSTEPS):
        q1, q2, w1, w2 = _rk4_arm(q1, q2, w1, w2, u * a1, u * a2, p, g_eff, h)
    nxt = ReacherState(q1, q2, w1, w2, state.target)
    tx, ty = reacher_tip(q1, q2, p)
    reward = -math.hypot(tx - state.target[0], ty - state.target[1])
    return nxt, reward


def reacher_observe(state: ReacherState, p: EnvParams) -> np.ndarray:
    tx, ty = reacher_tip(state.theta1, state.theta2, p)
    gx, gy = state.target
    return np.array(
        [
            math.cos(state.theta1),
            math.sin(state.theta1),
            math.cos(state.theta2),
            math.sin(state.theta2),
            state.omega1,
            state.omega2,
            gx,
            gy,
            tx - gx,
            ty - gy,
        ]
    )


def reacher_kinetic_energy(state: ReacherState, p: EnvParams) -> float:
    M = reacher_mass_matrix(state.theta2, p)
    w = np.array([state.omega1, state.omega2])
    return 0.5 * float(w @ M @ w)


def _reacher_step_obs_batch(obs: np.ndarray, act: np.ndarray, p: EnvParams) -> np.ndarray:
    """Vectorized observation -> next observation map for (n, 10) inputs."""
    u = p.torque_scale * p.torque_max
    act = np.clip(act, -1.0, 1.0)
    g_eff = reacher_gravity(p)
    q1 = np.arctan2(obs[:, 1], obs[:, 0])
    q2 = np.arctan2(obs[:, 3], obs[:, 2])
    w1, w2 = obs[:, 4], obs[:, 5]
    h = p.dt / RK4_MICROSTEPS
    for _ in range(p.substeps * RK4_MICROSTEPS):
        q1, q2, w1, w2 = _rk4_arm(q1, q2, w1, w2, u * act[:, 0], u * act[:, 1], p, g_eff, h, np)
    tx, ty = reacher_tip(q1, q2, p, np)
    gx, gy = obs[:, 6], obs[:, 7]
    return np.stack(
        [np.cos(q1), np.sin(q1), np.cos(q2), np.sin(q2), w1, w2, gx, gy, tx - gx, ty - gy], axis=1
    )


# ----------------------------------------------------------------------------
# Bouncer1D
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class BouncerState:
    y: float
    v: float
    t: float


def bouncer_reference(t, xp=math):
    if xp is math:
        return BOUNCE_HEIGHT * max(0.0, math.sin(2.0 * math.pi * t / BOUNCE_PERIOD))
    return BOUNCE_HEIGHT * np.maximum(0.0, np.sin(2.0 * np.pi * t / BOUNCE_PERIOD))


def control_index(t: float, p: EnvParams) -> int:
    return int(round(t / p.control_dt))


def control_time(k, p: EnvParams):
    """Time of control step ``k``.

    Every code path derives time from the integer step count, so the
    simulator and the observation-driven planning maps agree to the bit.
    """
    return k * p.control_dt


def bouncer_step(state: BouncerState, action, p: EnvParams) -> tuple[BouncerState, float]:
    """Semi-implicit Euler substeps with instantaneous restitution at y = 0."""
    a = min(max(float(np.ravel(action)[0]), -1.0), 1.0)
    accel = p.torque_scale * p.torque_max * a / p.mass1 - p.gravity * p.gravity_scale
    y, v, dt, e = state.y, state.v, p.dt, p.restitution
    for _ in range(p.substeps):
        v = v + dt * accel
        y = y + dt * v
        if y < 0.0:
            y = 0.0
            if v < 0.0:
                v = -e * v
    t = control_time(control_index(state.t, p) + 1, p)
    return BouncerState(y, v, t), -abs(y - bouncer_reference(t))


def bouncer_observe(state: BouncerState, p: EnvParams) -> np.ndarray:
    return np.array(
        [
            state.y,
            state.v,
            bouncer_reference(control_time(control_index(state.t, p), p)),
            bouncer_reference(control_time(control_index(state.t, p) + 1, p)),
        ]
    )


def _bouncer_step_obs_batch(obs: np.ndarray, act: np.ndarray, k: np.ndarray, p: EnvParams):
    accel = p.torque_scale * p.torque_max * np.clip(act[:, 0], -1.0, 1.0) / p.mass1
    accel = accel - p.gravity * p.gravity_scale
    # a height below the floor is not a simulator state; project it onto the floor
    y, v = np.maximum(obs[:, 0], 0.0), obs[:, 1].copy()
    for _ in range(p.substeps):
        v = v + p.dt * accel
        y = y + p.dt * v
        hit = y < 0.0
        v = np.where(hit & (v < 0.0), -p.restitution * v, v)
        y = np.where(hit, 0.0, y)
    t1, t2 = control_time(k + 1.0, p), control_time(k + 2.0, p)
    return np.stack([y, v, bouncer_reference(t1, np), bouncer_reference(t2, np)], axis=1)


# ----------------------------------------------------------------------------
# Generic environment interface
# ----------------------------------------------------------------------------


class Env:
    """Thin object wrapper binding one environment kind to its parameters."""

    d_obs: int
    d_act: int

    def __init__(self, p: EnvParams):
        self.p = p.validate()

    def initial_state(self, rng: RngStream):
        raise NotImplementedError

    def step(self, state, action):
        raise NotImplementedError

    def observe(self, state) -> np.ndarray:
        raise NotImplementedError

    def state_from_obs(self, obs, step_index: int):
        """Exact state reconstruction; ``step_index`` is the control step count."""
        raise NotImplementedError

    def step_obs(self, obs: np.ndarray, act: np.ndarray, step_index) -> np.ndarray:
        """Vectorized one-step map over observations, shape (n, d_obs) -> (n, d_obs)."""
        raise NotImplementedError

    def unstable(self, state) -> bool:
        return False


class Reacher2(Env):
    d_obs = 10
    d_act = 2

    def initial_state(self, rng: RngStream) -> ReacherState:
        u_r, u_phi = rng.gen.random(2)
        r0, r1 = TARGET_RADIUS
        r = math.sqrt(r0 * r0 + u_r * (r1 * r1 - r0 * r0))
        phi = 2.0 * math.pi * u_phi
        return ReacherState(0.0, 0.0, 0.0, 0.0, (r * math.cos(phi), r * math.sin(phi)))

    def step(self, state, action):
        return reacher_step(state, action, self.p)

    def observe(self, state):
        return reacher_observe(state, self.p)

    def state_from_obs(self, obs, step_index=0):
        obs = np.asarray(obs, dtype=float)
        if obs.shape != (10,) or not np.all(np.isfinite(obs)):
            raise ValueError("reacher observation must be 10 finite values")
        if abs(obs[0]) + abs(obs[1]) == 0.0 or abs(obs[2]) + abs(obs[3]) == 0.0:
            raise ValueError("cannot recover joint angles from a zero cos/sin pair")
        return ReacherState(
            math.atan2(obs[1], obs[0]),
            math.atan2(obs[3], obs[2]),
            float(obs[4]),
            float(obs[5]),
            (float(obs[6]), float(obs[7])),
        )

    def step_obs(self, obs, act, step_index=0):
        return _reacher_step_obs_batch(np.atleast_2d(obs), np.atleast_2d(act), self.p)

    def unstable(self, state):
        return not (abs(state.omega1) <= OMEGA_MAX and abs(state.omega2) <= OMEGA_MAX)


def _bouncer_step_obs_one(o, a: float, k: int, p: EnvParams) -> np.ndarray:
    """Scalar twin of ``_bouncer_step_obs_batch``."""
    accel = p.torque_scale * p.torque_max * min(max(a, -1.0), 1.0) / p.mass1 - p.gravity * p.gravity_scale
    y, v = max(float(o[0]), 0.0), float(o[1])
    for _ in range(p.substeps):
        v += p.dt * accel
        y += p.dt * v
        if y < 0.0:
            y = 0.0
            if v < 0.0:
                v = -p.restitution * v
    t1, t2 = control_time(k + 1, p), control_time(k + 2, p)
    return np.array([y, v, bouncer_reference(t1), bouncer_reference(t2)])


class Bouncer1D(Env):
    d_obs = 4
    d_act = 1

    def initial_state(self, rng: RngStream) -> BouncerState:
        return BouncerState(BOUNCER_Y0, 0.0, 0.0)

    def step(self, state, action):
        return bouncer_step(state, action, self.p)

    def observe(self, state):
        return bouncer_observe(state, self.p)

    def state_from_obs(self, obs, step_index=0):
        obs = np.asarray(obs, dtype=float)
        if obs.shape != (4,) or not np.all(np.isfinite(obs)):
            raise ValueError("bouncer observation must be 4 finite values")
        if obs[0] < 0.0:
            raise ValueError("bouncer height must be >= 0")
        # The reference entries do not pin down time during the ground phase,
        # so time comes from the step count.
        return BouncerState(float(obs[0]), float(obs[1]), control_time(step_index, self.p))

    def step_obs(self, obs, act, step_index=0):
        obs = np.atleast_2d(obs)
        k = np.broadcast_to(np.asarray(step_index, dtype=float), (obs.shape[0],))
        return _bouncer_step_obs_batch(obs, np.atleast_2d(act), k, self.p)

    def step_obs_one(self, obs, act, step_index=0):
        return _bouncer_step_obs_one(obs, float(act[0]), step_index, self.p)


def make_env(p: EnvParams) -> Env:
    return {"reacher2": Reacher2, "bouncer1d": Bouncer1D}[p.kind](p)


def observe(state, p: EnvParams) -> np.ndarray:
    return make_env(p).observe(state)


def obs_dims(kind: str) -> tuple[int, int]:
    cls = {"reacher2": Reacher2, "bouncer1d": Bouncer1D}[kind]
    return cls.d_obs, cls.d_act


# ----------------------------------------------------------------------------
# Motor noise
# ----------------------------------------------------------------------------


@dataclass
class NoiseState:
    eps: np.ndarray


def init_noise(noise: NoiseParams, d_act: int, rng: RngStream | None) -> NoiseState:
    """Draw the episode's starting offset from the stationary N(0, sigma^2)."""
    if noise.sigma == 0.0:
        return NoiseState(np.zeros(d_act))
    return NoiseState(noise.sigma * rng.gen.standard_normal(d_act))


def apply_motor_noise(a, ns: NoiseState, noise: NoiseParams, rng: RngStream | None):
    """AR(1) additive actuator noise; ``rho == 1`` keeps the episode offset fixed.

    Draws one standard normal per actuator per call (none when sigma is 0).
    """
    a = np.asarray(a, dtype=float)
    if noise.sigma == 0.0:
        return a.copy(), ns
    nu = rng.gen.standard_normal(a.shape[0])
    eps = noise.rho * ns.eps + noise.sigma * math.sqrt(max(0.0, 1.0 - noise.rho**2)) * nu
    return np.clip(a + eps, -1.0, 1.0), NoiseState(eps)


# ----------------------------------------------------------------------------
# Rollouts and hand-designed experts
# ----------------------------------------------------------------------------


def rollout(
    p: EnvParams,
    policy: Callable[[Trajectory], np.ndarray],
    rng: RngStream,
    *,
    initial_state=None,
) -> Trajectory:
    """Run one episode and return commanded (pre-noise) actions.

    Draw order on ``rng``: initial state, then the noise offset, then one
    noise draw per step.  An unstable reacher state truncates the episode.
    """
    env = make_env(p)
    state = env.initial_state(rng) if initial_state is None else initial_state
    ns = init_noise(p.noise, env.d_act, rng)
    traj = Trajectory([env.observe(state)])
    for _ in range(p.episode_len):
        a = np.clip(np.asarray(policy(traj), dtype=float), -1.0, 1.0)
        executed, ns = apply_motor_noise(a, ns, p.noise, rng)
        state, r = env.step(state, executed)
        traj.append(a, r, env.observe(state))
        if env.unstable(state):
            break
    return traj


def zero_policy(d_act: int):
    def policy(traj):
        return np.zeros(d_act)

    return policy


def bouncer_expert(obs, p: EnvParams, kp: float = 80.0, kd: float = 10.0) -> np.ndarray:
    """PD tracking of the hop reference; reference velocity by finite difference."""
    y, v, y_ref, y_ref_next = obs[0], obs[1], obs[2], obs[3]
    v_ref = (y_ref_next - y_ref) / p.control_dt
    a = (kp * (y_ref - y) + kd * (v_ref - v)) / (p.torque_scale * p.torque_max)
    return np.array([min(max(a, -1.0), 1.0)])


def reacher_ik(target, p: EnvParams) -> tuple[float, float]:
    """Elbow-positive inverse kinematics, clamped to the reachable workspace."""
    gx, gy = target
    l1, l2 = p.link1, p.link2
    c2 = (gx * gx + gy * gy - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    q2 = math.acos(min(max(c2, -1.0), 1.0))
    q1 = math.atan2(gy, gx) - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
    return q1, q2


def _wrap(x: float) -> float:
    return (x + math.pi) % (2.0 * math.pi) - math.pi


def reacher_expert(obs, p: EnvParams, kp: float = 36.0, kd: float = 12.0) -> np.ndarray:
    """Computed-torque joint PD toward the IK solution, using the model in ``p``."""
    q1 = math.atan2(obs[1], obs[0])
    q2 = math.atan2(obs[3], obs[2])
    w1, w2 = obs[4], obs[5]
    d1, d2 = reacher_ik((obs[6], obs[7]), p)
    qdd = np.array([kp * _wrap(d1 - q1) - kd * w1, kp * _wrap(d2 - q2) - kd * w2])
    tau = reacher_mass_matrix(q2, p) @ qdd + reacher_bias(q1, q2, w1, w2, p)
    return np.clip(tau / (p.torque_scale * p.torque_max), -1.0, 1.0)


def expert_policy(p: EnvParams, **gains):
    """Hand-designed source expert for ``p.kind`` as a trajectory policy."""
    fn = reacher_expert if p.kind == "reacher2" else bouncer_expert

    def policy(traj: Trajectory):
        return fn(traj.last_obs, p, **gains)

    return policy
