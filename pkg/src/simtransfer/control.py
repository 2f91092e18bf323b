"""Iterative LQR with finite-difference linearization, and a receding-horizon wrapper.

Dynamics are maps over observations.  They are vectorized: ``fn(O, A, K)``
takes stacked observations ``(n, d_obs)``, actions ``(n, d_act)`` and the
absolute control-step index of every row ``(n,)`` (time-varying systems such
as the bouncer need it; stationary ones ignore it).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _fastilqr as _fast
from .envs import EnvParams, make_env


@dataclass
class DynamicsFn:
    """Vectorized one-step map with optional fast paths.

    ``single`` evaluates one row without array overhead.  ``kernel`` is a
    compiled ``(kernel id, params)`` pair; when present ``ilqr`` runs entirely in
    compiled code.  If ``offset_slot`` is set, the last ``d_obs`` kernel
    parameters are an additive output offset.
    """

    fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    d_obs: int
    d_act: int
    single: Callable[[np.ndarray, np.ndarray, int], np.ndarray] | None = None
    kernel: tuple | None = None
    offset_slot: bool = False

    def batch(self, O, A, K) -> np.ndarray:
        O = np.atleast_2d(O)
        K = np.broadcast_to(np.asarray(K), (O.shape[0],))
        out = self.fn(O, np.atleast_2d(A), K)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("dynamics returned non-finite values")
        return out

    def __call__(self, o, a, k: int = 0) -> np.ndarray:
        if self.single is not None:
            return self.single(o, a, k)
        return self.batch(np.asarray(o, dtype=float)[None], np.asarray(a, dtype=float)[None], k)[0]


def linear_dynamics(F: np.ndarray, G: np.ndarray, c: np.ndarray | None = None) -> DynamicsFn:
    """``o' = F o + G a (+ c)``."""
    c = np.zeros(F.shape[0]) if c is None else np.asarray(c, dtype=float)
    kernel = (_fast.LINEAR, _fast.linear_params_vector(np.hstack([F, G]), c))
    return DynamicsFn(lambda O, A, K: O @ F.T + A @ G.T + c, F.shape[0], G.shape[1], kernel=kernel)


def env_dynamics(p: EnvParams) -> DynamicsFn:
    env = make_env(p)
    if p.kind == "bouncer1d":
        kernel = (_fast.BOUNCER, _fast.bouncer_params_vector(p))
        return DynamicsFn(env.step_obs, env.d_obs, env.d_act, env.step_obs_one, kernel, offset_slot=True)

    def single(o, a, k):
        return env.observe(env.step(env.state_from_obs(o, k), a)[0])

    return DynamicsFn(env.step_obs, env.d_obs, env.d_act, single)


@dataclass
class QuadCost:
    """``(o - o*)' Q (o - o*) + a' R a`` per step, ``Q_f`` on the final observation."""

    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray | None = None
    target: np.ndarray | None = None

    def __post_init__(self):
        d = self.Q.shape[0]
        self.Qf = self.Q if self.Qf is None else self.Qf
        self.target = np.zeros(d) if self.target is None else np.asarray(self.target, dtype=float)
        for name, M in (("Q", self.Q), ("Qf", self.Qf)):
            if np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        if np.linalg.eigvalsh(0.5 * (self.R + self.R.T)).min() <= 0:
            raise ValueError("R must be positive definite")

    def total(self, X: np.ndarray, U: np.ndarray) -> float:
        dX = X - self.target
        run = np.einsum("ni,ij,nj->", dX[:-1], self.Q, dX[:-1]) + np.einsum("ni,ij,nj->", U, self.R, U)
        return float(run + dX[-1] @ self.Qf @ dX[-1])


@dataclass
class IlqrConfig:
    horizon: int = 20
    max_iter: int = 50
    mu_init: float = 1e-6
    mu_factor: float = 10.0
    mu_max: float = 1e10
    n_alphas: int = 11  # 1, 1/2, ..., 2^-10
    tol: float = 1e-6
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass
class IlqrResult:
    U: np.ndarray  # (N, d_act)
    K: np.ndarray  # (N, d_act, d_obs)
    cost: float
    X: np.ndarray  # (N + 1, d_obs)
    converged: bool
    iterations: int
    costs: list[float] = field(default_factory=list)


def linearize(f: DynamicsFn, o, a, h: float = 1e-5, k: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference Jacobians ``A = df/do``, ``B = df/da`` at one point."""
    A, B = linearize_traj(f, np.asarray(o, float)[None], np.asarray(a, float)[None], h, k)
    return A[0], B[0]


def linearize_traj(f: DynamicsFn, X, U, h: float = 1e-5, k0: int = 0):
    """Jacobians at every ``(X[t], U[t])`` from one batched dynamics call."""
    N, n, m = len(U), f.d_obs, f.d_act
    d = n + m
    Z = np.concatenate([X, U], axis=1)  # (N, d)
    E = np.eye(d) * h
    P = np.concatenate([Z[:, None, :] + E, Z[:, None, :] - E], axis=1)  # (N, 2d, d)
    P = P.reshape(N * 2 * d, d)
    K = np.repeat(k0 + np.arange(N), 2 * d)
    out = f.batch(P[:, :n], P[:, n:], K).reshape(N, 2, d, n)
    J = (out[:, 0] - out[:, 1]) / (2.0 * h)  # (N, d, n): row i = derivative w.r.t. input i
    J = np.transpose(J, (0, 2, 1))
    return J[:, :, :n], J[:, :, n:]


def _rollout(f: DynamicsFn, o0, U, k0):
    X = np.empty((len(U) + 1, f.d_obs))
    X[0] = o0
    for t in range(len(U)):
        X[t + 1] = f(X[t], U[t], k0 + t)
    return X


def ilqr(
    f: DynamicsFn,
    c: QuadCost,
    o0,
    U_init,
    cfg: IlqrConfig | None = None,
    k0: int = 0,
) -> IlqrResult:
    """Trajectory optimization from ``o0``; ``k0`` is the absolute step of ``o0``.

    Actions are clipped to [-1, 1] in every rollout (no constrained backward
    pass).  A forward pass is accepted on any cost decrease.
    """
    cfg = cfg or IlqrConfig()
    U = np.clip(np.array(U_init, dtype=float).reshape(-1, f.d_act), -1.0, 1.0)
    N, n, m = len(U), f.d_obs, f.d_act
    if N != cfg.horizon:
        raise ValueError(f"U_init has {N} steps, horizon is {cfg.horizon}")
    o0 = np.asarray(o0, dtype=float)
    if f.kernel is not None:
        step, prm = f.kernel
        out = _fast.ilqr_kernel(
            step, prm, *(np.ascontiguousarray(M, dtype=float) for M in (c.Q, c.R, c.Qf, c.target)),
            o0, U, int(k0), cfg.max_iter, cfg.mu_init, cfg.mu_factor, cfg.mu_max, cfg.n_alphas,
            cfg.tol, cfg.fd_step,
        )
        U, K, J, X, conv, it, costs = out
        return IlqrResult(U, K, float(J), X, bool(conv), int(it), list(costs))
    X = _rollout(f, o0, U, k0)
    J = c.total(X, U)
    costs = [J]
    mu = cfg.mu_init
    alphas = 0.5 ** np.arange(cfg.n_alphas)
    Q2, R2, Qf2 = 2.0 * c.Q, 2.0 * c.R, 2.0 * c.Qf
    eye_m = np.eye(m)
    Kfb = np.zeros((N, m, n))
    converged = False
    it = 0
    while it < cfg.max_iter:
        it += 1
        A, B = linearize_traj(f, X[:-1], U, cfg.fd_step, k0)
        # backward pass, retried with stronger regularization on failure
        while True:
            Vx = Qf2 @ (X[-1] - c.target)
            Vxx = Qf2.copy()
            kff = np.zeros((N, m))
            Kfb = np.zeros((N, m, n))
            dV1 = dV2 = 0.0
            ok = True
            for t in range(N - 1, -1, -1):
                At, Bt = A[t], B[t]
                Qx = Q2 @ (X[t] - c.target) + At.T @ Vx
                Qu = R2 @ U[t] + Bt.T @ Vx
                VB = Vxx @ Bt
                Qxx = Q2 + At.T @ Vxx @ At
                Quu = R2 + Bt.T @ VB
                Qux = VB.T @ At
                try:
                    L = np.linalg.cholesky(Quu + mu * eye_m)
                except np.linalg.LinAlgError:
                    ok = False
                    break
                sol = np.linalg.solve(L.T, np.linalg.solve(L, np.column_stack([Qu, Qux])))
                kt, Kt = -sol[:, 0], -sol[:, 1:]
                kff[t], Kfb[t] = kt, Kt
                dV1 += kt @ Qu
                dV2 += 0.5 * kt @ Quu @ kt
                Vx = Qx + Kt.T @ Quu @ kt + Kt.T @ Qu + Qux.T @ kt
                Vxx = Qxx + Kt.T @ Quu @ Kt + Kt.T @ Qux + Qux.T @ Kt
                Vxx = 0.5 * (Vxx + Vxx.T)
            if ok:
                break
            mu *= cfg.mu_factor
            if mu > cfg.mu_max:
                return IlqrResult(U, Kfb, J, X, False, it, costs)

        expected = -(dV1 + dV2)
        if expected <= cfg.tol * abs(J):
            converged = True
            break

        # all step sizes are rolled out together; the largest improving one wins
        Xn = np.empty((len(alphas), N + 1, n))
        Un = np.empty((len(alphas), N, m))
        Xn[:, 0] = o0
        with np.errstate(all="ignore"):
            for t in range(N):
                Un[:, t] = np.clip(U[t] + alphas[:, None] * kff[t] + (Xn[:, t] - X[t]) @ Kfb[t].T, -1.0, 1.0)
                Xn[:, t + 1] = f.fn(Xn[:, t], Un[:, t], np.full(len(alphas), k0 + t))
            Jn_all = np.array([c.total(Xn[i], Un[i]) for i in range(len(alphas))])
        better = np.flatnonzero(np.isfinite(Jn_all) & (Jn_all < J))
        accepted = better.size > 0
        if accepted:
            i = better[0]
            Xn, Un, Jn = Xn[i], Un[i], Jn_all[i]
        if accepted:
            rel = (J - Jn) / max(abs(J), 1e-300)
            X, U, J = Xn, Un, Jn
            costs.append(J)
            mu = max(mu / cfg.mu_factor, cfg.mu_init)
            if rel < cfg.tol:
                converged = True
                break
        else:
            mu *= cfg.mu_factor
            if mu > cfg.mu_max:
                break
    return IlqrResult(U, Kfb, J, X, converged, it, costs)


def mpc_action(
    f: DynamicsFn,
    c: QuadCost,
    o,
    warm=None,
    cfg: IlqrConfig | None = None,
    k0: int = 0,
) -> tuple[np.ndarray, np.ndarray, IlqrResult]:
    """First action of an iLQR plan from ``o`` plus the shifted plan as next warm start."""
    cfg = cfg or IlqrConfig()
    if warm is None:
        warm = np.zeros((cfg.horizon, f.d_act))
    res = ilqr(f, c, o, warm, cfg, k0)
    nxt = np.concatenate([res.U[1:], res.U[-1:]], axis=0)
    return res.U[0].copy(), nxt, res


class MpcPolicy:
    """Receding-horizon iLQR on a fixed model; call once per control step."""

    def __init__(self, f: DynamicsFn, c: QuadCost, cfg: IlqrConfig | None = None):
        self.f, self.c, self.cfg = f, c, cfg or IlqrConfig()
        self.warm = None
        self.nonconverged = 0

    def __call__(self, traj) -> np.ndarray:
        a, self.warm, res = mpc_action(self.f, self.c, traj.last_obs, self.warm, self.cfg, len(traj))
        self.nonconverged += not res.converged
        return a


def task_cost(kind: str) -> QuadCost:
    """Quadratic surrogate of each environment's reward.

    Reacher: squared tip-to-target error (observation dims 8, 9).
    Bouncer: squared height error ``(y - y_ref)^2`` via ``Q = C'C``, ``C = [1, 0, -1, 0]``.
    """
    if kind == "reacher2":
        Q = np.zeros((10, 10))
        Q[8, 8] = Q[9, 9] = 10.0
        return QuadCost(Q, 1e-3 * np.eye(2))
    Cy = np.array([[1.0, 0.0, -1.0, 0.0]])
    return QuadCost(10.0 * Cy.T @ Cy, 1e-3 * np.eye(1))


def mpc_expert(p: EnvParams, cfg: IlqrConfig | None = None) -> MpcPolicy:
    """iLQR-MPC against the true dynamics of ``p`` (slow; a reference expert)."""
    return MpcPolicy(env_dynamics(p), task_cost(p.kind), cfg)
