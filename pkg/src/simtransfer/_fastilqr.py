"""Compiled iLQR for dynamics that provide a numba step kernel.

The algorithm mirrors ``control.ilqr`` line for line; only the bouncer and
linear models used by the MPC baselines get kernels.  A kernel has the
signature ``step(o, a, k, prm) -> o_next`` with all parameters packed into
the float vector ``prm``.  Kernels are selected by integer id rather than
passed as function objects so that numba's on-disk cache stays valid
across processes.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BOUNCER = 0
LINEAR = 1


def bouncer_params_vector(p, offset=None) -> np.ndarray:
    """Pack ``EnvParams`` of a bouncer (plus an additive output offset) for ``bouncer_kernel``."""
    from .envs import BOUNCE_HEIGHT, BOUNCE_PERIOD

    off = np.zeros(4) if offset is None else np.asarray(offset, dtype=float)
    head = [
        p.torque_scale * p.torque_max / p.mass1,
        p.gravity * p.gravity_scale,
        p.dt,
        float(p.substeps),
        p.restitution,
        p.control_dt,
        BOUNCE_HEIGHT,
        BOUNCE_PERIOD,
    ]
    return np.concatenate([head, off])


def linear_params_vector(F: np.ndarray, f: np.ndarray) -> np.ndarray:
    n, d = F.shape
    return np.concatenate([[n, d - n], np.ascontiguousarray(F, dtype=float).ravel(), np.asarray(f, dtype=float)])


@njit(cache=True)
def bouncer_kernel(o, a, k, prm):
    # prm: accel_gain, g_eff, dt, substeps, restitution, control_dt,
    #      ref_height, ref_period, offset[4]
    u = min(max(a[0], -1.0), 1.0)
    accel = prm[0] * u - prm[1]
    dt = prm[2]
    y = max(o[0], 0.0)
    v = o[1]
    for _ in range(int(prm[3])):
        v += dt * accel
        y += dt * v
        if y < 0.0:
            y = 0.0
            if v < 0.0:
                v = -prm[4] * v
    t1 = (k + 1) * prm[5]
    t2 = (k + 2) * prm[5]
    out = np.empty(4)
    w = 2.0 * np.pi / prm[7]
    out[0] = y + prm[8]
    out[1] = v + prm[9]
    out[2] = prm[6] * max(0.0, np.sin(w * t1)) + prm[10]
    out[3] = prm[6] * max(0.0, np.sin(w * t2)) + prm[11]
    return out


@njit(cache=True)
def linear_kernel(o, a, k, prm):
    # prm: n, m, F (n x (n+m), row-major), f (n)
    n = int(prm[0])
    m = int(prm[1])
    d = n + m
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += prm[2 + i * d + j] * o[j]
        for j in range(m):
            s += prm[2 + i * d + n + j] * a[j]
        out[i] = s + prm[2 + n * d + i]
    return out


@njit(cache=True)
def _step(kind, o, a, k, prm):
    if kind == BOUNCER:
        return bouncer_kernel(o, a, k, prm)
    return linear_kernel(o, a, k, prm)


@njit(cache=True)
def _chol(A):
    n = A.shape[0]
    L = np.zeros_like(A)
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for p in range(j):
                s -= L[i, p] * L[j, p]
            if i == j:
                if not s > 0.0:
                    return L, False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return L, True


@njit(cache=True)
def _chol_solve(L, B):
    n = L.shape[0]
    Y = np.empty_like(B)
    for c in range(B.shape[1]):
        for i in range(n):
            s = B[i, c]
            for p in range(i):
                s -= L[i, p] * Y[p, c]
            Y[i, c] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = Y[i, c]
            for p in range(i + 1, n):
                s -= L[p, i] * Y[p, c]
            Y[i, c] = s / L[i, i]
    return Y


@njit(cache=True)
def _cost(X, U, Q, R, Qf, tgt):
    J = 0.0
    N = U.shape[0]
    for t in range(N):
        dx = X[t] - tgt
        J += dx @ Q @ dx + U[t] @ R @ U[t]
    dx = X[N] - tgt
    return J + dx @ Qf @ dx


@njit(cache=True)
def _rollout(step, prm, o0, U, k0):
    N = U.shape[0]
    X = np.empty((N + 1, o0.shape[0]))
    X[0] = o0
    for t in range(N):
        X[t + 1] = _step(step, X[t], U[t], k0 + t, prm)
    return X


@njit(cache=True)
def ilqr_kernel(step, prm, Q, R, Qf, tgt, o0, U0, k0, max_iter, mu_init, mu_factor, mu_max, n_alphas, tol, h):
    N, m = U0.shape
    n = o0.shape[0]
    d = n + m
    U = np.minimum(np.maximum(U0.copy(), -1.0), 1.0)
    X = _rollout(step, prm, o0, U, k0)
    J = _cost(X, U, Q, R, Qf, tgt)
    costs = [J]
    mu = mu_init
    Q2 = 2.0 * Q
    R2 = 2.0 * R
    Qf2 = 2.0 * Qf
    Kfb = np.zeros((N, m, n))
    kff = np.zeros((N, m))
    A = np.empty((N, n, n))
    B = np.empty((N, n, m))
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        for t in range(N):
            z = np.empty(d)
            z[:n] = X[t]
            z[n:] = U[t]
            for i in range(d):
                zp = z.copy()
                zm = z.copy()
                zp[i] += h
                zm[i] -= h
                col = (_step(step, zp[:n], zp[n:], k0 + t, prm) - _step(step, zm[:n], zm[n:], k0 + t, prm)) / (2.0 * h)
                if i < n:
                    A[t, :, i] = col
                else:
                    B[t, :, i - n] = col
        while True:
            Vx = Qf2 @ (X[N] - tgt)
            Vxx = Qf2.copy()
            dV1 = 0.0
            dV2 = 0.0
            ok = True
            for t in range(N - 1, -1, -1):
                At = A[t]
                Bt = B[t]
                Qx = Q2 @ (X[t] - tgt) + At.T @ Vx
                Qu = R2 @ U[t] + Bt.T @ Vx
                VB = Vxx @ Bt
                Qxx = Q2 + At.T @ Vxx @ At
                Quu = R2 + Bt.T @ VB
                Qux = VB.T @ At
                L, good = _chol(Quu + mu * np.eye(m))
                if not good:
                    ok = False
                    break
                rhs = np.empty((m, 1 + n))
                rhs[:, 0] = Qu
                rhs[:, 1:] = Qux
                sol = _chol_solve(L, rhs)
                kt = -sol[:, 0]
                Kt = -np.ascontiguousarray(sol[:, 1:])
                kff[t] = kt
                Kfb[t] = Kt
                dV1 += kt @ Qu
                dV2 += 0.5 * kt @ Quu @ kt
                Vx = Qx + Kt.T @ Quu @ kt + Kt.T @ Qu + Qux.T @ kt
                Vxx = Qxx + Kt.T @ Quu @ Kt + Kt.T @ Qux + Qux.T @ Kt
                Vxx = 0.5 * (Vxx + Vxx.T)
            if ok:
                break
            mu *= mu_factor
            if mu > mu_max:
                return U, Kfb, J, X, False, it, costs
        expected = -(dV1 + dV2)
        if expected <= tol * abs(J):
            converged = True
            break
        accepted = False
        Xn = np.empty_like(X)
        Un = np.empty_like(U)
        Jn = 0.0
        for ia in range(n_alphas):
            alpha = 0.5**ia
            Xn[0] = o0
            finite = True
            for t in range(N):
                u = U[t] + alpha * kff[t] + Kfb[t] @ (Xn[t] - X[t])
                Un[t] = np.minimum(np.maximum(u, -1.0), 1.0)
                Xn[t + 1] = _step(step, Xn[t], Un[t], k0 + t, prm)
                if not np.all(np.isfinite(Xn[t + 1])):
                    finite = False
                    break
            if not finite:
                continue
            Jn = _cost(Xn, Un, Q, R, Qf, tgt)
            if Jn < J:
                accepted = True
                break
        if accepted:
            rel = (J - Jn) / max(abs(J), 1e-300)
            X = Xn.copy()
            U = Un.copy()
            J = Jn
            costs.append(J)
            mu = max(mu / mu_factor, mu_init)
            if rel < tol:
                converged = True
                break
        else:
            mu *= mu_factor
            if mu > mu_max:
                break
    return U, Kfb, J, X, converged, it, costs
