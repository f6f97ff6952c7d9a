"""Finite-horizon LQR with a control-difference penalty.

Backward pass (information-vector form, scalar control)::

    g_n = B' S_{n+1} A - R_n Iu'
    K_n = g_n / (R_n + B' S_{n+1} B)
    S_n = Q_n + R_n Iu Iu' + A' S_{n+1} A - g_n g_n' / (R_n + B' S_{n+1} B)

The kernel evaluates the last line in an expanded form (see ``_backward``):
with large ``R_n`` the two ``R_n`` terms nearly cancel and the direct form
loses most significant digits of the value matrices.

with ``S_N = Q_N`` and the closed loop ``u_n = -K_n I_n``.  Both passes are
compiled with numba because parameter fitting calls them tens of thousands of
times per trial.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .model import Trajectory

GAIN_LIMIT = 1e12
ORACLE_MAX_N = 64

# kernel status codes
_OK, _BAD_PIVOT, _BAD_GAIN = 0, 1, 2


@dataclass(frozen=True)
class GainSchedule:
    K: np.ndarray  # (N - 1, 4), K[i] belongs to step i + 1
    S: np.ndarray  # (N, 4, 4)

    @property
    def N(self):
        return self.S.shape[0]


@numba.njit(cache=True)
def _backward(calA, calB, Q, R, gain_limit):
    N = Q.shape[0]
    S = np.empty((N, 4, 4))
    K = np.empty((N - 1, 4))
    S[N - 1] = Q[N - 1]
    SB = np.empty(4)
    SA = np.empty((4, 4))
    g = np.empty(4)
    for n in range(N - 2, -1, -1):
        Sn1 = S[n + 1]
        for i in range(4):
            acc = 0.0
            for j in range(4):
                acc += Sn1[i, j] * calB[j]
            SB[i] = acc
        beta = 0.0
        for i in range(4):
            beta += calB[i] * SB[i]
        pivot = R[n] + beta
        if not pivot > 0.0 or not np.isfinite(pivot):
            return S, K, _BAD_PIVOT, n + 1
        for i in range(4):
            for j in range(4):
                acc = 0.0
                for l in range(4):
                    acc += Sn1[i, l] * calA[l, j]
                SA[i, j] = acc
        # b = B' S A; note b[3] = 0 because the last column of calA is zero
        for j in range(4):
            acc = 0.0
            for i in range(4):
                acc += calB[i] * SA[i, j]
            g[j] = acc
        Rn = R[n]
        for j in range(4):
            K[n, j] = (g[j] - (Rn if j == 3 else 0.0)) / pivot
            if not abs(K[n, j]) <= gain_limit:
                return S, K, _BAD_GAIN, n + 1
        # R Iu Iu' - (b - R Iu)(b - R Iu)' / pivot, expanded so the R^2 terms
        # cancel analytically instead of in floating point
        w = Rn / pivot
        for i in range(4):
            for j in range(4):
                acc = 0.0
                for l in range(4):
                    acc += calA[l, i] * SA[l, j]
                S[n, i, j] = Q[n, i, j] + acc - g[i] * g[j] / pivot
        for i in range(3):
            S[n, i, 3] += w * g[i]
            S[n, 3, i] += w * g[i]
        S[n, 3, 3] += w * beta
        for i in range(4):
            for j in range(i + 1, 4):
                m = 0.5 * (S[n, i, j] + S[n, j, i])
                S[n, i, j] = m
                S[n, j, i] = m
    return S, K, _OK, 0


@numba.njit(cache=True)
def _forward(calA, calB, K, info1):
    N = K.shape[0] + 1
    info = np.empty((N, 4))
    u = np.empty(N - 1)
    info[0] = info1
    for n in range(N - 1):
        un = 0.0
        for j in range(4):
            un -= K[n, j] * info[n, j]
        u[n] = un
        for i in range(4):
            acc = 0.0
            for j in range(4):
                acc += calA[i, j] * info[n, j]
            info[n + 1, i] = acc + calB[i] * un
    return info, u


def solve_riccati(sys, spec, gain_limit=GAIN_LIMIT):
    """Backward Riccati recursion; returns the feedback gains and value matrices."""
    Q = np.ascontiguousarray(spec.Q, dtype=float)
    R = np.ascontiguousarray(spec.R, dtype=float)
    if Q.shape != (spec.N, 4, 4) or R.shape != (spec.N - 1,):
        raise InvalidArgument("cost schedule shapes do not match the horizon")
    if np.any(R <= 0):
        raise InvalidArgument("control-difference weights must be positive")
    S, K, status, step = _backward(sys.calA, sys.calB, Q, R, gain_limit)
    if status == _BAD_PIVOT:
        raise NumericalFailure(f"non-positive Riccati pivot at step {step}", step=step)
    if status == _BAD_GAIN:
        dyn = sys.dynamics
        raise NumericalFailure(
            f"feedback gain exceeds {gain_limit:g} at step {step} "
            f"(k={dyn.k:g}, d={dyn.d:g}, h={dyn.h:g})", step=step)
    return GainSchedule(K=K, S=S)


def _reconstruct(sys, info, u):
    dyn = sys.dynamics
    p, v = info[:, 0], info[:, 1]
    u_held = np.append(u, u[-1])  # zero-order hold past the last control
    acc = u_held - dyn.k * p - dyn.d * v
    return Trajectory(h=dyn.h, positions=p.copy(), velocities=v.copy(),
                      accelerations=acc, controls=u)


def simulate_lqr(gains, sys, x1, u0, N):
    """Closed-loop rollout ``u_n = -K_n I_n`` from ``I_1 = (x1, u0)``.

    Accelerations are read off the plant equation, ``a_n = u_n - k p_n - d v_n``,
    with the last control held for the final sample.
    """
    if gains.N != N:
        raise InvalidArgument(f"gains were computed for N={gains.N}, not N={N}")
    info1 = np.append(np.asarray(x1, dtype=float), float(u0))
    info, u = _forward(sys.calA, sys.calB, gains.K, info1)
    if not np.all(np.isfinite(info)):
        raise NumericalFailure("closed-loop rollout diverged")
    return _reconstruct(sys, info, u)


def closed_loop_positions(sys, spec, x1, u0, gain_limit=GAIN_LIMIT):
    """Position series of the optimal closed loop; lean path used while fitting."""
    gains = solve_riccati(sys, spec, gain_limit)
    info1 = np.array([x1[0], x1[1], x1[2], u0], dtype=float)
    info, _ = _forward(sys.calA, sys.calB, gains.K, info1)
    p = info[:, 0]
    if not np.all(np.isfinite(p)):
        raise NumericalFailure("closed-loop rollout diverged")
    return p


def optimal_cost(gains, x1, u0):
    info1 = np.append(np.asarray(x1, dtype=float), float(u0))
    return float(info1 @ gains.S[0] @ info1)


def rollout_open_loop(sys, x1, u0, controls):
    """Apply a fixed control sequence ``u_1 .. u_{N-1}`` to the plant."""
    controls = np.asarray(controls, dtype=float)
    A, B = sys.dynamics.A, sys.dynamics.B
    N = len(controls) + 1
    x = np.empty((N, 3))
    x[0] = x1
    for n in range(N - 1):
        x[n + 1] = A @ x[n] + B * controls[n]
    info = np.column_stack([x, np.concatenate([[u0], controls])])
    return _reconstruct(sys, info, controls)


def brute_force_oracle(sys, spec, x1, u0, max_n=ORACLE_MAX_N):
    """Optimal controls from the dense quadratic program in ``u_1 .. u_{N-1}``.

    Every state is affine in the controls, ``x_n = P_n x1 + G_n u``; the cost
    is assembled as ``u' H u + 2 f' u + const`` and the normal equations are
    solved directly.  Test-scale only.
    """
    N = spec.N
    if N > max_n:
        raise InvalidArgument(f"oracle refuses N={N} > {max_n}")
    A, B = sys.dynamics.A, sys.dynamics.B
    m = N - 1
    x1 = np.asarray(x1, dtype=float)
    # state n (0-based) = free[n] + G[n] @ u
    free = np.empty((N, 3))
    G = np.zeros((N, 3, m))
    free[0] = x1
    for n in range(N - 1):
        free[n + 1] = A @ free[n]
        G[n + 1] = A @ G[n]
        G[n + 1][:, n] += B
    H = np.zeros((m, m))
    f = np.zeros(m)
    for n in range(N):
        Qx = spec.Q[n][:3, :3]
        H += G[n].T @ Qx @ G[n]
        f += G[n].T @ Qx @ free[n]
    # first differences, with u_0 fixed
    D = np.eye(m) - np.eye(m, k=-1)
    e = np.zeros(m)
    e[0] = u0
    H += D.T @ np.diag(spec.R) @ D
    f -= D.T @ (spec.R * e)
    return np.linalg.solve(H, -f)
