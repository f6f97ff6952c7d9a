"""Baseline models: second-order lag with equilibrium control, and minimum jerk."""
from __future__ import annotations

import cmath
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgument, NoSurgeError
from .model import Trajectory, build_dynamics

MINJERK_SYSTEM = np.array([[1.0, 1.0, 1.0],
                           [3.0, 4.0, 5.0],
                           [6.0, 12.0, 20.0]])

# quintic Hermite basis on [0, 1], rows in power order tau^0 .. tau^5; each
# function carries one of p(0), p'(0), p''(0), p(1), p'(1), p''(1)
HERMITE_BASIS = np.array([[1.0, 0.0, 0.0, -10.0, 15.0, -6.0],
                          [0.0, 1.0, 0.0, -6.0, 8.0, -3.0],
                          [0.0, 0.0, 0.5, -1.5, 1.5, -0.5],
                          [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
                          [0.0, 0.0, 0.0, -4.0, 7.0, -3.0],
                          [0.0, 0.0, 0.0, 0.5, -1.0, 0.5]])


def simulate_2ol_eq(k, d, h, x1, T, N):
    """Second-order lag driven by the constant control ``k T``.

    The target is then the equilibrium of the plant, so no optimisation is
    involved; only ``k`` and ``d`` shape the approach.
    """
    if N < 2:
        raise InvalidArgument(f"horizon N must be >= 2, got {N}")
    dyn = build_dynamics(k, d, h)
    u = k * T
    x = np.empty((N, 3))
    x[0] = x1
    for n in range(N - 1):
        x[n + 1] = dyn.A @ x[n] + dyn.B * u
    p, v = x[:, 0], x[:, 1]
    controls = np.full(N - 1, u)
    return Trajectory(h=h, positions=p.copy(), velocities=v.copy(),
                      accelerations=u - k * p - d * v, controls=controls)


def second_order_lag_analytic(k, d, p1, v1, T, t):
    """Exact solution of ``y'' = k T - k y - d y'`` with ``y(0)=p1, y'(0)=v1``.

    Handles all damping regimes through complex characteristic roots; the
    critically damped case uses the repeated-root form.
    """
    t = np.asarray(t, dtype=float)
    e0 = p1 - T
    disc = d * d - 4.0 * k
    if disc == 0.0:
        lam = -d / 2.0
        return T + (e0 + (v1 - lam * e0) * t) * np.exp(lam * t)
    root = cmath.sqrt(disc)
    l1 = (-d + root) / 2.0
    l2 = (-d - root) / 2.0
    c2 = (v1 - l1 * e0) / (l2 - l1)
    c1 = e0 - c2
    return T + np.real(c1 * np.exp(l1 * t) + c2 * np.exp(l2 * t))


@dataclass(frozen=True)
class MinJerkCoefficients:
    c: np.ndarray  # c0..c5, metres
    t_f: float
    N_tilde: Optional[int] = None
    boundary: Optional[np.ndarray] = None  # boundary values in normalised time


def minjerk_coefficients(p1, v1, a1, p_tf, v_tf, a_tf, t_f, N_tilde=None):
    """Quintic through given start and end position, velocity and acceleration.

    The polynomial is written in normalised time ``tau = t / t_f``, so
    velocity and acceleration boundaries enter multiplied by ``t_f`` and
    ``t_f**2``.
    """
    if not t_f > 0:
        raise InvalidArgument(f"duration t_f must be positive, got {t_f}")
    c0 = p1
    c1 = v1 * t_f
    c2 = a1 * t_f ** 2 / 2.0
    rhs = np.array([p_tf - c0 - c1 - c2,
                    v_tf * t_f - c1 - 2.0 * c2,
                    a_tf * t_f ** 2 - 2.0 * c2])
    c3, c4, c5 = np.linalg.solve(MINJERK_SYSTEM, rhs)
    boundary = np.array([p1, c1, 2.0 * c2, p_tf, v_tf * t_f, a_tf * t_f ** 2], dtype=float)
    return MinJerkCoefficients(c=np.array([c0, c1, c2, c3, c4, c5]), t_f=float(t_f),
                               N_tilde=N_tilde, boundary=boundary)


def minjerk_trajectory(coeffs, h, N):
    """Sample the quintic on ``t_n = (n - 1) h`` and hold the end position afterwards.

    With boundary data available the polynomial is evaluated in the Hermite
    basis, whose derivatives at both ends are exact zeros and ones, so the
    boundary conditions are met without cancellation on short segments.
    """
    N_tilde = coeffs.N_tilde
    if N_tilde is None:
        N_tilde = int(round(coeffs.t_f / h)) + 1
    if N < N_tilde:
        raise InvalidArgument(f"horizon N={N} shorter than modelled segment {N_tilde}")
    if abs(coeffs.t_f - (N_tilde - 1) * h) > 1e-9 * max(1.0, coeffs.t_f):
        raise InvalidArgument("t_f does not match (N_tilde - 1) h")
    c, t_f = coeffs.c, coeffs.t_f
    tau = np.arange(N_tilde) / (N_tilde - 1)
    powers = np.vander(tau, 6, increasing=True)  # tau^0 .. tau^5
    i = np.arange(6)
    if coeffs.boundary is None:
        basis, data = np.eye(6), c
    else:
        basis, data = HERMITE_BASIS.T, coeffs.boundary
    pos = (powers @ basis) @ data
    vel = (powers[:, :5] @ (i[1:, None] * basis[1:])) @ data / t_f
    acc = (powers[:, :4] @ (i[2:, None] * (i[2:, None] - 1) * basis[2:])) @ data / t_f ** 2
    p = np.full(N, pos[-1])
    v = np.zeros(N)
    a = np.zeros(N)
    p[:N_tilde], v[:N_tilde], a[:N_tilde] = pos, vel, acc
    return Trajectory(h=h, positions=p, velocities=v, accelerations=a)


def _movement_sign(direction):
    if direction == "right":
        return 1.0
    if direction == "left":
        return -1.0
    raise InvalidArgument(f"direction must be 'left' or 'right', got {direction!r}")


def deceleration_episodes(accel, direction):
    """Number of separate deceleration runs after the acceleration peak."""
    s = _movement_sign(direction) * np.asarray(accel, dtype=float)
    peak = int(np.argmax(s))
    neg = s[peak:] < 0
    return int(np.count_nonzero(neg[1:] & ~neg[:-1]) + (1 if neg[0] else 0))


def detect_surge_end(accel, direction):
    """1-based step at which the first movement surge ends.

    The surge ends at the first sample after the deceleration phase whose
    acceleration is back on the driving side of zero (for leftward movements
    the signs flip).  The deceleration phase starts at the first decelerating
    sample after the acceleration peak.  Falls back to the last step when no
    such crossing occurs.
    """
    accel = np.asarray(accel, dtype=float)
    if accel.size == 0:
        raise InvalidArgument("empty acceleration series")
    if not np.any(accel):
        raise NoSurgeError("acceleration is identically zero")
    s = _movement_sign(direction) * accel
    peak = int(np.argmax(s))
    decel = np.flatnonzero(s[peak:] < 0)
    if decel.size == 0:
        return len(accel)
    start = peak + int(decel[0])
    back = np.flatnonzero(s[start:] >= 0)
    if back.size == 0:
        return len(accel)
    return start + int(back[0]) + 1
