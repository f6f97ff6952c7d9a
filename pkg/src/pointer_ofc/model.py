"""Plant, information-vector system and cost schedules of the 2OL-LQR model.

The plant is a unit-mass spring-damper (second-order lag) discretised with
forward Euler.  The state is ``x_n = (p_n, v_n, T)``; the information vector
appends the previously applied control, ``I_n = (p_n, v_n, T, u_{n-1})``, so
that control differences (jerk) can be penalised by an LQR.

Time steps are 1-based in every public signature that talks about a "step"
(``n_delta``, horizons).  Arrays are 0-based, so schedule entry ``i`` belongs
to step ``i + 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import DomainError, InvalidArgument

DEFAULT_C = 100000.0

# (T - p)^2 expressed as a quadratic form on (p, v, T)
DISTANCE_BLOCK = np.array([[1.0, 0.0, -1.0],
                           [0.0, 0.0, 0.0],
                           [-1.0, 0.0, 1.0]])


class Variant(str, Enum):
    LQR1 = "LQR1"
    LQR2 = "LQR2"
    LQR3 = "LQR3"


@dataclass(frozen=True)
class ModelParams:
    k: float
    d: float
    r: float
    delta: Optional[float] = None

    def __post_init__(self):
        if not (self.k > 0 and self.d > 0 and self.r > 0):
            raise InvalidArgument(f"k, d, r must be positive, got k={self.k}, d={self.d}, r={self.r}")
        if self.delta is not None and not self.delta >= 0:
            raise InvalidArgument(f"delta must be >= 0, got {self.delta}")

    def as_dict(self):
        out = {"k": self.k, "d": self.d, "r": self.r}
        if self.delta is not None:
            out["delta"] = self.delta
        return out


@dataclass(frozen=True)
class TaskSpec:
    """Target geometry of one pointing movement (SI units)."""

    target: float
    width: Optional[float] = None
    distance: Optional[float] = None
    id_bits: Optional[float] = None
    direction: str = "right"

    def __post_init__(self):
        if self.direction not in ("left", "right"):
            raise InvalidArgument(f"direction must be 'left' or 'right', got {self.direction!r}")
        if self.width is not None and not self.width > 0:
            raise InvalidArgument("target width must be positive")
        if None not in (self.width, self.distance, self.id_bits):
            expected = math.log2(self.distance / self.width + 1.0)
            if abs(expected - self.id_bits) > 1e-9:
                raise InvalidArgument(
                    f"ID={self.id_bits} inconsistent with log2(D/W + 1)={expected}")

    @classmethod
    def from_geometry(cls, target, distance, width, direction="right"):
        return cls(target=target, width=width, distance=distance,
                   id_bits=math.log2(distance / width + 1.0), direction=direction)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled 1D pointer trajectory.

    ``controls`` holds ``u_1 .. u_{N-1}`` when present (one fewer than the
    state series, since no control is applied after the last step).
    """

    h: float
    positions: np.ndarray
    velocities: Optional[np.ndarray] = None
    accelerations: Optional[np.ndarray] = None
    controls: Optional[np.ndarray] = None
    start_time: float = 0.0

    def __post_init__(self):
        if not self.h > 0:
            raise InvalidArgument(f"step h must be positive, got {self.h}")
        n = len(self.positions)
        if n < 2:
            raise InvalidArgument("trajectory needs at least 2 samples")
        for name in ("velocities", "accelerations"):
            series = getattr(self, name)
            if series is not None and len(series) != n:
                raise InvalidArgument(f"{name} has length {len(series)}, expected {n}")
        if self.controls is not None and len(self.controls) not in (n - 1, n):
            raise InvalidArgument(f"controls has length {len(self.controls)}, expected {n - 1}")

    def __len__(self):
        return len(self.positions)

    @property
    def times(self):
        return self.start_time + self.h * np.arange(len(self.positions))


@dataclass(frozen=True)
class DynamicsMatrices:
    A: np.ndarray  # (3, 3)
    B: np.ndarray  # (3,)
    h: float
    k: float = 0.0
    d: float = 0.0


@dataclass(frozen=True)
class AugmentedSystem:
    calA: np.ndarray  # (4, 4)
    calB: np.ndarray  # (4,)
    Ix: np.ndarray  # (3, 4)
    Iu: np.ndarray  # (4,)
    dynamics: DynamicsMatrices = field(repr=False)


@dataclass(frozen=True)
class CostSpec:
    variant: Variant
    N: int
    Q: np.ndarray  # (N, 4, 4), Q[i] belongs to step i + 1
    R: np.ndarray  # (N - 1,), R[i] belongs to step i + 1
    c: Optional[float] = None
    n_delta: Optional[int] = None


def build_dynamics(k, d, h):
    """Forward-Euler matrices of the unit-mass second-order lag."""
    if not h > 0:
        raise InvalidArgument(f"step h must be positive, got {h}")
    A = np.array([[1.0, h, 0.0],
                  [-h * k, 1.0 - h * d, 0.0],
                  [0.0, 0.0, 1.0]])
    B = np.array([0.0, h, 0.0])
    return DynamicsMatrices(A=A, B=B, h=float(h), k=float(k), d=float(d))


def augment_system(dyn):
    calA = np.zeros((4, 4))
    calA[:3, :3] = dyn.A
    calB = np.append(dyn.B, 1.0)
    Ix = np.eye(3, 4)
    Iu = np.array([0.0, 0.0, 0.0, 1.0])
    return AugmentedSystem(calA=calA, calB=calB, Ix=Ix, Iu=Iu, dynamics=dyn)


def distance_cost_matrix():
    """4x4 state cost whose quadratic form on an information vector is (T - p)^2."""
    Q = np.zeros((4, 4))
    Q[:3, :3] = DISTANCE_BLOCK
    return Q


def reaction_step(delta, h, N):
    """1-based step whose time ``(n - 1) h`` is closest to ``delta``.

    Ties go to the earlier step; the result is clamped to ``1..N``.
    """
    x = delta / h
    base = math.floor(x)
    frac = x - base
    # ties (within float noise of the division) resolve downwards
    n = base + 1 if frac <= 0.5 + 1e-9 else base + 2
    return int(min(max(n, 1), N))


def jerk_weight_f(n, n_delta, c=DEFAULT_C):
    """Smoothed pre-movement jerk multiplier, decaying from ``c`` at n=1 towards 1."""
    if n_delta < 2:
        raise DomainError(f"n_delta must be >= 2, got {n_delta}")
    if not 1 <= n < n_delta:
        raise DomainError(f"step {n} outside pre-movement range 1..{n_delta - 1}")
    return (c - 1.0) * math.exp(1.0 / (n_delta - 1) - 1.0 / (n_delta - n)) + 1.0


def build_cost(variant, params, N, h, c=DEFAULT_C):
    variant = Variant(variant)
    if N < 2:
        raise InvalidArgument(f"horizon N must be >= 2, got {N}")
    if not h > 0:
        raise InvalidArgument(f"step h must be positive, got {h}")
    base_R = params.r / h ** 2
    Qd = distance_cost_matrix()
    Q = np.zeros((N, 4, 4))
    R = np.full(N - 1, base_R)
    n_delta = None
    if variant is Variant.LQR1:
        Q[-1] = Qd
    elif variant is Variant.LQR2:
        Q[:] = Qd
    else:
        if params.delta is None:
            raise InvalidArgument("LQR3 cost requires a reaction time delta")
        if not c > 1:
            raise InvalidArgument(f"jerk multiplier c must exceed 1, got {c}")
        n_delta = reaction_step(params.delta, h, N)
        Q[n_delta - 1:] = Qd
        pre = min(n_delta, N) - 1
        if pre > 0:
            n = np.arange(1, pre + 1)
            f = (c - 1.0) * np.exp(1.0 / (n_delta - 1) - 1.0 / (n_delta - n)) + 1.0
            R[:pre] = f * base_R
    return CostSpec(variant=variant, N=N, Q=Q, R=R,
                    c=c if variant is Variant.LQR3 else None, n_delta=n_delta)


def initial_control(params, p1, v1, a1):
    """Control that reproduces the observed initial acceleration ``a1``."""
    return params.k * p1 + params.d * v1 + a1


def info_vectors(traj, T, u0):
    """Stack ``I_n = (p_n, v_n, T, u_{n-1})`` for n = 1..N."""
    N = len(traj)
    if traj.controls is None:
        raise InvalidArgument("trajectory has no controls")
    v = traj.velocities if traj.velocities is not None else np.zeros(N)
    prev = np.empty(N)
    prev[0] = u0
    prev[1:] = np.asarray(traj.controls)[:N - 1]
    return np.column_stack([traj.positions, v, np.full(N, T), prev])


def evaluate_cost(spec, traj, T, u0):
    """Direct evaluation of the quadratic cost along a trajectory."""
    N = len(traj)
    if traj.controls is None or len(traj.controls) < N - 1:
        raise InvalidArgument("trajectory must carry N - 1 controls")
    if spec.N != N:
        raise InvalidArgument(f"cost horizon {spec.N} does not match trajectory length {N}")
    info = info_vectors(traj, T, u0)
    state_cost = np.einsum("ni,nij,nj->", info, spec.Q, info)
    u = np.concatenate([[u0], np.asarray(traj.controls)[:N - 1]])
    jerk_cost = np.sum(spec.R * np.diff(u) ** 2)
    return float(state_cost + jerk_cost)
