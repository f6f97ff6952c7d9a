"""Parameter identification for the pointing models.

Each model is fitted to the raw user positions of one trial by minimising the
sum of squared position errors.  The solver is a bounded Levenberg-Marquardt
iteration with a forward-difference Jacobian, run from many random starting
points; the best converged point wins.

Positive parameters (k, d, r) are optimised in log space, which puts the
jerk weight (spanning several decades) on the same footing as k and d.  The
reaction time is optimised directly, in seconds.
"""
from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import FitFailure, InvalidArgument, NumericalFailure
from .lqr import closed_loop_positions
from .model import (DEFAULT_C, ModelParams, Variant, augment_system, build_cost,
                    build_dynamics, initial_control)
from .reference import (deceleration_episodes, detect_surge_end, minjerk_coefficients,
                        minjerk_trajectory, simulate_2ol_eq)

log = logging.getLogger(__name__)

MODELS = ("2OL-LQR1", "2OL-LQR2", "2OL-LQR3", "2OL-Eq", "MinJerk")
LQR_VARIANTS = {"2OL-LQR1": Variant.LQR1, "2OL-LQR2": Variant.LQR2, "2OL-LQR3": Variant.LQR3}

# log-uniform start ranges; delta is uniform
DEFAULT_SAMPLING = {
    "k": (10.0, 5000.0),
    "d": (0.5, 500.0),
    "r": (1e-10, 1e-6),
    "delta": (0.0, 0.5),
}


def canonical_model(name):
    """Map loose spellings such as ``2ol-lqr2`` or ``minjerk`` to the canonical name."""
    key = name.strip().lower().replace("_", "-")
    for model in MODELS:
        if model.lower() == key:
            return model
    raise InvalidArgument(f"unknown model {name!r}; valid models: {', '.join(MODELS)}")


def model_param_names(model):
    model = canonical_model(model)
    if model == "2OL-LQR3":
        return ("k", "d", "r", "delta")
    if model in LQR_VARIANTS:
        return ("k", "d", "r")
    if model == "2OL-Eq":
        return ("k", "d")
    return ()


@dataclass(frozen=True)
class FitConfig:
    n_starts: int = 100
    sampling: dict = field(default_factory=lambda: dict(DEFAULT_SAMPLING))
    bounds: Optional[dict] = None
    xtol: float = 1e-10
    ftol: float = 1e-12
    gtol: float = 1e-12
    max_iter: int = 200
    fd_step: float = 1e-6
    seed: int = 0
    c: float = DEFAULT_C
    outlier_sd: float = 3.0

    def __post_init__(self):
        if not isinstance(self.n_starts, int) or self.n_starts < 1:
            raise InvalidArgument(f"n_starts must be a positive integer, got {self.n_starts!r}")
        for name, (lo, hi) in self.resolved_bounds().items():
            if name != "delta" and not lo > 0:
                raise InvalidArgument(f"lower bound of {name} must be positive")
            if not hi > lo:
                raise InvalidArgument(f"empty bound interval for {name}")
        if self.max_iter < 1:
            raise InvalidArgument("max_iter must be >= 1")

    def resolved_bounds(self):
        """Explicit bounds, or the sampling ranges widened tenfold on each side."""
        out = {}
        for name, (lo, hi) in self.sampling.items():
            if name == "delta":
                out[name] = (max(0.0, lo - 9.0 * (hi - lo)) if lo > 0 else 0.0, 10.0 * hi)
            else:
                out[name] = (lo / 10.0, hi * 10.0)
        if self.bounds:
            out.update({k: tuple(v) for k, v in self.bounds.items()})
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgument(f"unknown fit config keys: {sorted(unknown)}")
        data = dict(data)
        if "sampling" in data:
            data["sampling"] = {**DEFAULT_SAMPLING,
                                **{k: tuple(v) for k, v in data["sampling"].items()}}
        return cls(**data)


@dataclass
class StartRecord:
    start: dict
    converged: dict
    sse: float
    iterations: int
    reason: str


@dataclass
class FitResult:
    model: str
    params: dict
    sse: float
    max_error: float
    per_start: list = field(default_factory=list)
    trial_id: Optional[str] = None
    model_positions: Optional[np.ndarray] = field(default=None, repr=False)
    notes: str = ""

    @property
    def lambda_star(self):
        return ModelParams(**self.params)


@dataclass
class LsqResult:
    x: np.ndarray
    sse: float
    iterations: int
    reason: str
    history: list
    failures: int = 0


def sse(model_positions, user_positions):
    a = np.asarray(model_positions, dtype=float)
    b = np.asarray(user_positions, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgument(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def max_error(model_positions, user_positions):
    a = np.asarray(model_positions, dtype=float)
    b = np.asarray(user_positions, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgument(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b)))


def _safe_residuals(fun, x):
    try:
        # unstable parameter sets overflow; they are rejected below
        with np.errstate(over="ignore", invalid="ignore"):
            res = fun(x)
            ok = np.all(np.isfinite(res)) and math.isfinite(float(res @ res))
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError):
        return None
    return res if ok else None


def lsq_solve(fun, x0, lower, upper, xtol=1e-10, ftol=1e-12, gtol=1e-12, max_iter=200,
              fd_steps=1e-6):
    """Bounded Levenberg-Marquardt on ``||fun(x)||^2``.

    ``fd_steps`` gives the absolute forward-difference step per coordinate
    (scalar or array).  Steps are projected onto the box; only improving
    steps are accepted, so the recorded objective history never increases.
    Failing evaluations count as an infinite objective.

    Returns an :class:`LsqResult` whose ``reason`` is one of ``"step"``,
    ``"objective"``, ``"gradient"``, ``"max_iter"`` or ``"stalled"``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    steps = np.broadcast_to(np.asarray(fd_steps, dtype=float), x.shape)
    failures = 0
    res = _safe_residuals(fun, x)
    if res is None:
        return LsqResult(x=x, sse=math.inf, iterations=0, reason="failed-start",
                         history=[math.inf], failures=1)
    f = float(res @ res)
    history = [f]
    lam = 1e-3
    reason = "max_iter"
    it = 0
    while it < max_iter:
        it += 1
        if f == 0.0:
            reason = "objective"
            break
        J = np.empty((res.size, x.size))
        for j in range(x.size):
            step = steps[j]
            xj = x.copy()
            # step backwards when the forward point would leave the box
            if xj[j] + step > upper[j]:
                step = -step
            xj[j] += step
            rj = _safe_residuals(fun, xj)
            if rj is None:
                failures += 1
                rj = res
            J[:, j] = (rj - res) / step
        g = J.T @ res
        # projected gradient: ignore components pushing against an active bound
        pg = g.copy()
        pg[(x <= lower) & (g > 0)] = 0.0
        pg[(x >= upper) & (g < 0)] = 0.0
        # cosine between residual and each Jacobian column
        col_norm = np.linalg.norm(J, axis=0)
        cos = np.abs(pg) / np.maximum(col_norm * math.sqrt(f), 1e-300)
        if np.max(cos) <= gtol:
            reason = "gradient"
            break
        JtJ = J.T @ J
        scale = np.maximum(np.diag(JtJ), 1e-12 * max(np.max(np.diag(JtJ)), 1e-300))
        accepted = False
        while lam < 1e16:
            try:
                delta = np.linalg.solve(JtJ + lam * np.diag(scale), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = np.clip(x + delta, lower, upper)
            res_new = _safe_residuals(fun, x_new)
            if res_new is None:
                failures += 1
                lam *= 10.0
                continue
            f_new = float(res_new @ res_new)
            if f_new < f:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            reason = "stalled"
            break
        dx = np.linalg.norm(x_new - x)
        df = f - f_new
        x, res, f = x_new, res_new, f_new
        history.append(f)
        lam = max(lam / 10.0, 1e-12)
        if dx <= xtol * (np.linalg.norm(x) + xtol):
            reason = "step"
            break
        if df <= ftol * f:
            reason = "objective"
            break
    return LsqResult(x=x, sse=f, iterations=it, reason=reason, history=history,
                     failures=failures)


def _trial_key(trial_id):
    return zlib.crc32(str(trial_id).encode("utf-8"))


def start_rng(seed, trial_id, start_index):
    """Independent random stream for one (trial, start) pair."""
    return np.random.default_rng([int(seed), _trial_key(trial_id), int(start_index)])


def sample_start(names, config, rng):
    out = {}
    for name in names:
        lo, hi = config.sampling[name]
        if name == "delta":
            out[name] = float(rng.uniform(lo, hi))
        else:
            out[name] = float(np.exp(rng.uniform(math.log(lo), math.log(hi))))
    return out


def initial_conditions(trial, task):
    """Start state and observed initial acceleration of a user trajectory."""
    p1 = float(trial.positions[0])
    v1 = float(trial.velocities[0]) if trial.velocities is not None else 0.0
    a1 = float(trial.accelerations[0]) if trial.accelerations is not None else 0.0
    return p1, v1, a1, float(task.target)


def model_positions(model, params, N, h, p1, v1, a1, T, c=DEFAULT_C):
    """Positions predicted by a parametrised model for one trial's start state."""
    model = canonical_model(model)
    if model in LQR_VARIANTS:
        lam = params if isinstance(params, ModelParams) else ModelParams(**params)
        sys = augment_system(build_dynamics(lam.k, lam.d, h))
        spec = build_cost(LQR_VARIANTS[model], lam, N, h, c=c)
        u0 = initial_control(lam, p1, v1, a1)
        return closed_loop_positions(sys, spec, (p1, v1, T), u0)
    if model == "2OL-Eq":
        return simulate_2ol_eq(params["k"], params["d"], h, np.array([p1, v1, T]), T, N).positions
    raise InvalidArgument(f"{model} has no free parameters")


def _to_internal(names, values):
    return np.array([values[n] if n == "delta" else math.log(values[n]) for n in names])


def _from_internal(names, x):
    return {n: float(v) if n == "delta" else float(math.exp(v)) for n, v in zip(names, x)}


def fit_minjerk(trial, task, trial_id=None):
    """Minimum-jerk fit of the surge, held constant afterwards.

    Nothing is optimised: the surge end comes from the filtered acceleration,
    and all six boundary values are read from the (filtered) data.
    """
    if trial.velocities is None or trial.accelerations is None:
        raise InvalidArgument("MinJerk needs filtered velocity and acceleration series")
    h = trial.h
    N = len(trial)
    N_tilde = detect_surge_end(trial.accelerations, task.direction)
    N_tilde = max(N_tilde, 2)
    i = N_tilde - 1
    coeffs = minjerk_coefficients(trial.positions[0], trial.velocities[0], trial.accelerations[0],
                                  trial.positions[i], trial.velocities[i], trial.accelerations[i],
                                  (N_tilde - 1) * h, N_tilde=N_tilde)
    pos = minjerk_trajectory(coeffs, h, N).positions
    notes = "multiple-decelerations" if deceleration_episodes(trial.accelerations, task.direction) > 1 else ""
    return FitResult(model="MinJerk", params={"N_tilde": N_tilde}, sse=sse(pos, trial.positions),
                     max_error=max_error(pos, trial.positions), trial_id=trial_id,
                     model_positions=pos, notes=notes)


def fit_trial(model, trial, task, config=None, trial_id=None):
    """Multi-start least-squares fit of one model to one trial.

    The start state is ``(p1, v1, T)`` from the data; LQR models start from
    the control that reproduces the observed initial acceleration.
    """
    config = config or FitConfig()
    model = canonical_model(model)
    if model == "MinJerk":
        return fit_minjerk(trial, task, trial_id=trial_id)
    names = model_param_names(model)
    h, N = trial.h, len(trial)
    p1, v1, a1, T = initial_conditions(trial, task)
    user = np.asarray(trial.positions, dtype=float)
    bounds = config.resolved_bounds()
    lower = _to_internal(names, {n: bounds[n][0] for n in names})
    upper = _to_internal(names, {n: bounds[n][1] for n in names})
    if "delta" in names:
        # reaction time cannot exceed the trial
        upper[names.index("delta")] = min(upper[names.index("delta")], (N - 1) * h)
    # log-space step equivalent to a relative step on the parameter itself;
    # the reaction time only acts through whole samples, so it moves by one sample
    fd = np.array([h if n == "delta" else math.log1p(config.fd_step) for n in names])

    def residuals(x):
        return model_positions(model, _from_internal(names, x), N, h, p1, v1, a1, T,
                               c=config.c) - user

    records = []
    best = None
    for i in range(config.n_starts):
        rng = start_rng(config.seed, trial_id, i)
        start = sample_start(names, config, rng)
        result = lsq_solve(residuals, _to_internal(names, start), lower, upper,
                           xtol=config.xtol, ftol=config.ftol, gtol=config.gtol,
                           max_iter=config.max_iter, fd_steps=fd)
        converged = _from_internal(names, result.x)
        records.append(StartRecord(start=start, converged=converged, sse=result.sse,
                                   iterations=result.iterations, reason=result.reason))
        if math.isfinite(result.sse) and (best is None or result.sse < best[1].sse):
            best = (converged, result)
    if best is None:
        raise FitFailure(f"all {config.n_starts} starts failed for trial {trial_id}", records)
    params, result = best
    pos = model_positions(model, params, N, h, p1, v1, a1, T, c=config.c)
    return FitResult(model=model, params=params, sse=result.sse,
                     max_error=max_error(pos, user), per_start=records,
                     trial_id=trial_id, model_positions=pos)


def filter_outlier_fits(fits, key="d", n_sd=3.0):
    """Drop fits whose parameter ``key`` lies more than ``n_sd`` SDs from the mean.

    Single pass; the SD is the population SD (``ddof=0``).  Fits lacking the
    parameter are kept.
    """
    values = np.array([f.params[key] for f in fits if key in f.params], dtype=float)
    if values.size < 2:
        return list(fits), []
    mean = values.mean()
    sd = values.std()
    retained, dropped = [], []
    for f in fits:
        if key in f.params and abs(f.params[key] - mean) > n_sd * sd:
            dropped.append(f)
        else:
            retained.append(f)
    return retained, dropped
