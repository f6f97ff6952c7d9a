import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_instance
from pointer_ofc import (InvalidArgument, ModelParams, NumericalFailure, Trajectory, Variant,
                         augment_system, brute_force_oracle, build_cost, build_dynamics,
                         evaluate_cost, optimal_cost, rollout_open_loop, simulate_lqr,
                         solve_riccati)
from pointer_ofc.model import CostSpec

# parameter box stated for the oracle property (wider in r than the fitting box)
ORACLE_BOX = {"k": (1.0, 2000.0), "d": (0.1, 200.0), "r": (1e-9, 1.0)}


def _system(k=600.0, d=30.0, h=0.002):
    return augment_system(build_dynamics(k, d, h))


def _cost_of(spec, sys, x1, u0, controls):
    return evaluate_cost(spec, rollout_open_loop(sys, x1, u0, controls), x1[2], u0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), variant=st.sampled_from(["LQR1", "LQR2", "LQR3"]))
def test_riccati_matches_dense_oracle(seed, variant):
    rng = np.random.default_rng(seed)
    _, sys, spec, x1, u0 = random_instance(rng, variant, sampling=ORACLE_BOX)
    gains = solve_riccati(sys, spec)
    u_ric = simulate_lqr(gains, sys, x1, u0, spec.N).controls
    u_orc = brute_force_oracle(sys, spec, x1, u0)
    assert np.max(np.abs(u_ric - u_orc)) <= 1e-6 * (1 + np.max(np.abs(u_ric)))
    J_ric = _cost_of(spec, sys, x1, u0, u_ric)
    J_orc = _cost_of(spec, sys, x1, u0, u_orc)
    assert abs(J_ric - J_orc) <= 1e-8 * max(abs(J_orc), 1e-300) + 1e-15
    assert optimal_cost(gains, x1, u0) == pytest.approx(J_ric, rel=1e-9, abs=1e-14)


def test_oracle_random_n20(rng):
    _, sys, spec, x1, u0 = random_instance(rng, "LQR2", N=20)
    J = _cost_of(spec, sys, x1, u0, brute_force_oracle(sys, spec, x1, u0))
    assert J == pytest.approx(optimal_cost(solve_riccati(sys, spec), x1, u0), rel=1e-10)


def test_oracle_refuses_long_horizon():
    spec = build_cost(Variant.LQR2, ModelParams(600, 30, 1e-8), 65, 0.002)
    with pytest.raises(InvalidArgument):
        brute_force_oracle(_system(), spec, [0, 0, 0.1], 0.0)


def test_terminal_value_is_terminal_cost(rng):
    for variant in ("LQR1", "LQR2", "LQR3"):
        _, sys, spec, _, _ = random_instance(rng, variant)
        assert np.array_equal(solve_riccati(sys, spec).S[-1], spec.Q[-1])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_value_matrices_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    _, sys, spec, _, _ = random_instance(rng, N=int(rng.integers(2, 200)), sampling=ORACLE_BOX)
    for S in solve_riccati(sys, spec).S:
        scale = max(np.max(np.abs(S)), 1e-300)
        assert np.max(np.abs(S - S.T)) <= 1e-10 * scale
        assert np.min(np.linalg.eigvalsh(S)) >= -1e-9 * scale


def test_zero_state_cost_keeps_control():
    N = 30
    spec = CostSpec(variant=Variant.LQR2, N=N, Q=np.zeros((N, 4, 4)), R=np.full(N - 1, 2.5))
    sys = _system()
    gains = solve_riccati(sys, spec)
    np.testing.assert_allclose(gains.K, np.tile([0, 0, 0, -1.0], (N - 1, 1)), atol=1e-15)
    assert optimal_cost(gains, [0.03, 0.2, 0.1], 7.0) == pytest.approx(0, abs=1e-15)
    np.testing.assert_allclose(brute_force_oracle(sys, spec, [0.03, 0.2, 0.1], 7.0), 7.0, rtol=1e-12)


@pytest.mark.parametrize("variant,delta", [("LQR1", None), ("LQR2", None), ("LQR3", 0.0),
                                           ("LQR3", 0.05), ("LQR3", 0.3)])
def test_equilibrium_start(variant, delta):
    k, T, N = 600.0, 0.1, 200
    spec = build_cost(variant, ModelParams(k, 30, 1e-7, delta), N, 0.002)
    sys = _system(k)
    gains = solve_riccati(sys, spec)
    traj = simulate_lqr(gains, sys, [T, 0, T], k * T, N)
    # zero up to rounding; no tolerance is implied beyond floating point
    np.testing.assert_allclose(traj.positions, T, rtol=0, atol=1e-12)
    np.testing.assert_allclose(traj.controls, k * T, rtol=1e-12)
    assert optimal_cost(gains, [T, 0, T], k * T) == pytest.approx(0, abs=1e-12)
    assert evaluate_cost(spec, traj, T, k * T) == pytest.approx(0, abs=1e-12)


def test_equilibrium_oracle():
    spec = build_cost(Variant.LQR2, ModelParams(600, 30, 1e-7), 30, 0.002)
    np.testing.assert_allclose(brute_force_oracle(_system(), spec, [0.1, 0, 0.1], 60.0), 60.0,
                               rtol=1e-9)


def test_scaling_homogeneity(rng):
    _, sys, spec, x1, u0 = random_instance(rng, "LQR2", N=100)
    gains = solve_riccati(sys, spec)
    a = simulate_lqr(gains, sys, x1, u0, spec.N)
    b = simulate_lqr(gains, sys, 2 * x1, 2 * u0, spec.N)
    np.testing.assert_allclose(b.positions, 2 * a.positions, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(b.controls, 2 * a.controls, rtol=1e-12, atol=1e-12)


def test_gains_independent_of_start(rng):
    _, sys, spec, _, _ = random_instance(rng, "LQR3", N=80)
    first = solve_riccati(sys, spec)
    simulate_lqr(first, sys, [0.3, 1, -0.1], 5.0, spec.N)
    again = solve_riccati(sys, spec)
    assert np.array_equal(first.K, again.K)
    assert np.array_equal(first.S, again.S)


def test_state_equation_residual(rng):
    _, sys, spec, x1, u0 = random_instance(rng, "LQR2", N=150)
    traj = simulate_lqr(solve_riccati(sys, spec), sys, x1, u0, spec.N)
    A, h = sys.dynamics.A, sys.dynamics.h
    p, v, u = traj.positions, traj.velocities, traj.controls
    for n in range(len(traj) - 1):
        # same operation order as the plant update, so the residual is exactly zero
        assert p[n + 1] - (A[0, 0] * p[n] + A[0, 1] * v[n]) == 0.0
        assert v[n + 1] - (A[1, 0] * p[n] + A[1, 1] * v[n] + h * u[n]) == 0.0


def test_accelerations_follow_plant(rng):
    params, sys, spec, x1, u0 = random_instance(rng, "LQR2", N=50)
    traj = simulate_lqr(solve_riccati(sys, spec), sys, x1, u0, spec.N)
    u = np.append(traj.controls, traj.controls[-1])
    np.testing.assert_allclose(traj.accelerations,
                               u - params.k * traj.positions - params.d * traj.velocities)


def test_large_r_limit():
    x1, u0 = np.array([0.0, 0.0, 0.1]), 0.0
    sys = _system()
    gaps = []
    for r in (1e12, 1e13, 1e14, 1e15):
        spec = build_cost(Variant.LQR2, ModelParams(600, 30, r), 40, 0.002)
        u = simulate_lqr(solve_riccati(sys, spec), sys, x1, u0, 40).controls
        gaps.append(abs(u[0] - u0))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_perturbations_never_improve(rng):
    _, sys, spec, x1, u0 = random_instance(rng, "LQR2", N=25)
    u = simulate_lqr(solve_riccati(sys, spec), sys, x1, u0, spec.N).controls
    J = _cost_of(spec, sys, x1, u0, u)
    for _ in range(200):
        eps = rng.normal(size=u.size) * 10.0 ** rng.uniform(-6, 1)
        assert _cost_of(spec, sys, x1, u0, u + eps) >= J - 1e-12 * (1 + abs(J))


def test_gain_guard():
    spec = build_cost(Variant.LQR2, ModelParams(600, 30, 1e-8), 50, 0.002)
    with pytest.raises(NumericalFailure) as err:
        solve_riccati(_system(), spec, gain_limit=1e-3)
    assert err.value.step is not None
    assert "k=600" in str(err.value)


def test_horizon_mismatch():
    spec = build_cost(Variant.LQR2, ModelParams(600, 30, 1e-8), 50, 0.002)
    gains = solve_riccati(_system(), spec)
    with pytest.raises(InvalidArgument):
        simulate_lqr(gains, _system(), [0, 0, 0.1], 0.0, 49)


def test_reference_rollouts_against_oracle():
    """Frozen outcomes of two long rollouts, cross-checked with the dense QP."""
    sys = _system()
    x1 = np.array([0.0, 0.0, 0.1])
    for r, final in ((1e-5, 0.0027591931747508866), (1e-8, 0.09986061584315299)):
        spec = build_cost(Variant.LQR2, ModelParams(600, 30, r), 250, 0.002)
        traj = simulate_lqr(solve_riccati(sys, spec), sys, x1, 0.0, 250)
        oracle = rollout_open_loop(sys, x1, 0.0, brute_force_oracle(sys, spec, x1, 0.0, max_n=250))
        assert oracle.positions[-1] == pytest.approx(final, rel=1e-8)
        assert traj.positions[-1] == pytest.approx(final, rel=1e-10)
    # with the weaker jerk penalty the pointer reaches the target vicinity
    assert abs(final - 0.1) < 0.01


def test_rollout_open_loop_shapes():
    traj = rollout_open_loop(_system(), [0, 0, 0.1], 0.0, np.zeros(9))
    assert isinstance(traj, Trajectory) and len(traj) == 10
    np.testing.assert_array_equal(traj.positions, 0.0)
