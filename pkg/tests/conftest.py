import math

import numpy as np
import pytest

from pointer_ofc import ModelParams, Variant, augment_system, build_cost, build_dynamics
from pointer_ofc.fitting import DEFAULT_SAMPLING


def log_uniform(rng, lo, hi):
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def random_instance(rng, variant=None, N=None, sampling=DEFAULT_SAMPLING, h=0.002):
    """Random LQR problem with parameters drawn from a sampling box."""
    variant = Variant(variant) if variant else Variant(rng.choice(["LQR1", "LQR2", "LQR3"]))
    N = int(N or rng.integers(2, 33))
    k = log_uniform(rng, *sampling["k"])
    d = log_uniform(rng, *sampling["d"])
    r = log_uniform(rng, *sampling["r"])
    delta = float(rng.uniform(0, (N - 1) * h)) if variant is Variant.LQR3 else None
    params = ModelParams(k, d, r, delta)
    sys = augment_system(build_dynamics(k, d, h))
    spec = build_cost(variant, params, N, h)
    T = float(rng.uniform(-0.2, 0.2))
    x1 = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-1, 1), T])
    u0 = k * x1[0] + d * x1[1] + float(rng.uniform(-20, 20))
    return params, sys, spec, x1, u0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
