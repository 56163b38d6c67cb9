import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mhfdia.attack import AttackHistory, AttackSupport, make_workspace, nullspace_basis
from mhfdia.errors import ConfigError
from mhfdia.grid import build_grid_plant, default_ieee14
from mhfdia.plant import PlantModel, build_horizon

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid():
    return build_grid_plant(default_ieee14(), Ts=0.01)


@pytest.fixture(scope="session")
def grid_horizon(grid):
    return build_horizon(grid.plant, 20)


def random_plant(rng, n, m):
    """Well-conditioned invertible A (singular values in [0.6, 1.2]) and Gaussian C."""
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = U @ np.diag(rng.uniform(0.6, 1.2, n)) @ V.T
    return PlantModel(A=A, C=rng.standard_normal((m, n)))


def random_instance(rng, n_max=6, m_max=8, T_max=6, history_scale=0.0):
    """(horizon, support, history, basis) with a nonempty null space, or None."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    T = int(rng.integers(1, T_max + 1))
    if T * m <= n:
        return None
    h = build_horizon(random_plant(rng, n, m), T)
    k = int(rng.integers(1, m + 1))
    support = AttackSupport.from_indices(rng.choice(m, size=k, replace=False), m)
    try:
        basis = nullspace_basis(h, support)
    except ConfigError:
        return None
    hist = AttackHistory(support, T)
    for _ in range(T - 1):
        e = np.zeros(m)
        e[support.idx] = history_scale * rng.standard_normal(k)
        hist.push(e)
    return h, support, hist, basis


def instance_workspace(rng, eps_tilde, **kw):
    while True:
        inst = random_instance(rng, **kw)
        if inst is not None:
            h, support, hist, basis = inst
            return make_workspace(h, support, hist, eps_tilde, basis)
