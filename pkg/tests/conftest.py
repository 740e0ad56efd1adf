import functools
from dataclasses import dataclass

import numpy as np
import pytest

from nhsl import fixtures as fx
from nhsl.lattice import LatticeParams, build_lattice, deepest_level
from nhsl.measure import AtomicMeasure, fit_power_dominating
from nhsl.operators import Kernel

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[k] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def close(a, b, scale=0.0, rel=1e-12):
    """Agreement to ``rel`` relative to ``max(|b|, scale)``, where ``scale`` bounds the summands."""
    return abs(a - b) <= rel * max(abs(b), scale, 1e-300)


@dataclass
class Instance:
    seed: int
    measure: AtomicMeasure
    lattice: object
    lam: object
    kernel: Kernel
    f: np.ndarray


@functools.lru_cache(maxsize=None)
def small_instance(seed: int, n_max: int = 200) -> Instance:
    """Random measure with at most ``n_max`` atoms, its relaxed lattice, kernel and function."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, n_max + 1))
    pos = np.unique(np.round(rng.random(n) ** rng.uniform(0.5, 2.0), 6))
    m = AtomicMeasure(pos, np.exp(rng.standard_normal(pos.size)))
    A0 = float(rng.choice([6.0, 8.0, 12.0]))
    C0 = float(rng.choice([2.0, 20.0, 200.0]))
    params = LatticeParams(C0, A0, 200.0, min(deepest_level(m, A0), 4), relaxed=True)
    lam = fit_power_dominating(m, 1.0)
    if rng.random() < 0.5:
        kernel = Kernel("hilbert", C_K=lam.c, omega_c=4.0 * lam.c)
    else:
        kernel = Kernel("smooth", C_K=lam.c, omega_c=8.0 * lam.c, delta=float(rng.uniform(0.01, 0.2)))
    f = rng.standard_normal(pos.size) * (rng.random(pos.size) < rng.uniform(0.2, 1.0))
    return Instance(seed, m, build_lattice(m, params), lam, kernel, f)


@functools.lru_cache(maxsize=None)
def built_fixture(name: str):
    f = fx.generate(name)
    return f, build_lattice(f.measure, f.params)


@pytest.fixture(scope="session", params=fx.list_fixtures())
def fixture_lattice(request):
    return built_fixture(request.param)


@pytest.fixture(scope="session")
def grid():
    return built_fixture("lebesgue-grid-1k")


@pytest.fixture
def three_atoms():
    return AtomicMeasure([0.0, 0.5, 1.0], [1.0, 2.0, 1.0])
