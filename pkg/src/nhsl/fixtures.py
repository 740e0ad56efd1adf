"""Named, seeded fixtures: measures with their dominating function, kernel and lattice params."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import LatticeParams
from .measure import AtomicMeasure, DominatingFunction, fit_power_dominating
from .operators import Kernel


@dataclass
class Fixture:
    name: str
    seed: int
    description: str
    measure: AtomicMeasure
    dominating: DominatingFunction
    kernel: Kernel
    params: LatticeParams
    extra: dict = field(default_factory=dict)

    def config(self, measure_path: str = "measure.json", out: str = "out") -> dict:
        """An experiment config that reproduces the standard run on this fixture."""
        return {
            "name": self.name,
            "measure": measure_path,
            "dominating": self.dominating.to_json(),
            "kernel": self.kernel.to_json(),
            "lattice": self.params.to_json(),
            "mode": self.params.mode,
            "seed": self.seed,
            "f": {"kind": "normal"},
            "weights": [{"family": "power", "a": 0.5, "p": 2.0}],
            "out": out,
        }

    def write(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "measure.json").write_text(_dumps(self.measure.to_json()))
        (d / "config.json").write_text(_dumps(self.config()))
        return d


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


# --------------------------------------------------------------------------
# builders


def lebesgue_grid(n: int = 1024, seed: int = 0) -> Fixture:
    """Midpoint grid on ``[0, 1]`` with equal masses; Hilbert kernel with ``lam = 3r``."""
    m = AtomicMeasure((np.arange(n) + 0.5) / n, np.full(n, 1.0 / n))
    lam = DominatingFunction.power(3.0, 1.0)  # closed balls hold up to 3r of mass at r = h
    kernel = Kernel("hilbert", C_K=3.0, omega_c=12.0, omega_tau=1.0)
    params = LatticeParams(C0=200.0, A0=8.0, alpha=200.0, max_level=3, relaxed=True)
    return Fixture("lebesgue-grid-1k", seed, "uniform midpoint grid, Hilbert kernel",
                   m, lam, kernel, params)


def cantor_like(seed: int = 7, depth: int = 10) -> Fixture:
    """Middle-thirds Cantor points with randomly split masses (split fractions in [0.15, 0.85])."""
    rng = np.random.default_rng(seed)
    left = np.zeros(1)
    mass = np.ones(1)
    width = 1.0
    for _ in range(depth):
        width /= 3.0
        split = rng.uniform(0.15, 0.85, left.size)
        left = np.stack((left, left + 2 * width), axis=1).ravel()
        mass = np.stack((mass * split, mass * (1 - split)), axis=1).ravel()
    m = AtomicMeasure(left + width / 2, mass)
    s = math.log(2) / math.log(3)
    lam = fit_power_dominating(m, s)
    delta = 0.01
    C_K = lam.c * delta ** (s - 1.0)
    kernel = Kernel("smooth", C_K=C_K, omega_c=8.0 * C_K, omega_tau=1.0, delta=delta)
    params = LatticeParams(C0=2.0, A0=12.0, alpha=200.0, max_level=4, relaxed=True)
    return Fixture("cantor-like", seed, "Cantor set with random mass splits, smooth kernel",
                   m, lam, kernel, params, {"depth": depth, "s": s})


def two_cluster(seed: int = 3) -> Fixture:
    """A heavy atom at 0 beside a light uniform cluster on ``[0.1, 1]`` of total mass about 0.01.

    Light cells whose 100-dilate reaches the heavy atom are non-doubling at
    consecutive levels, and the light mass stays below ``1/C0`` so that the
    non-doubling cells keep ``C0 mu(cB) <= mu(100cB)`` for all sampled ``c``.
    """
    rng = np.random.default_rng(seed)
    light = 0.1 + (np.arange(512) + 0.5) * (0.9 / 512)
    pos = np.concatenate(([0.0], light))
    mass = np.concatenate(([1.0], rng.uniform(0.5, 1.5, 512) * (1e-2 / 512)))
    m = AtomicMeasure(pos, mass)
    lam = fit_power_dominating(m, 1.0)
    # smooth kernel: |K| <= 1/d, so C_K = c works for lam = c r
    kernel = Kernel("smooth", C_K=lam.c, omega_c=8.0 * lam.c, omega_tau=1.0, delta=0.01)
    params = LatticeParams(C0=4.0, A0=8.0, alpha=200.0, max_level=3, relaxed=True)
    return Fixture("two-cluster", seed, "heavy atom beside a light cluster, engineered chains",
                   m, lam, kernel, params)


FIXTURES = {
    "lebesgue-grid-1k": lebesgue_grid,
    "cantor-like": cantor_like,
    "two-cluster": two_cluster,
}

DEFAULT_SEEDS = {"lebesgue-grid-1k": 0, "cantor-like": 7, "two-cluster": 3}


def list_fixtures() -> list[str]:
    return sorted(FIXTURES)


def generate(name: str, seed: int | None = None) -> Fixture:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; known: {', '.join(list_fixtures())}")
    if name == "lebesgue-grid-1k":
        return lebesgue_grid(seed=DEFAULT_SEEDS[name] if seed is None else seed)
    return FIXTURES[name](DEFAULT_SEEDS[name] if seed is None else seed)


# --------------------------------------------------------------------------
# random and paper-constant instances for the lattice invariant suite


def random_measure(seed: int, n_max: int = 2000) -> AtomicMeasure:
    """Clustered random atoms on ``[0, 1]`` with lognormal masses."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(50, n_max + 1))
    centers = rng.random(int(rng.integers(1, 6)))
    spread = 10.0 ** rng.uniform(-3, -0.5, centers.size)
    which = rng.integers(0, centers.size, n)
    pos = np.clip(centers[which] + spread[which] * rng.standard_normal(n), 0, 1)
    pos = np.unique(np.round(pos, 7))
    mass = np.exp(rng.standard_normal(pos.size))
    return AtomicMeasure(pos, mass / mass.sum())


def random_params(measure: AtomicMeasure, seed: int) -> LatticeParams:
    rng = np.random.default_rng(seed + 10_000)
    A0 = float(rng.choice([6.0, 8.0, 12.0, 20.0]))
    C0 = float(rng.choice([2.0, 20.0, 200.0]))
    return LatticeParams.from_json({"C0": C0, "A0": A0, "alpha": 200.0, "relaxed": True,
                                    "max_level": "auto", "level_cap": 5}, measure)


def paper_instance(i: int) -> tuple[AtomicMeasure, LatticeParams]:
    """Small measures that admit two or three levels under the strict constants."""
    rng = np.random.default_rng(100 + i)
    C0 = (2.0, 4.0, 20000.0)[i]
    A0 = 5000 * C0 * 1.2
    levels = 2 if C0 < 1000 else 1
    h = A0 ** (-levels)
    pts = [rng.random(40)]
    scale = 1.0
    for _ in range(levels):
        scale /= A0
        pts.append(rng.random(40) * 40 * scale)
    pos = np.unique(np.round(np.concatenate(pts) / h)) * h
    m = AtomicMeasure(pos, np.exp(rng.standard_normal(pos.size)), resolution_floor=0.999 * h)
    return m, LatticeParams(C0=C0, A0=A0, alpha=200.0, max_level=levels, relaxed=False)
