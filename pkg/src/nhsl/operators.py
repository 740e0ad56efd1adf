"""Kernels, truncations, tails and the maximal operators built on a lattice.

All suprema over continuous parameters (truncation level, radius) are taken
over the finitely many breakpoints where the underlying step function of an
atomic measure changes, so the values are exact rather than sampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .lattice import Cell, Lattice, theta, thetas
from .measure import AtomicMeasure, DominatingFunction, ResolutionError, as_values


@dataclass(frozen=True, eq=False)
class Kernel:
    """Calderón--Zygmund kernel with size constant ``C_K`` and modulus ``c t**tau``.

    ``kind`` is ``"hilbert"`` (``1/(x-y)``), ``"smooth"``
    (``(x-y)/((x-y)**2 + delta**2)``, bounded by ``1/(2 delta)``) or
    ``"custom"`` with an explicit vectorised ``func``.  The diagonal is
    always evaluated as zero.
    """

    kind: str = "hilbert"
    C_K: float = 1.0
    omega_c: float = 4.0
    omega_tau: float = 1.0
    delta: float = 0.0
    func: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("hilbert", "smooth", "custom"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "smooth" and not self.delta > 0:
            raise ValueError("smooth kernel needs delta > 0")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom kernel needs func")
        if not 0 < self.omega_tau <= 1:
            raise ValueError("omega exponent tau must lie in (0, 1]")

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = x - y
        if self.kind == "custom":
            out = np.asarray(self.func(x, y), dtype=float)
            return np.where(d == 0, 0.0, out)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "hilbert":
                out = 1.0 / d
            else:
                out = d / (d * d + self.delta ** 2)
        return np.where(d == 0, 0.0, out)

    def omega(self, t):
        return self.omega_c * np.power(t, self.omega_tau)

    @property
    def dini_norm(self) -> float:
        return self.omega_c / (1.0 - 2.0 ** (-self.omega_tau))

    def to_json(self) -> dict:
        out = {"kind": self.kind, "C_K": self.C_K,
               "omega": {"c": self.omega_c, "tau": self.omega_tau}}
        if self.kind == "smooth":
            out["delta"] = self.delta
        return out

    @classmethod
    def from_json(cls, spec: dict) -> "Kernel":
        om = spec.get("omega", {})
        return cls(spec.get("kind", "hilbert"), spec.get("C_K", 1.0),
                   om.get("c", 4.0), om.get("tau", 1.0), spec.get("delta", 0.0))


def check_kernel(kernel: Kernel, lam: DominatingFunction, measure: AtomicMeasure,
                 rng: np.random.Generator, n_samples: int = 2000) -> dict:
    """Worst sampled ratios for the size and smoothness conditions (<= 1 means satisfied)."""
    pos = measure.positions
    x = pos[rng.integers(0, pos.size, n_samples)]
    y = pos[rng.integers(0, pos.size, n_samples)]
    keep = np.abs(x - y) >= measure.h
    x, y = x[keep], y[keep]
    d = np.abs(x - y)
    size = np.abs(kernel(x, y)) * lam(x, d) / kernel.C_K if kernel.C_K > 0 else np.inf
    xp = x + (rng.random(x.size) - 0.5) * d  # |x - x'| < d/2
    t = np.abs(x - xp) / d
    lhs = np.abs(kernel(x, y) - kernel(xp, y)) + np.abs(kernel(y, x) - kernel(y, xp))
    rhs = kernel.omega(t) / lam(x, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        smooth = np.where(lhs == 0, 0.0, lhs / rhs)
    return {"size_ratio": float(np.max(size)), "smoothness_ratio": float(np.max(smooth)),
            "n_samples": int(x.size)}


@dataclass(frozen=True, eq=False)
class FunctionSample:
    """Values of ``f`` at the atoms of ``measure``."""

    values: np.ndarray
    measure: AtomicMeasure

    def __post_init__(self):
        object.__setattr__(self, "values", as_values(self.values, self.measure))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    @property
    def l1(self) -> float:
        return math.fsum((np.abs(self.values) * self.measure.masses).tolist())


# --------------------------------------------------------------------------
# truncations


def truncated(kernel: Kernel, measure: AtomicMeasure, f, x: float, eps: float) -> float:
    """``T_eps f(x)``: sum over atoms with ``|x - y| > eps``."""
    if eps < measure.h:
        raise ResolutionError(f"truncation {eps:g} is below the resolution floor {measure.h:g}")
    v = as_values(f, measure)
    pos = measure.positions
    far = np.abs(pos - x) > eps
    terms = kernel(x, pos[far]) * v[far] * measure.masses[far]
    return math.fsum(terms.tolist())


def _truncation_profile(kernel: Kernel, measure: AtomicMeasure, v: np.ndarray, x: float):
    """Breakpoints ``eps`` (``h`` and every distinct distance ``>= h``) and ``T_eps f(x)``."""
    d = np.abs(measure.positions - x)
    order = np.argsort(d, kind="stable")
    ds = d[order]
    terms = kernel(x, measure.positions[order]) * v[order] * measure.masses[order]
    suffix = np.concatenate((np.cumsum(terms[::-1])[::-1], [0.0]))
    eps = np.unique(np.concatenate(([measure.h], ds[ds >= measure.h])))
    first_beyond = np.searchsorted(ds, eps, side="right")
    return eps, suffix[first_beyond]


def max_truncation(kernel: Kernel, measure: AtomicMeasure, f, x: float) -> float:
    """``T# f(x) = sup_{eps >= h} |T_eps f(x)|``."""
    v = as_values(f, measure)
    _, vals = _truncation_profile(kernel, measure, v, x)
    return float(np.max(np.abs(vals)))


def max_truncation_all(kernel: Kernel, measure: AtomicMeasure, f) -> np.ndarray:
    v = as_values(f, measure)
    return np.array([max_truncation(kernel, measure, v, x) for x in measure.positions])


# --------------------------------------------------------------------------
# tails and the grand maximal truncation


def _check_atom(cell: Cell, i: int):
    if not cell.contains_atom(i):
        raise ValueError(f"atom {i} is not in cell {cell.id}")


def tail(kernel: Kernel, measure: AtomicMeasure, f, i: int, cell: Cell) -> float:
    """``F(x, Q)``: the kernel sum over atoms outside ``30B(Q)``, at atom ``x = i`` of ``Q``."""
    _check_atom(cell, i)
    v = as_values(f, measure)
    a, b = measure.ball_range(cell.center, 30 * cell.radius)
    out = np.r_[0:a, b:len(measure)]
    x = measure.positions[i]
    terms = kernel(x, measure.positions[out]) * v[out] * measure.masses[out]
    return math.fsum(terms.tolist())


def tail_values(kernel: Kernel, measure: AtomicMeasure, v: np.ndarray, cell: Cell) -> np.ndarray:
    """``F(y, Q)`` for every atom ``y`` of ``Q``."""
    a, b = measure.ball_range(cell.center, 30 * cell.radius)
    out = np.r_[0:a, b:len(measure)]
    out = out[v[out] != 0]
    ys = measure.positions[cell.lo:cell.hi]
    if out.size == 0:
        return np.zeros(ys.size)
    w = v[out] * measure.masses[out]
    return kernel(ys[:, None], measure.positions[out][None, :]) @ w


def tail_sups(kernel: Kernel, lattice: Lattice, f, cells=None) -> dict[int, float]:
    """``sup_{y in P} |F(y, P)|`` for each cell ``P``."""
    v = as_values(f, lattice.measure)
    cells = lattice.cells if cells is None else cells
    return {c.id: float(np.max(np.abs(tail_values(kernel, lattice.measure, v, c))))
            for c in cells}


def grand_maximal_all(kernel: Kernel, lattice: Lattice, f, Q0: Cell | None = None,
                      sups: dict[int, float] | None = None) -> np.ndarray:
    """``N_{Q0} f`` at every atom (zero outside ``Q0``)."""
    Q0 = lattice.root if Q0 is None else Q0
    if sups is None:
        sups = tail_sups(kernel, lattice, f, lattice.descendants(Q0))
    out = np.zeros(len(lattice.measure))
    for k in range(Q0.level, lattice.n_levels):
        owners = lattice.cell_of_atom[k, Q0.lo:Q0.hi]
        vals = np.array([sups[int(c)] for c in owners])
        out[Q0.lo:Q0.hi] = np.maximum(out[Q0.lo:Q0.hi], vals)
    return out


def grand_maximal(kernel: Kernel, lattice: Lattice, f, Q0: Cell, i: int) -> float:
    """``N_{Q0} f(x)`` at atom ``i``; zero when ``x`` is outside ``Q0``."""
    if not Q0.contains_atom(i):
        return 0.0
    v = as_values(f, lattice.measure)
    best = 0.0
    for P in lattice.chain(i, Q0):
        best = max(best, float(np.max(np.abs(tail_values(kernel, lattice.measure, v, P)))))
    return best


# --------------------------------------------------------------------------
# maximal functions


def maximal_lambda(measure: AtomicMeasure, lam: DominatingFunction, f, x: float) -> float:
    """``M_lam f(x) = sup_{R >= h} lam(x, R)^-1 * int_{B(x,R)} |f| dmu``."""
    v = np.abs(as_values(f, measure))
    d = np.abs(measure.positions - x)
    order = np.argsort(d, kind="stable")
    ds = d[order]
    cum = np.concatenate(([0.0], np.cumsum(v[order] * measure.masses[order])))
    radii = np.unique(np.concatenate(([measure.h], ds[ds >= measure.h])))
    mass = cum[np.searchsorted(ds, radii, side="right")]
    return float(np.max(mass / np.asarray(lam(x, radii), dtype=float)))


def maximal_lambda_all(measure: AtomicMeasure, lam: DominatingFunction, f) -> np.ndarray:
    v = as_values(f, measure)
    return np.array([maximal_lambda(measure, lam, v, x) for x in measure.positions])


def cell_average(measure: AtomicMeasure, f, cell: Cell, alpha: float) -> float:
    """``A(f, Q) = int_{30B(Q)} |f| dmu / mu(alpha B(Q))``."""
    v = np.abs(as_values(f, measure))
    a, b = measure.ball_range(cell.center, 30 * cell.radius)
    num = measure.integrate(v, a, b)
    den = measure.mass_of(*measure.ball_range(cell.center, alpha * cell.radius))
    return num / den


def cell_averages(lattice: Lattice, f) -> np.ndarray:
    """``A(f, Q)`` indexed by cell id."""
    v = as_values(f, lattice.measure)
    return np.array([cell_average(lattice.measure, v, c, lattice.params.alpha)
                     for c in lattice.cells])


def _chain_max(lattice: Lattice, per_cell: np.ndarray, Q0: Cell | None) -> np.ndarray:
    top = 0 if Q0 is None else Q0.level
    owners = lattice.cell_of_atom[top:]
    out = per_cell[owners].max(axis=0)
    if Q0 is not None:
        mask = np.zeros(out.size, dtype=bool)
        mask[Q0.lo:Q0.hi] = True
        out = np.where(mask, out, 0.0)
    return out


def maximal_mu_all(lattice: Lattice, f, Q0: Cell | None = None,
                   averages: np.ndarray | None = None) -> np.ndarray:
    """``M_mu f = sup_{x in Q} A(f, Q)`` at every atom, optionally localised to ``D(Q0)``."""
    A = cell_averages(lattice, f) if averages is None else averages
    return _chain_max(lattice, A, Q0)


def maximal_mu(lattice: Lattice, f, i: int) -> float:
    v = as_values(f, lattice.measure)
    return max(cell_average(lattice.measure, v, c, lattice.params.alpha)
               for c in lattice.chain(i))


def localized_theta_maximal_all(lattice: Lattice, lam: DominatingFunction, f, Q0: Cell | None = None,
                                averages: np.ndarray | None = None,
                                theta_values: np.ndarray | None = None) -> np.ndarray:
    """``sup_{x in Q in D(Q0)} Theta(Q) A(f, Q)`` at every atom of ``Q0``."""
    A = cell_averages(lattice, f) if averages is None else averages
    th = thetas(lattice, lam) if theta_values is None else theta_values
    return _chain_max(lattice, th * A, lattice.root if Q0 is None else Q0)


def localized_theta_maximal(lattice: Lattice, lam: DominatingFunction, f, Q0: Cell, i: int) -> float:
    _check_atom(Q0, i)
    v = as_values(f, lattice.measure)
    return max(theta(c, lam, lattice) * cell_average(lattice.measure, v, c, lattice.params.alpha)
               for c in lattice.chain(i, Q0))


# --------------------------------------------------------------------------
# measured constants for the pointwise comparisons


def _ratio(num: np.ndarray, den: np.ndarray) -> float:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    pos = den > 0
    if np.any((~pos) & (num > 0)):
        return math.inf
    return float(np.max(num[pos] / den[pos])) if np.any(pos) else 0.0


def compare_truncations(kernel: Kernel, lattice: Lattice, lam: DominatingFunction, f,
                        window=(1.0, 30.0, 60.0)) -> dict:
    """Smallest ``C`` per cell with ``|T_r f(x) - F(x,Q)| <= C C_K M_lam f(x)``, ``r in window*r(Q)``."""
    m = lattice.measure
    v = as_values(f, m)
    ml = maximal_lambda_all(m, lam, v)
    per_cell = {}
    for c in lattice.cells:
        F = tail_values(kernel, m, v, c)
        worst = 0.0
        for t in window:
            r = t * c.radius
            if r < m.h:
                continue
            for off, i in enumerate(range(c.lo, c.hi)):
                diff = abs(truncated(kernel, m, v, m.positions[i], r) - F[off])
                worst = max(worst, _ratio(np.array([diff]), np.array([kernel.C_K * ml[i]])))
        per_cell[c.id] = worst
    vals = np.array(list(per_cell.values()))
    pos = vals[vals > 0]
    spread = float(pos.max() / pos.min()) if pos.size else 1.0
    return {"window": list(window), "constant": float(vals.max()), "per_cell": per_cell,
            "spread": spread}


def n_tsharp_constant(kernel: Kernel, lattice: Lattice, lam: DominatingFunction, f,
                      Q0: Cell | None = None) -> dict:
    """Smallest ``C`` with ``|N_{Q0} f - T# f| <= C (|omega|_Dini + C_K) M_lam f`` on ``Q0``."""
    m = lattice.measure
    Q0 = lattice.root if Q0 is None else Q0
    v = as_values(f, m)
    N = grand_maximal_all(kernel, lattice, v, Q0)[Q0.lo:Q0.hi]
    T = np.array([max_truncation(kernel, m, v, m.positions[i]) for i in range(Q0.lo, Q0.hi)])
    ml = np.array([maximal_lambda(m, lam, v, m.positions[i]) for i in range(Q0.lo, Q0.hi)])
    scale = kernel.dini_norm + kernel.C_K
    return {"constant": _ratio(np.abs(N - T), scale * ml), "N": N, "T_sharp": T, "M_lambda": ml}


def consecutive_scales_constant(kernel: Kernel, lattice: Lattice, lam: DominatingFunction, f) -> dict:
    """Smallest ``C`` with the annulus bound ``int_{30B(parent) - 30B(Q)} |K||f| <= C Theta A``."""
    m = lattice.measure
    v = np.abs(as_values(f, m))
    A = cell_averages(lattice, v)
    th = thetas(lattice, lam)
    worst, witness = 0.0, None
    for c in lattice.cells:
        if c.parent is None:
            continue
        par = lattice[c.parent]
        pa, pb = m.ball_range(par.center, 30 * par.radius)
        ca, cb = m.ball_range(c.center, 30 * c.radius)
        idx = np.arange(pa, pb)
        idx = idx[(idx < ca) | (idx >= cb)]
        if idx.size == 0:
            continue
        ys = m.positions[c.lo:c.hi]
        K = np.abs(kernel(ys[:, None], m.positions[idx][None, :]))
        lhs = K @ (v[idx] * m.masses[idx])
        rhs = th[par.id] * A[par.id]
        q = _ratio(lhs, np.full(lhs.shape, rhs))
        if q > worst:
            worst, witness = q, c.id
    return {"constant": worst, "witness_cell": witness}


def weak_type_constant(values: np.ndarray, measure: AtomicMeasure, l1: float,
                       weights: np.ndarray | None = None) -> float:
    """``sup_t t * nu{values > t} / l1`` over breakpoint thresholds.

    The supremum over ``t`` is approached from below each distinct value
    ``v``, where it equals ``v * nu{values >= v}``.
    """
    masses = measure.masses if weights is None else measure.masses * weights
    order = np.argsort(-values, kind="stable")
    vs = values[order]
    cum = np.cumsum(masses[order])
    last = np.r_[vs[1:] != vs[:-1], True]
    prod = vs[last] * cum[last]
    if l1 == 0:
        return 0.0 if np.all(prod <= 0) else math.inf
    return float(np.max(prod) / l1)
