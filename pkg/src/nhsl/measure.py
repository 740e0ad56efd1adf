"""Atomic measures on the line, closed balls and dominating functions.

Every measure here is a finite sum of point masses standing in for a
non-atomic measure.  The ``resolution_floor`` ``h`` is the smallest scale at
which the atomic picture is trusted; radii and truncation parameters below
``h`` are rejected throughout the package.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ResolutionError(ValueError):
    """A radius, level or grid falls below the trusted resolution floor."""


class AtomicMeasure:
    """Finite sum of point masses at strictly increasing positions."""

    def __init__(self, positions, masses, resolution_floor=None, floor_factor=1.0):
        pos = np.asarray(positions, dtype=float).ravel()
        mass = np.asarray(masses, dtype=float).ravel()
        if pos.shape != mass.shape or pos.size == 0:
            raise ValueError("positions and masses must be non-empty and of equal length")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(mass))):
            raise ValueError("positions and masses must be finite")
        if np.any(mass <= 0):
            raise ValueError("atom masses must be strictly positive")
        order = np.argsort(pos, kind="stable")
        pos, mass = pos[order], mass[order]
        gaps = np.diff(pos)
        if np.any(gaps <= 0):
            raise ValueError("atom positions must be distinct")
        min_gap = float(gaps.min()) if gaps.size else math.inf
        if resolution_floor is None:
            h = min_gap * floor_factor if gaps.size else 1.0
        else:
            h = float(resolution_floor)
            if h <= 0:
                raise ValueError("resolution floor must be positive")
            if h > min_gap * floor_factor:
                raise ValueError(
                    f"resolution floor {h!r} exceeds minimal atom gap {min_gap!r} "
                    f"times factor {floor_factor!r}"
                )
        pos.flags.writeable = False
        mass.flags.writeable = False
        self.positions = pos
        self.masses = mass
        self.h = float(h)
        self.total_mass = math.fsum(mass.tolist())
        self._cum = np.concatenate(([0.0], np.cumsum(mass)))
        self._cum.flags.writeable = False

    def __len__(self):
        return self.positions.size

    def __repr__(self):
        return (f"AtomicMeasure(n={len(self)}, h={self.h:g}, "
                f"total_mass={self.total_mass:g})")

    @property
    def diameter(self) -> float:
        return float(self.positions[-1] - self.positions[0])

    @property
    def min_gap(self) -> float:
        if len(self) < 2:
            return math.inf
        return float(np.diff(self.positions).min())

    def ball_range(self, center: float, radius: float) -> tuple[int, int]:
        """Index range ``[i, j)`` of atoms with ``|y - center| <= radius``.

        Membership is decided by the floating point test on ``|y - center|``
        itself, not by comparing against ``center +- radius``, so that every
        routine in the package agrees on boundary atoms.
        """
        pos = self.positions
        n = pos.size
        i = int(np.searchsorted(pos, center - radius, side="left"))
        while i > 0 and abs(pos[i - 1] - center) <= radius:
            i -= 1
        while i < n and pos[i] < center and abs(pos[i] - center) > radius:
            i += 1
        j = int(np.searchsorted(pos, center + radius, side="right"))
        while j < n and abs(pos[j] - center) <= radius:
            j += 1
        while j > i and pos[j - 1] > center and abs(pos[j - 1] - center) > radius:
            j -= 1
        return i, max(i, j)

    def mass_of(self, i: int, j: int) -> float:
        """Correctly rounded mass of atoms ``i..j-1``."""
        if j <= i:
            return 0.0
        return math.fsum(self.masses[i:j].tolist())

    def mass_of_mask(self, mask) -> float:
        return math.fsum(self.masses[np.asarray(mask, dtype=bool)].tolist())

    def integrate(self, values, i: int = 0, j: int | None = None) -> float:
        """``sum values * mass`` over atoms ``i..j-1``."""
        j = len(self) if j is None else j
        if j <= i:
            return 0.0
        v = np.asarray(values, dtype=float)[i:j]
        return math.fsum((v * self.masses[i:j]).tolist())

    def to_json(self) -> dict:
        return {
            "atoms": [[float(x), float(m)] for x, m in zip(self.positions, self.masses)],
            "resolution_floor": self.h,
        }

    @classmethod
    def from_json(cls, data) -> "AtomicMeasure":
        if isinstance(data, dict):
            atoms = data["atoms"]
            h = data.get("resolution_floor")
        else:
            atoms, h = data, None
        arr = np.asarray(atoms, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1], resolution_floor=h)


@dataclass(frozen=True)
class Ball:
    """Closed ball ``{y : |y - center| <= radius}``."""

    center: float
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError("ball radius must be nonnegative")

    def scale(self, c: float) -> "Ball":
        return Ball(self.center, c * self.radius)

    def __rmul__(self, c: float) -> "Ball":
        return self.scale(c)

    def contains(self, y) -> bool:
        return abs(y - self.center) <= self.radius

    @property
    def interval(self) -> tuple[float, float]:
        return self.center - self.radius, self.center + self.radius


def mu_ball(measure: AtomicMeasure, ball: Ball) -> float:
    """Mass of the closed ball."""
    i, j = measure.ball_range(ball.center, ball.radius)
    return measure.mass_of(i, j)


def load_measure(path) -> AtomicMeasure:
    """Read a measure from JSON (``[[x, m], ...]`` or an object) or two-column CSV."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        rows = []
        with path.open(newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    continue  # header
        return AtomicMeasure([r[0] for r in rows], [r[1] for r in rows])
    return AtomicMeasure.from_json(json.loads(path.read_text()))


# --------------------------------------------------------------------------
# dominating functions


@dataclass(frozen=True, eq=False)
class DominatingFunction:
    """A function ``lam(x, r)`` bounding ``mu(B(x, r))`` with halving constant ``C``.

    Families: ``power`` (``c * r**s``), ``constant`` and ``table``.  A table is
    evaluated at the nearest grid abscissa (ties to the left) and at the
    smallest grid radius ``>= r``; radii beyond the grid clamp to the last
    column.
    """

    family: str
    C: float
    c: float = 1.0
    s: float = 1.0
    value: float = 1.0
    xs: np.ndarray | None = field(default=None, repr=False)
    rs: np.ndarray | None = field(default=None, repr=False)
    table: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in ("power", "constant", "table"):
            raise ValueError(f"unknown dominating family {self.family!r}")
        if not self.C > 1:
            raise ValueError("the doubling constant C_lambda must exceed 1")
        if self.family == "table":
            xs = np.asarray(self.xs, dtype=float)
            rs = np.asarray(self.rs, dtype=float)
            tab = np.asarray(self.table, dtype=float)
            if tab.shape != (xs.size, rs.size):
                raise ValueError("table must have shape (len(xs), len(rs))")
            if np.any(np.diff(xs) <= 0) or np.any(np.diff(rs) <= 0):
                raise ValueError("table grids must be strictly increasing")
            object.__setattr__(self, "xs", xs)
            object.__setattr__(self, "rs", rs)
            object.__setattr__(self, "table", tab)

    @classmethod
    def power(cls, c: float, s: float = 1.0, C: float | None = None):
        return cls("power", C=2.0 ** s if C is None else C, c=c, s=s)

    @classmethod
    def constant(cls, value: float, C: float = 2.0):
        return cls("constant", C=C, value=value)

    @classmethod
    def from_table(cls, xs, rs, table, C: float):
        return cls("table", C=C, xs=xs, rs=rs, table=table)

    def __call__(self, x, r):
        x = np.asarray(x, dtype=float)
        r = np.asarray(r, dtype=float)
        if self.family == "power":
            out = self.c * np.power(r, self.s) + 0.0 * x
        elif self.family == "constant":
            out = np.full(np.broadcast(x, r).shape, self.value)
        else:
            ix = self._nearest_x(x)
            jr = np.minimum(np.searchsorted(self.rs, r, side="left"), self.rs.size - 1)
            ix, jr = np.broadcast_arrays(ix, jr)
            out = self.table[ix, jr]
        return float(out) if np.ndim(out) == 0 else out

    def _nearest_x(self, x):
        xs = self.xs
        j = np.clip(np.searchsorted(xs, x, side="left"), 1, max(xs.size - 1, 1))
        if xs.size == 1:
            return np.zeros_like(j)
        left = xs[j - 1]
        right = xs[j]
        return np.where(np.abs(x - left) <= np.abs(right - x), j - 1, j)

    def to_json(self) -> dict:
        if self.family == "power":
            return {"family": "power", "c": self.c, "s": self.s, "C": self.C}
        if self.family == "constant":
            return {"family": "constant", "value": self.value, "C": self.C}
        return {
            "family": "table", "C": self.C, "xs": self.xs.tolist(),
            "rs": self.rs.tolist(), "table": self.table.tolist(),
        }

    @classmethod
    def from_json(cls, spec: dict, measure: AtomicMeasure | None = None):
        fam = spec.get("family")
        if fam == "power":
            if "c" not in spec and measure is not None:
                return fit_power_dominating(measure, spec.get("s", 1.0),
                                            margin=spec.get("margin", 1.0))
            return cls.power(spec["c"], spec.get("s", 1.0), spec.get("C"))
        if fam == "constant":
            if "value" not in spec:
                if measure is None:
                    raise ValueError("constant dominating function needs a value or a measure")
                return cls.constant(measure.total_mass, spec.get("C", 2.0))
            return cls.constant(spec["value"], spec.get("C", 2.0))
        if fam == "table":
            return cls.from_table(spec["xs"], spec["rs"], spec["table"], spec["C"])
        raise ValueError(f"unknown dominating family {fam!r}")


def _sorted_distances(measure: AtomicMeasure, x: float):
    d = np.abs(measure.positions - x)
    order = np.argsort(d, kind="stable")
    return d[order], measure.masses[order], order


def breakpoint_radii(measure: AtomicMeasure, x: float) -> np.ndarray:
    """Radii ``>= h`` at which ``r -> mu(B(x, r))`` can jump, plus ``h`` itself."""
    d = np.unique(np.abs(measure.positions - x))
    return np.unique(np.concatenate(([measure.h], d[d >= measure.h])))


def fit_power_dominating(measure: AtomicMeasure, s: float = 1.0, margin: float = 1.0,
                         centers=None) -> DominatingFunction:
    """Smallest ``c`` with ``mu(B(x, r)) <= c r**s`` at atom centers, ``r >= h``.

    Between breakpoints the ball mass is constant while ``r**s`` grows, so the
    left end of each breakpoint interval is the binding radius.
    """
    pts = measure.positions if centers is None else np.asarray(centers, dtype=float)
    c = 0.0
    for x in pts:
        d, m, _ = _sorted_distances(measure, x)
        cum = np.concatenate(([0.0], np.cumsum(m)))
        rs = breakpoint_radii(measure, x)
        mass = cum[np.searchsorted(d, rs, side="right")]
        c = max(c, float(np.max(mass / rs ** s)))
    return DominatingFunction.power(c * margin, s)


def regularize_dominating(lam: DominatingFunction, measure: AtomicMeasure,
                          grid) -> DominatingFunction:
    """Tabulate ``inf_z lam(z, r + |x - z|)`` on ``grid = (xs, rs)``.

    The infimum runs over atom positions and the query point itself.
    """
    xs, rs = (np.asarray(g, dtype=float) for g in grid)
    if xs.ndim != 1 or rs.ndim != 1 or xs.size == 0 or rs.size == 0:
        raise ValueError("grid must be a pair of non-empty 1-d arrays")
    xs, rs = np.unique(xs), np.unique(rs)
    h = measure.h
    if rs[0] < h:
        raise ResolutionError(f"grid radius {rs[0]:g} is below the resolution floor {h:g}")
    if rs.size > 1 and np.max(rs[1:] / rs[:-1]) > 2.0:
        raise ResolutionError("radius grid too coarse: consecutive radii differ by more than 2x, "
                              "halving cannot be resolved")
    if xs.size > 1 and np.max(np.diff(xs)) > rs[0]:
        raise ResolutionError(f"abscissa grid spacing {np.max(np.diff(xs)):g} exceeds the "
                              f"smallest grid radius {rs[0]:g}; locality cannot be resolved")
    z = measure.positions
    table = np.empty((xs.size, rs.size))
    for i, x in enumerate(xs):
        own = np.asarray(lam(x, rs), dtype=float)
        d = np.abs(z - x)
        cand = lam(z[None, :], rs[:, None] + d[None, :])
        table[i] = np.minimum(own, np.min(cand, axis=1))
    return DominatingFunction.from_table(xs, rs, table, lam.C)


# --------------------------------------------------------------------------
# hypothesis checks


@dataclass
class UpperDoublingReport:
    domination_ratio: float
    domination_witness: tuple[float, float]
    halving_ratio: float
    halving_witness: tuple[float, float]
    locality_ratio: float
    locality_witness: tuple[float, float]
    C: float
    n_samples: int

    @property
    def measured_C(self) -> float:
        return max(self.halving_ratio, self.locality_ratio)

    @property
    def passed(self) -> bool:
        # ratios of lambda values carry rounding; masses against lambda do not
        slack = self.C * (1 + 1e-12)
        return (self.domination_ratio <= 1.0 and self.halving_ratio <= slack
                and self.locality_ratio <= slack)

    def to_json(self) -> dict:
        return {
            "domination_ratio": self.domination_ratio,
            "domination_witness": list(self.domination_witness),
            "halving_ratio": self.halving_ratio,
            "halving_witness": list(self.halving_witness),
            "locality_ratio": self.locality_ratio,
            "locality_witness": list(self.locality_witness),
            "C_lambda": self.C, "measured_C": self.measured_C,
            "n_samples": self.n_samples, "passed": self.passed,
        }


def breakpoint_samples(measure: AtomicMeasure, centers=None, max_centers: int | None = None):
    """``(x, r)`` samples: each center with all its breakpoint radii."""
    pts = measure.positions if centers is None else np.asarray(centers, dtype=float)
    if max_centers is not None and pts.size > max_centers:
        idx = np.unique(np.linspace(0, pts.size - 1, max_centers).round().astype(int))
        pts = pts[idx]
    out = []
    for x in pts:
        for r in breakpoint_radii(measure, x):
            out.append((float(x), float(r)))
    return out


_LOCALITY_RADII = 32
_LOCALITY_NEIGHBOURS = 64


def _spread(n: int, k: int) -> np.ndarray:
    if n <= k:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, k).round().astype(int))


def verify_upper_doubling(measure: AtomicMeasure, lam: DominatingFunction,
                          samples=None) -> UpperDoublingReport:
    """Worst-case ratios for domination, halving and locality on ``samples``."""
    if samples is None:
        samples = breakpoint_samples(measure, max_centers=256)
    by_center: dict[float, list[float]] = {}
    for x, r in samples:
        if r < measure.h:
            raise ResolutionError(f"sample radius {r:g} below resolution floor {measure.h:g}")
        by_center.setdefault(float(x), []).append(float(r))

    dom = (-math.inf, (math.nan, math.nan))
    hal = (-math.inf, (math.nan, math.nan))
    loc = (-math.inf, (math.nan, math.nan))
    pos = measure.positions
    for x, rlist in by_center.items():
        rs = np.asarray(rlist)
        d, m, _ = _sorted_distances(measure, x)
        cum = np.concatenate(([0.0], np.cumsum(m)))
        mass = cum[np.searchsorted(d, rs, side="right")]
        lx = np.asarray(lam(x, rs), dtype=float)
        ratio = mass / lx
        k = int(np.argmax(ratio))
        if ratio[k] > dom[0]:
            dom = (float(ratio[k]), (x, float(rs[k])))
        ratio = lx / np.asarray(lam(x, rs / 2), dtype=float)
        k = int(np.argmax(ratio))
        if ratio[k] > hal[0]:
            hal = (float(ratio[k]), (x, float(rs[k])))
        # locality is costlier: a geometric subset of radii and at most
        # `_LOCALITY_NEIGHBOURS` evenly spaced atoms per ball
        picks = _spread(rs.size, _LOCALITY_RADII)
        for r, lv in zip(rs[picks], lx[picks]):
            i, j = measure.ball_range(x, r)
            inside = pos[i:j][_spread(j - i, _LOCALITY_NEIGHBOURS)]
            ys = np.concatenate((inside, [x - r, x + r]))
            worst = float(np.max(lv / np.asarray(lam(ys, np.full(ys.shape, r)), dtype=float)))
            if worst > loc[0]:
                loc = (worst, (x, float(r)))
    return UpperDoublingReport(dom[0], dom[1], hal[0], hal[1], loc[0], loc[1],
                               lam.C, len(samples))


@dataclass
class DimensionReport:
    pairs: list[tuple[float, float, int]]
    exponent: float
    constant: float

    def to_json(self) -> dict:
        return {"exponent": self.exponent, "constant": self.constant,
                "pairs": [list(p) for p in self.pairs]}


def _separated_count(points: np.ndarray, r: float) -> int:
    count, last = 0, -math.inf
    for p in points:
        if p - last >= r:
            count += 1
            last = p
    return count


def estimate_doubling_dimension(measure: AtomicMeasure, scales: Sequence[float] | None = None,
                                max_centers: int = 64) -> DimensionReport:
    """Fit ``count <= C (R/r)**n`` to greedy r-separated subsets of R-balls."""
    if scales is None:
        top = max(measure.diameter / 2, measure.h)
        n_sc = max(1, int(math.floor(math.log2(top / measure.h))) + 1)
        scales = [measure.h * 2.0 ** j for j in range(n_sc)]
    scales = sorted(float(s) for s in scales)
    pos = measure.positions
    centers = pos
    if centers.size > max_centers:
        centers = pos[np.unique(np.linspace(0, pos.size - 1, max_centers).round().astype(int))]
    pairs = []
    for R in scales:
        ranges = [measure.ball_range(x, R) for x in centers]
        for r in scales:
            if r > R:
                continue
            best = max(_separated_count(pos[i:j], r) for i, j in ranges)
            pairs.append((R, r, best))
    ratios = np.array([R / r for R, r, _ in pairs])
    counts = np.array([c for _, _, c in pairs], dtype=float)
    if np.unique(ratios).size < 2:
        return DimensionReport(pairs, 0.0, float(counts.max()))
    slope, _ = np.polyfit(np.log(ratios), np.log(counts), 1)
    n = max(0.0, float(slope))
    const = float(np.max(counts / ratios ** n))
    return DimensionReport(pairs, n, const)


def as_values(f, measure: AtomicMeasure) -> np.ndarray:
    """Coerce a function sample to an array aligned with the atoms."""
    v = np.asarray(f, dtype=float)
    if v.ndim == 0:
        v = np.full(len(measure), float(v))
    if v.shape != (len(measure),):
        raise ValueError(f"function sample has shape {v.shape}, expected ({len(measure)},)")
    if not np.all(np.isfinite(v)):
        raise ValueError("function sample must be finite")
    return v


def l1_norm(measure: AtomicMeasure, f: Iterable[float]) -> float:
    v = as_values(f, measure)
    return math.fsum((np.abs(v) * measure.masses).tolist())
