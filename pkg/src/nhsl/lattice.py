"""David--Mattila interval lattice on the line.

Construction per level ``k`` (base radius ``A0**-k``):

1. a greedy left-to-right net ``I^k`` whose ``5B`` balls are disjoint,
2. extension of each ``5B(x)`` towards ``25B(x)`` until it meets a neighbour,
   giving disjoint intervals ``B4^k(x)``,
3. supervision ``h``: ``y in I^k`` belongs to the ``x in I^{k-1}`` with
   ``y in B4^{k-1}(x)``.

Cells are assembled bottom-up: a finest-level cell is ``B4^K(y) ∩ W`` and a
coarser cell is the union of the cells of its supervisees.  Because the
atoms are sorted and supervision is monotone, every cell is a contiguous
index range ``[lo, hi)`` of atoms, which makes nesting and partition checks
exact integer comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .measure import AtomicMeasure, DominatingFunction, ResolutionError

# the centre of a net ball stays inside its own cell once A0 >= 6
MIN_RELAXED_A0 = 6.0


class LatticeError(RuntimeError):
    """The construction produced something that violates its own invariants."""


@dataclass(frozen=True)
class LatticeParams:
    C0: float
    A0: float
    alpha: float = 200.0
    max_level: int = 2
    relaxed: bool = False

    def __post_init__(self):
        if not self.C0 > 1:
            raise ValueError("C0 must exceed 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if int(self.max_level) != self.max_level or self.max_level < 0:
            raise ValueError("max_level must be a nonnegative integer")
        if self.relaxed:
            if not self.A0 >= MIN_RELAXED_A0:
                raise ValueError(f"A0 must be at least {MIN_RELAXED_A0} even in relaxed mode")
        else:
            if not self.A0 > 5000 * self.C0:
                raise ValueError("paper constants need A0 > 5000*C0 (use relaxed=True otherwise)")
            if self.alpha < 200:
                raise ValueError("paper constants need alpha >= 200 (use relaxed=True otherwise)")

    @property
    def mode(self) -> str:
        return "relaxed" if self.relaxed else "paper"

    @property
    def l0(self) -> int:
        """Largest integer ``l`` with ``100**l <= C0/alpha``."""
        q = self.C0 / self.alpha
        l = math.floor(math.log(q, 100))
        while 100.0 ** (l + 1) <= q:
            l += 1
        while 100.0 ** l > q:
            l -= 1
        return l

    @property
    def paper_decay_base(self) -> float:
        return self.C0 ** (-self.l0 / 2)

    def base_radius(self, k: int) -> float:
        return self.A0 ** (-k)

    def doubling_samples(self) -> list[float]:
        """Dilation factors ``1, 2, 5, 10, ...`` up to ``C0``, plus ``C0``."""
        out, c = [], 1.0
        steps = (2.0, 2.5, 2.0)
        i = 0
        while c <= self.C0:
            out.append(c)
            c = c * steps[i % 3]
            i += 1
        if out[-1] != self.C0:
            out.append(float(self.C0))
        return out

    def to_json(self) -> dict:
        return {"C0": self.C0, "A0": self.A0, "alpha": self.alpha,
                "max_level": self.max_level, "relaxed": self.relaxed}

    @classmethod
    def from_json(cls, data: dict, measure: AtomicMeasure | None = None) -> "LatticeParams":
        data = dict(data)
        mode = data.pop("mode", None)
        if mode is not None:
            data.setdefault("relaxed", mode == "relaxed")
        level = data.get("max_level", "auto")
        if level == "auto":
            if measure is None:
                raise ValueError("max_level 'auto' needs the measure")
            level = deepest_level(measure, data["A0"], data.pop("level_cap", None))
        data.pop("level_cap", None)
        data.pop("dominating", None)
        data["max_level"] = int(level)
        return cls(**data)


def deepest_level(measure: AtomicMeasure, A0: float, cap: int | None = None) -> int:
    k = 0
    while A0 ** (-(k + 1)) >= measure.h:
        k += 1
    return k if cap is None else min(k, int(cap))


# --------------------------------------------------------------------------
# skeleton: nets, extensions, supervision


@dataclass(frozen=True, eq=False)
class Net:
    level: int
    radius: float
    indices: np.ndarray  # atom indices of the net points

    def positions(self, measure: AtomicMeasure) -> np.ndarray:
        return measure.positions[self.indices]


def build_net(measure: AtomicMeasure, k: int, params: LatticeParams) -> Net:
    """Greedy maximal net with pairwise disjoint closed ``5B(x)``."""
    r = params.base_radius(k)
    if r < measure.h:
        raise ResolutionError(f"level {k} radius {r:g} is below the resolution floor {measure.h:g}")
    pos = measure.positions
    chosen = [0]
    right = pos[0] + 5 * r
    for i in range(1, pos.size):
        if pos[i] - 5 * r > right:
            chosen.append(i)
            right = pos[i] + 5 * r
    return Net(k, r, np.asarray(chosen, dtype=np.intp))


def extend_intervals(points, radii, speeds=None) -> np.ndarray:
    """Grow each ``5B(x)`` towards ``25B(x)``; return the ``(m, 2)`` array of ``B4(x)``.

    Each endpoint moves outwards at ``speeds[i]`` (the base radius by default)
    and stops at its ``25B`` endpoint or where it meets the neighbouring
    extension; meeting points are solved in closed form.
    """
    x = np.asarray(points, dtype=float)
    r = np.broadcast_to(np.asarray(radii, dtype=float), x.shape)
    s = r if speeds is None else np.broadcast_to(np.asarray(speeds, dtype=float), x.shape)
    out = np.column_stack((x - 25 * r, x + 25 * r))
    for i in range(x.size - 1):
        a0, b0 = x[i] + 5 * r[i], x[i + 1] - 5 * r[i + 1]
        gap = b0 - a0
        if gap <= 0:
            raise LatticeError("5B balls of a net overlap")
        ta, tb = 20 * r[i] / s[i], 20 * r[i + 1] / s[i + 1]  # time to reach 25B
        t_both = min(ta, tb)
        if gap <= (s[i] + s[i + 1]) * t_both:
            t = gap / (s[i] + s[i + 1])
            meet = a0 + s[i] * t
        elif ta < tb and gap <= s[i] * ta + s[i + 1] * tb:
            meet = a0 + s[i] * ta  # left stopped at its 25B end, right runs into it
        elif tb < ta and gap <= s[i] * ta + s[i + 1] * tb:
            meet = b0 - s[i + 1] * tb
        else:
            continue
        out[i, 1] = meet
        out[i + 1, 0] = meet
    return out


def assign_to_intervals(points, intervals: np.ndarray) -> np.ndarray:
    """Index of the closed interval holding each point; shared endpoints go left."""
    pts = np.asarray(points, dtype=float)
    idx = np.searchsorted(intervals[:, 1], pts, side="left")
    bad = idx >= intervals.shape[0]
    idx_c = np.minimum(idx, intervals.shape[0] - 1)
    bad |= intervals[idx_c, 0] > pts
    if np.any(bad):
        raise LatticeError(f"points {pts[bad][:5].tolist()} are covered by no interval")
    return idx_c


def supervise(fine_points, coarse_intervals: np.ndarray) -> np.ndarray:
    """Supervisor map ``h`` from a fine net into the coarse net."""
    sup = assign_to_intervals(fine_points, coarse_intervals)
    if np.any(np.diff(sup) < 0):
        raise LatticeError("supervision is not monotone")
    return sup


@dataclass(frozen=True, eq=False)
class LatticeSkeleton:
    measure: AtomicMeasure
    params: LatticeParams
    nets: tuple[Net, ...]
    intervals: tuple[np.ndarray, ...]
    supervisors: tuple[np.ndarray | None, ...]


def build_skeleton(measure: AtomicMeasure, params: LatticeParams) -> LatticeSkeleton:
    nets, ivs, sups = [], [], []
    for k in range(params.max_level + 1):
        net = build_net(measure, k, params)
        iv = extend_intervals(net.positions(measure), net.radius)
        sups.append(None if k == 0 else supervise(net.positions(measure), ivs[-1]))
        nets.append(net)
        ivs.append(iv)
    if nets[0].indices.size != 1:
        raise LatticeError(
            f"level 0 has {nets[0].indices.size} net points; the support must fit in a single "
            "root cell (rescale the measure so its diameter is at most 10)")
    return LatticeSkeleton(measure, params, tuple(nets), tuple(ivs), tuple(sups))


# --------------------------------------------------------------------------
# cells


@dataclass(frozen=True)
class Cell:
    id: int
    level: int
    center: float
    center_index: int
    radius: float
    base_radius: float
    lo: int
    hi: int
    extent: tuple[float, float]
    doubling: bool
    mass: float
    parent: int | None = None
    children: tuple[int, ...] = ()
    eqdob23_violations: tuple[float, ...] = ()

    @property
    def n_atoms(self) -> int:
        return self.hi - self.lo

    def contains_atom(self, i: int) -> bool:
        return self.lo <= i < self.hi

    def within(self, other: "Cell") -> bool:
        return other.lo <= self.lo and self.hi <= other.hi

    def dilate_range(self, measure: AtomicMeasure, c: float) -> tuple[int, int]:
        return measure.ball_range(self.center, c * self.radius)


@dataclass(frozen=True)
class DoublingResult:
    doubling: bool
    radius: float
    factor: float
    violations: tuple[float, ...]


def classify_doubling(cell: Cell, measure: AtomicMeasure, params: LatticeParams,
                      five_b_limits: tuple[float, float] = (-math.inf, math.inf)) -> DoublingResult:
    """Pick ``r(Q)`` and the doubling flag for a freshly assembled cell.

    Dilation factors ``c`` from :meth:`LatticeParams.doubling_samples` are
    scanned in increasing order while ``W ∩ B(z, c r0)`` stays inside the cell
    and ``5B(z, c r0)`` stays clear of the neighbouring ``5B`` balls
    (``five_b_limits``).  The first ``c`` with ``mu(100 B) <= C0 mu(B)`` wins.
    Otherwise the cell is non-doubling with the base radius, and each sampled
    ``c`` at which ``C0 mu(cB) <= mu(100 cB)`` fails is recorded.
    """
    z, r0 = cell.center, cell.base_radius
    samples = params.doubling_samples()
    left, right = five_b_limits
    for c in samples:
        r = c * r0
        i, j = measure.ball_range(z, r)
        if i < cell.lo or j > cell.hi:
            break
        if c > 1 and not (z - 5 * r > left and z + 5 * r < right):
            break
        small = measure.mass_of(i, j)
        big = measure.mass_of(*measure.ball_range(z, 100 * r))
        if big <= params.C0 * small:
            return DoublingResult(True, r, c, ())
    bad = []
    for c in samples:
        small = measure.mass_of(*measure.ball_range(z, c * r0))
        big = measure.mass_of(*measure.ball_range(z, 100 * c * r0))
        if not params.C0 * small <= big:
            bad.append(c)
    return DoublingResult(False, r0, 1.0, tuple(bad))


def assemble_cells(skeleton: LatticeSkeleton) -> "Lattice":
    measure, params = skeleton.measure, skeleton.params
    pos = measure.positions
    K = params.max_level
    ranges: list[np.ndarray] = [None] * (K + 1)  # type: ignore[list-item]
    extents: list[np.ndarray] = [None] * (K + 1)  # type: ignore[list-item]

    owner = assign_to_intervals(pos, skeleton.intervals[K])
    m = skeleton.nets[K].indices.size
    counts = np.bincount(owner, minlength=m)
    if np.any(counts == 0):
        raise LatticeError(f"empty finest-level cell at level {K}")
    hi = np.cumsum(counts)
    ranges[K] = np.column_stack((hi - counts, hi))
    extents[K] = skeleton.intervals[K].copy()

    for k in range(K - 1, -1, -1):
        sup = skeleton.supervisors[k + 1]
        m = skeleton.nets[k].indices.size
        counts = np.bincount(sup, minlength=m)
        if np.any(counts == 0):
            raise LatticeError(f"net point at level {k} supervises nothing")
        last = np.cumsum(counts)
        first = last - counts
        fine = ranges[k + 1]
        ranges[k] = np.column_stack((fine[first, 0], fine[last - 1, 1]))
        fe = extents[k + 1]
        extents[k] = np.column_stack((fe[first, 0], fe[last - 1, 1]))

    cells: list[Cell] = []
    levels: list[tuple[int, ...]] = []
    next_id = 0
    for k in range(K + 1):
        net = skeleton.nets[k]
        base = net.radius
        ids = tuple(range(next_id, next_id + net.indices.size))
        next_id += len(ids)
        levels.append(ids)
        centers = pos[net.indices]
        radii = np.full(len(ids), base)
        for t, cid in enumerate(ids):
            lo, hi_ = (int(v) for v in ranges[k][t])
            ci = int(net.indices[t])
            if not lo <= ci < hi_:
                raise LatticeError(f"net point {centers[t]!r} is outside its own cell")
            proto = Cell(cid, k, float(centers[t]), ci, base, base, lo, hi_,
                         (float(extents[k][t, 0]), float(extents[k][t, 1])), False,
                         measure.mass_of(lo, hi_))
            left = centers[t - 1] + 5 * radii[t - 1] if t > 0 else -math.inf
            right = centers[t + 1] - 5 * radii[t + 1] if t + 1 < len(ids) else math.inf
            res = classify_doubling(proto, measure, params, (left, right))
            radii[t] = res.radius
            cells.append(replace(proto, radius=res.radius, doubling=res.doubling,
                                 eqdob23_violations=res.violations))

    # parent/child links through the supervisor map
    parents: dict[int, int] = {}
    children: dict[int, list[int]] = {cid: [] for cid in range(next_id)}
    for k in range(1, K + 1):
        for t, s in enumerate(skeleton.supervisors[k]):
            child, parent = levels[k][t], levels[k - 1][int(s)]
            parents[child] = parent
            children[parent].append(child)
    cells = [replace(c, parent=parents.get(c.id), children=tuple(children[c.id])) for c in cells]
    return Lattice(measure, params, cells, levels, skeleton)


def build_lattice(measure: AtomicMeasure, params: LatticeParams) -> "Lattice":
    return assemble_cells(build_skeleton(measure, params))


class Lattice:
    """Immutable hierarchy of cells ``D_0, ..., D_K``."""

    def __init__(self, measure: AtomicMeasure, params: LatticeParams, cells: Sequence[Cell],
                 levels: Sequence[Sequence[int]], skeleton: LatticeSkeleton | None = None):
        self.measure = measure
        self.params = params
        self.cells: tuple[Cell, ...] = tuple(cells)
        self.levels: tuple[tuple[int, ...], ...] = tuple(tuple(l) for l in levels)
        self.skeleton = skeleton
        n = len(measure)
        owner = np.full((len(self.levels), n), -1, dtype=np.intp)
        for k, ids in enumerate(self.levels):
            for cid in ids:
                c = self.cells[cid]
                owner[k, c.lo:c.hi] = cid
        owner.flags.writeable = False
        self.cell_of_atom = owner

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def __getitem__(self, cid: int) -> Cell:
        return self.cells[cid]

    def __repr__(self):
        sizes = [len(l) for l in self.levels]
        return f"Lattice(levels={sizes}, mode={self.params.mode})"

    @property
    def root(self) -> Cell:
        return self.cells[self.levels[0][0]]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def level_cells(self, k: int) -> list[Cell]:
        return [self.cells[c] for c in self.levels[k]]

    def chain(self, atom: int, top: Cell | None = None) -> list[Cell]:
        """Cells containing ``atom``, from ``top`` (default the root) down to the finest level."""
        start = 0 if top is None else top.level
        out = [self.cells[int(self.cell_of_atom[k, atom])] for k in range(start, self.n_levels)]
        if top is not None and out[0].id != top.id:
            raise ValueError(f"atom {atom} is not in cell {top.id}")
        return out

    def descendants(self, cell: Cell) -> list[Cell]:
        """``D(cell)``: the cell and everything below it, top-down."""
        out, stack = [], [cell.id]
        while stack:
            c = self.cells[stack.pop()]
            out.append(c)
            stack.extend(reversed(c.children))
        return out

    def non_doubling_chains(self) -> list[list[Cell]]:
        """Maximal chains ``Q0 ⊃ Q1 ⊃ ... ⊃ Qn`` with ``Q1..Qn`` non-doubling, ``n >= 1``."""
        chains = []

        def walk(path: list[Cell]):
            last = path[-1]
            kids = [self.cells[c] for c in last.children if not self.cells[c].doubling]
            if not kids:
                if len(path) > 1:
                    chains.append(list(path))
                return
            for kid in kids:
                walk(path + [kid])

        for c in self.cells:
            for kid in c.children:
                if not self.cells[kid].doubling:
                    walk([c, self.cells[kid]])
        # keep only chains whose head is not itself inside a longer chain
        return [ch for ch in chains if ch[0].doubling or ch[0].parent is None]

    # ------------------------------------------------------------------ io

    def to_json(self, lam: DominatingFunction | None = None) -> dict:
        th = thetas(self, lam) if lam is not None else None
        levels = []
        for k, ids in enumerate(self.levels):
            rows = []
            for cid in ids:
                c = self.cells[cid]
                row = {
                    "id": c.id, "k": c.level, "z_Q": c.center, "r_Q": c.radius,
                    "extent": list(c.extent), "atoms": [c.lo, c.hi],
                    "parent": c.parent, "children": list(c.children),
                    "doubling": c.doubling, "mass": c.mass,
                    "eqdob23_violations": list(c.eqdob23_violations),
                }
                if th is not None:
                    row["theta"] = float(th[cid])
                rows.append(row)
            levels.append(rows)
        out = {"params": self.params.to_json(), "measure": self.measure.to_json(),
               "levels": levels}
        if lam is not None:
            out["dominating"] = lam.to_json()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Lattice":
        measure = AtomicMeasure.from_json(data["measure"])
        params = LatticeParams(**data["params"])
        cells, levels = [], []
        for rows in data["levels"]:
            ids = []
            for row in rows:
                lo, hi = row["atoms"]
                ci = int(np.searchsorted(measure.positions, row["z_Q"]))
                cells.append(Cell(
                    row["id"], row["k"], row["z_Q"], ci, row["r_Q"], params.base_radius(row["k"]),
                    lo, hi, tuple(row["extent"]), row["doubling"], row["mass"],
                    row["parent"], tuple(row["children"]),
                    tuple(row.get("eqdob23_violations", ()))))
                ids.append(row["id"])
            levels.append(ids)
        cells.sort(key=lambda c: c.id)
        return cls(measure, params, cells, levels)


# --------------------------------------------------------------------------
# Theta and its decay along non-doubling chains


def theta(cell: Cell, lam: DominatingFunction, lattice: Lattice) -> float:
    """``mu(alpha B(Q)) / lam(z_Q, alpha r(Q))``."""
    a = lattice.params.alpha
    m = lattice.measure
    if a * cell.radius < m.h:
        raise ResolutionError("alpha r(Q) is below the resolution floor")
    return m.mass_of(*m.ball_range(cell.center, a * cell.radius)) / float(lam(cell.center, a * cell.radius))


def thetas(lattice: Lattice, lam: DominatingFunction) -> np.ndarray:
    return np.array([theta(c, lam, lattice) for c in lattice.cells])


@dataclass
class DecayReport:
    ratios: list[float]
    bounds: list[float]
    constant: float
    rho: float
    report_only: bool
    passed: bool | None

    def to_json(self) -> dict:
        return {"ratios": self.ratios, "bounds": self.bounds, "constant": self.constant,
                "rho": self.rho, "report_only": self.report_only, "passed": self.passed}


def _measured_rho(ratios: Iterable[tuple[int, float]]) -> float:
    best = 0.0
    for k, q in ratios:
        if k >= 1 and q > 0:
            best = max(best, q ** (1.0 / k))
    return min(best, 1.0) if best > 0 else 1.0


def theta_decay_check(chain: Sequence[Cell], lam: DominatingFunction, lattice: Lattice,
                      rho: float | None = None) -> DecayReport:
    """Compare ``Theta(Q_k)/Theta(Q_0)`` along a chain with ``rho**k``.

    ``rho`` defaults to ``C0**(-l0/2)`` with paper constants and to the
    chain's own measured base (``max_k ratio_k**(1/k)``, at most 1) in relaxed
    mode.  Relaxed mode, or paper constants that miss the hypothesis
    ``C0**(l0/2) > C_lambda**ceil(log2 A0)``, only report.
    """
    chain = list(chain)
    if not chain:
        raise ValueError("empty chain")
    for a, b in zip(chain, chain[1:]):
        if not b.within(a) or b.level != a.level + 1:
            raise ValueError("chain cells must be consecutive and nested")
    if any(c.doubling for c in chain[1:]):
        raise ValueError("chain contains a doubling cell after position 0")
    th = [theta(c, lam, lattice) for c in chain]
    ratios = [t / th[0] for t in th]
    params = lattice.params
    hypothesis = params.C0 ** (params.l0 / 2) > lam.C ** math.ceil(math.log2(params.A0))
    report_only = params.relaxed or not hypothesis
    if rho is None:
        rho = _measured_rho(enumerate(ratios)) if params.relaxed else params.paper_decay_base
    bounds = [rho ** k for k in range(len(chain))]
    const = max(q / b for q, b in zip(ratios, bounds))
    passed = None if report_only else bool(math.isfinite(const))
    return DecayReport(ratios, bounds, const, rho, report_only, passed)


def decay_base(lattice: Lattice, lam: DominatingFunction) -> float:
    """Series base for chain contributions: paper formula or measured over all chains."""
    if not lattice.params.relaxed:
        return lattice.params.paper_decay_base
    pairs = []
    cache: dict[int, float] = {}

    def th(c: Cell) -> float:
        if c.id not in cache:
            cache[c.id] = theta(c, lam, lattice)
        return cache[c.id]

    for ch in lattice.non_doubling_chains():
        for k, c in enumerate(ch):
            pairs.append((k, th(c) / th(ch[0])))
    return _measured_rho(pairs)


# --------------------------------------------------------------------------
# invariant suite


@dataclass
class LatticeReport:
    mode: str
    partition: bool
    nesting: bool
    five_b_disjoint: bool
    doubling_consistent: bool
    non_doubling_base_radius: bool
    sandwich_lower: bool
    sandwich_dilate: float  # smallest c with Q ⊆ W ∩ cB(Q), worst cell
    nested_dilates: bool
    eqdob23_violations: int
    theta_min: float | None = None
    theta_max: float | None = None
    root_doubling: bool = True
    failures: list[str] = field(default_factory=list)

    @property
    def theta_ok(self) -> bool:
        return self.theta_min is None or (self.theta_min > 0 and self.theta_max <= 1.0)

    @property
    def passed(self) -> bool:
        hard = [self.partition, self.nesting, self.five_b_disjoint, self.doubling_consistent,
                self.non_doubling_base_radius, self.theta_ok]
        if self.mode == "paper":
            hard += [self.sandwich_lower, self.sandwich_dilate <= 28.0, self.nested_dilates,
                     self.eqdob23_violations == 0]
        return all(hard)

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        d["asserted"] = ["partition", "nesting", "five_b_disjoint", "doubling_consistent",
                         "non_doubling_base_radius", "theta_in_(0,1]"] + (
            ["sandwich_lower", "sandwich_dilate<=28", "nested_dilates", "eqdob23"]
            if self.mode == "paper" else [])
        return d


def check_lattice(lattice: Lattice, lam: DominatingFunction | None = None) -> LatticeReport:
    m, p = lattice.measure, lattice.params
    pos = m.positions
    n = len(m)
    fails: list[str] = []

    partition = True
    for k, ids in enumerate(lattice.levels):
        cs = sorted((lattice[c] for c in ids), key=lambda c: c.lo)
        edges = [0] + [c.hi for c in cs]
        if cs[0].lo != 0 or edges[-1] != n or any(c.lo != e for c, e in zip(cs, edges)) \
                or any(c.hi <= c.lo for c in cs):
            partition = False
            fails.append(f"level {k} is not a partition of the atoms")

    nesting = True
    for c in lattice:
        if c.parent is not None and not c.within(lattice[c.parent]):
            nesting = False
            fails.append(f"cell {c.id} escapes its parent")
        if c.children:
            kids = sorted((lattice[k] for k in c.children), key=lambda q: q.lo)
            if kids[0].lo != c.lo or kids[-1].hi != c.hi or any(
                    a.hi != b.lo for a, b in zip(kids, kids[1:])):
                nesting = False
                fails.append(f"children of cell {c.id} do not tile it")
        elif c.level < lattice.n_levels - 1:
            nesting = False
            fails.append(f"cell {c.id} has no children")
    # cross-level dichotomy: every pair is nested or disjoint
    for k in range(lattice.n_levels):
        for l in range(k + 1, lattice.n_levels):
            for q in lattice.level_cells(l):
                r = lattice[int(lattice.cell_of_atom[k, q.lo])]
                if not q.within(r):
                    nesting = False
                    fails.append(f"cell {q.id} straddles cell {r.id}")

    five_b = True
    for k, ids in enumerate(lattice.levels):
        cs = sorted((lattice[c] for c in ids), key=lambda c: c.center)
        for a, b in zip(cs, cs[1:]):
            if not a.center + 5 * a.radius < b.center - 5 * b.radius:
                five_b = False
                fails.append(f"5B of cells {a.id} and {b.id} meet")

    dbl_ok, base_ok, lower_ok, nested_ok = True, True, True, True
    dilate = 0.0
    violations = 0
    for c in lattice:
        big = m.mass_of(*m.ball_range(c.center, 100 * c.radius))
        small = m.mass_of(*m.ball_range(c.center, c.radius))
        if c.doubling != (big <= p.C0 * small):
            dbl_ok = False
            fails.append(f"doubling flag of cell {c.id} disagrees with the mass ratio")
        if not c.doubling and c.radius != p.base_radius(c.level):
            base_ok = False
            fails.append(f"non-doubling cell {c.id} has a non-base radius")
        if not (p.base_radius(c.level) <= c.radius <= p.C0 * p.base_radius(c.level)):
            base_ok = False
            fails.append(f"cell {c.id} radius outside [A0^-k, C0 A0^-k]")
        i, j = m.ball_range(c.center, c.radius)
        if i < c.lo or j > c.hi:
            lower_ok = False
            fails.append(f"W ∩ B(Q) not inside cell {c.id}")
        far = max(abs(pos[c.lo] - c.center), abs(pos[c.hi - 1] - c.center))
        dilate = max(dilate, far / c.radius)
        if c.parent is not None:
            par = lattice[c.parent]
            if not abs(c.center - par.center) + 30 * c.radius <= 30 * par.radius:
                nested_ok = False
        violations += len(c.eqdob23_violations)
    if not nested_ok:
        fails.append("30B(Q) ⊄ 30B(parent) for some cell")

    rep = LatticeReport(p.mode, partition, nesting, five_b, dbl_ok, base_ok, lower_ok,
                        dilate, nested_ok, violations, root_doubling=lattice.root.doubling,
                        failures=fails)
    if lam is not None:
        th = thetas(lattice, lam)
        rep.theta_min, rep.theta_max = float(th.min()), float(th.max())
    return rep
