"""Weights, their characteristics, and empirical weighted norms of sparse sums."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import Cell, Lattice
from .measure import AtomicMeasure, DominatingFunction, as_values
from .operators import Kernel
from .sparse import SparseFamilies, recurse


@dataclass(frozen=True, eq=False)
class Weight:
    """A positive weight ``w`` at the atoms of ``measure`` together with an exponent ``p``."""

    values: np.ndarray
    measure: AtomicMeasure
    p: float = 2.0

    def __post_init__(self):
        v = as_values(self.values, self.measure)
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("weights must be finite and strictly positive")
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        object.__setattr__(self, "values", v)
        sigma = v ** (-1.0 / (self.p - 1.0))
        sigma.flags.writeable = False
        object.__setattr__(self, "sigma", sigma)

    @property
    def p_dual(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def p_star(self) -> float:
        return max(self.p, self.p_dual)

    def scaled(self, c: float) -> "Weight":
        return Weight(self.values * c, self.measure, self.p)

    def w_mass(self, i: int, j: int) -> float:
        return self.measure.integrate(self.values, i, j)

    def sigma_mass(self, i: int, j: int) -> float:
        return self.measure.integrate(self.sigma, i, j)

    def w_of(self, atoms: np.ndarray) -> float:
        return math.fsum((self.values[atoms] * self.measure.masses[atoms]).tolist())

    def sigma_of(self, atoms: np.ndarray) -> float:
        return math.fsum((self.sigma[atoms] * self.measure.masses[atoms]).tolist())

    def holder_product(self) -> np.ndarray:
        """``w**(1/p) * sigma**(1/p')``, identically one."""
        return self.values ** (1.0 / self.p) * self.sigma ** (1.0 / self.p_dual)

    def to_json(self) -> dict:
        return {"p": self.p, "values": self.values.tolist()}

    @classmethod
    def from_json(cls, spec, measure: AtomicMeasure) -> "Weight":
        if isinstance(spec, dict):
            p = spec.get("p", 2.0)
            if "family" in spec:
                if spec["family"] != "power":
                    raise ValueError(f"unknown weight family {spec['family']!r}")
                return power_weight(measure, spec["a"], spec.get("center", 0.5), p)
            return cls(np.asarray(spec["values"], dtype=float), measure, p)
        return cls(np.asarray(spec, dtype=float), measure)


def power_weight(measure: AtomicMeasure, a: float, center: float = 0.5, p: float = 2.0) -> Weight:
    """``w(x) = |x - center|**a``."""
    d = np.abs(measure.positions - center)
    if a < 0 and np.any(d == 0):
        raise ValueError("negative power weight is infinite at an atom")
    return Weight(d ** a, measure, p)


def _ball_mass(measure: AtomicMeasure, values: np.ndarray, cell: Cell, c: float) -> float:
    return measure.integrate(values, *measure.ball_range(cell.center, c * cell.radius))


# --------------------------------------------------------------------------
# characteristics


@dataclass
class CharacteristicReport:
    value: float
    attaining_cell: int
    per_cell: np.ndarray  # indexed by cell id

    def to_json(self) -> dict:
        return {"value": self.value, "attaining_cell": self.attaining_cell}

    def table_rows(self, lattice: Lattice):
        for c in lattice.cells:
            yield c.id, c.level, c.center, c.radius, float(self.per_cell[c.id])


def cell_characteristic_term(weight: Weight, lattice: Lattice, cell: Cell) -> float:
    m, p = lattice.measure, weight.p
    pd, ps = weight.p_dual, weight.p_star
    sigma_big = _ball_mass(m, weight.sigma, cell, 200.0)
    wQ = weight.w_mass(cell.lo, cell.hi)
    sQ = weight.sigma_mass(cell.lo, cell.hi)
    muQ = m.mass_of(cell.lo, cell.hi)
    mu_alpha = m.mass_of(*m.ball_range(cell.center, lattice.params.alpha * cell.radius))
    num = sigma_big * wQ * sQ ** max(p - 2.0, 0.0) * wQ ** max(pd - 2.0, 0.0)
    return num / (mu_alpha * muQ ** (ps - 1.0))


def cell_characteristic(weight: Weight, lattice: Lattice) -> CharacteristicReport:
    """Supremum over all cells of the cell-based characteristic, with the attaining cell."""
    vals = np.array([cell_characteristic_term(weight, lattice, c) for c in lattice.cells])
    best = int(np.argmax(vals))
    return CharacteristicReport(float(vals[best]), best, vals)


def _interval_average(measure: AtomicMeasure, values: np.ndarray, lo: float, hi: float) -> float:
    pos = measure.positions
    a = int(np.searchsorted(pos, lo, side="left"))
    b = int(np.searchsorted(pos, hi, side="right"))
    return measure.integrate(values, a, b) / measure.mass_of(a, b)


def interval_a2_characteristic(weight: Weight, lattice: Lattice) -> dict:
    """``min(sup_I <w>_{30I}<sigma>_I, sup_I <sigma>_{30I}<w>_I)`` over cell extents ``I``."""
    if weight.p != 2:
        raise ValueError("the interval characteristic is defined for p = 2 only")
    m = lattice.measure
    left = right = 0.0
    for c in lattice.cells:
        a, b = c.extent
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        wI = weight.w_mass(c.lo, c.hi) / m.mass_of(c.lo, c.hi)
        sI = weight.sigma_mass(c.lo, c.hi) / m.mass_of(c.lo, c.hi)
        w30 = _interval_average(m, weight.values, mid - 30 * half, mid + 30 * half)
        s30 = _interval_average(m, weight.sigma, mid - 30 * half, mid + 30 * half)
        left = max(left, w30 * sI)
        right = max(right, s30 * wI)
    return {"value": min(left, right), "w30_sigma": left, "sigma30_w": right,
            "note": "lower bound: intervals restricted to cell extents"}


# --------------------------------------------------------------------------
# maximal functions with weighted measures


def martingale_maximal_all(lattice: Lattice, weight_values, g) -> np.ndarray:
    """``M^D_nu g`` with ``nu = w dmu``: chain maximum of ``nu``-averages of ``|g|``."""
    m = lattice.measure
    w = as_values(weight_values, m)
    v = np.abs(as_values(g, m))
    avg = np.array([m.integrate(v * w, c.lo, c.hi) / m.integrate(w, c.lo, c.hi)
                    for c in lattice.cells])
    return avg[lattice.cell_of_atom].max(axis=0)


def martingale_maximal(lattice: Lattice, weight_values, g, i: int) -> float:
    m = lattice.measure
    w = as_values(weight_values, m)
    v = np.abs(as_values(g, m))
    return max(m.integrate(v * w, c.lo, c.hi) / m.integrate(w, c.lo, c.hi)
               for c in lattice.chain(i))


def martingale_weak_type(lattice: Lattice, weight_values, g) -> float:
    """``max_t t * nu{M^D g >= t} / |g|_{L1(nu)}`` over the attained values ``t``."""
    m = lattice.measure
    w = as_values(weight_values, m)
    v = np.abs(as_values(g, m))
    M = martingale_maximal_all(lattice, w, v)
    l1 = m.integrate(v * w)
    nu = w * m.masses
    order = np.argsort(-M, kind="stable")
    Ms = M[order]
    cum = np.cumsum(nu[order])
    last = np.r_[Ms[1:] != Ms[:-1], True]
    prod = Ms[last] * cum[last]
    if l1 == 0:
        return 0.0
    return float(np.max(prod) / l1)


def weighted_cell_maximal_all(lattice: Lattice, weight_values, f) -> np.ndarray:
    """``sup_{x in Q} sigma(200B(Q))**-1 int_{30B(Q)} |f| sigma dmu`` with ``sigma = weight_values``."""
    m = lattice.measure
    s = as_values(weight_values, m)
    v = np.abs(as_values(f, m))
    avg = np.array([_ball_mass(m, v * s, c, 30.0) / _ball_mass(m, s, c, 200.0)
                    for c in lattice.cells])
    return avg[lattice.cell_of_atom].max(axis=0)


# --------------------------------------------------------------------------
# weighted sparse forms


def _lp(values: np.ndarray, dens: np.ndarray, p: float) -> float:
    return float(np.sum(np.abs(values) ** p * dens) ** (1.0 / p))


class SparseForm:
    """``(f, g) -> int T(f sigma) g w dmu`` for ``T h = sum coef_Q A(h, Q) 1_Q``."""

    def __init__(self, families: SparseFamilies, weight: Weight):
        lat = families.lattice
        m = lat.measure
        self.weight = weight
        self.families = families
        n = len(m)
        self.sdens = weight.sigma * m.masses
        self.wdens = weight.values * m.masses
        cols_a, cols_b = [], []
        for q, coef in zip(families.members, families.coefficients()):
            c = lat[q.cell]
            a, b = m.ball_range(c.center, 30 * c.radius)
            mu_alpha = m.mass_of(*m.ball_range(c.center, lat.params.alpha * c.radius))
            va = np.zeros(n)
            va[a:b] = self.sdens[a:b] * coef / mu_alpha
            vb = np.zeros(n)
            vb[c.lo:c.hi] = self.wdens[c.lo:c.hi]
            cols_a.append(va)
            cols_b.append(vb)
        self.Amat = np.array(cols_a).reshape(len(cols_a), n)
        self.Bmat = np.array(cols_b).reshape(len(cols_b), n)

    def pairing(self, f, g) -> float:
        """``|int T(f sigma) g w dmu|``; ``A`` uses ``|f sigma|``."""
        return abs(float((self.Amat @ np.abs(f)) @ (self.Bmat @ g)))

    def normalized(self, f, g) -> float:
        p, pd = self.weight.p, self.weight.p_dual
        nf, ng = _lp(f, self.weight.sigma * self.families.lattice.measure.masses, p), \
            _lp(g, self.wdens, pd)
        if nf == 0 or ng == 0:
            return 0.0
        return self.pairing(f, g) / (nf * ng)

    def alternate(self, f, g, iters: int = 200, rtol: float = 1e-12):
        """Alternating maximisation over nonnegative pairs; monotone in the normalised pairing."""
        p, pd = self.weight.p, self.weight.p_dual
        f, g = np.abs(f), np.abs(g)
        best = self.normalized(f, g)
        for _ in range(iters):
            h = self.Bmat.T @ (self.Amat @ f)  # best g is the Hölder dual of h / w
            if not np.any(h > 0):
                break
            g = (h / self.wdens) ** (p - 1.0)
            k = self.Amat.T @ (self.Bmat @ g)
            if not np.any(k > 0):
                break
            f = (k / self.sdens) ** (pd - 1.0)
            val = self.normalized(f, g)
            if val <= best * (1 + rtol):
                best = max(best, val)
                break
            best = val
        return best, f, g


@dataclass
class NormEstimate:
    value: float
    attaining: str
    f: np.ndarray
    g: np.ndarray
    trials: int

    def to_json(self) -> dict:
        return {"value": self.value, "attaining": self.attaining, "trials": self.trials}


def _test_pairs(families: SparseFamilies, rng: np.random.Generator, trials: int):
    lat = families.lattice
    m = lat.measure
    n = len(m)
    for t in range(trials):
        yield f"random[{t}]", rng.random(n), rng.random(n)
        yield f"signs[{t}]", rng.choice([-1.0, 1.0], n), rng.choice([-1.0, 1.0], n)
    for q in families.members:
        c = lat[q.cell]
        a, b = m.ball_range(c.center, 30 * c.radius)
        f30 = np.zeros(n)
        f30[a:b] = 1.0
        fq = np.zeros(n)
        fq[c.lo:c.hi] = 1.0
        fe = np.zeros(n)
        fe[families.witnesses[q]] = 1.0
        yield f"cell[{q.cell}]", fq, fq
        yield f"dilate[{q.cell}]", f30, fq
        yield f"witness[{q.cell}]", fe, fe


def weighted_sparse_norm(families: SparseFamilies, weight: Weight, rng: np.random.Generator,
                         trials: int = 8) -> NormEstimate:
    """Empirical lower bound for the norm of the sparse sum on ``L^p(w)``.

    Sampled pairs are random values and signs, indicators of family cells,
    their 30-dilates and witness sets; the best pair then seeds an
    alternating maximisation over nonnegative pairs.
    """
    n = len(families.lattice.measure)
    if not families.members:
        z = np.zeros(n)
        return NormEstimate(0.0, "empty", z, z, 0)
    form = SparseForm(families, weight)
    best, label, bf, bg, count = -1.0, "", None, None, 0
    for name, f, g in _test_pairs(families, rng, trials):
        count += 1
        val = form.normalized(f, g)
        if val > best:
            best, label, bf, bg = val, name, f, g
    val, f, g = form.alternate(bf, bg)
    if val > best:
        best, label, bf, bg = val, label + "+alternating", f, g
    return NormEstimate(best, label, bf, bg, count + 1)


def duality_bound(families: SparseFamilies, weight: Weight) -> dict:
    """``sup_Q sigma(200B) w(Q) / (mu(alpha B) sigma(E)**(1/p) w(E)**(1/p'))`` over family cells."""
    lat = families.lattice
    m = lat.measure
    best, where, excluded = 0.0, None, 0
    for q in families.members:
        c = lat[q.cell]
        E = families.witnesses[q]
        sE, wE = weight.sigma_of(E), weight.w_of(E)
        if sE <= 0 or wE <= 0:
            excluded += 1
            continue
        mu_alpha = m.mass_of(*m.ball_range(c.center, lat.params.alpha * c.radius))
        val = _ball_mass(m, weight.sigma, c, 200.0) * weight.w_mass(c.lo, c.hi) / (
            mu_alpha * sE ** (1.0 / weight.p) * wE ** (1.0 / weight.p_dual))
        if val > best:
            best, where = val, q.cell
    return {"value": best, "attaining_cell": where, "excluded": excluded}


def holder_report(families: SparseFamilies, weight: Weight) -> dict:
    """``mu(Q) <= 2 mu(E(Q))`` and ``mu(E) <= w(E)**(1/p) sigma(E)**(1/p')`` on every member."""
    lat = families.lattice
    m = lat.measure
    half_ok, holder_ok, worst = True, True, 0.0
    for q in families.members:
        c = lat[q.cell]
        E = families.witnesses[q]
        muE = math.fsum(m.masses[E].tolist())
        if math.fsum(m.masses[c.lo:c.hi].tolist() + (-2.0 * m.masses[E]).tolist()) > 0:
            half_ok = False
        rhs = weight.w_of(E) ** (1.0 / weight.p) * weight.sigma_of(E) ** (1.0 / weight.p_dual)
        worst = max(worst, muE / rhs)
        if muE > rhs * (1 + 1e-12):
            holder_ok = False
    return {"half_mass": half_ok, "holder": holder_ok, "worst_holder_ratio": worst}


def duality_consistency(families: SparseFamilies, weight: Weight, estimate: NormEstimate) -> dict:
    """Measured ``C`` in ``pairing <= C * bound * |M_sigma f|_{L^p(sigma)} * |M^D_w g|_{L^p'(w)}``."""
    lat = families.lattice
    m = lat.measure
    bound = duality_bound(families, weight)["value"]
    form = SparseForm(families, weight) if families.members else None
    if form is None or bound == 0:
        return {"constant": 0.0, "bound": bound}
    f, g = estimate.f, estimate.g
    Mf = weighted_cell_maximal_all(lat, weight.sigma, f)
    Mg = martingale_maximal_all(lat, weight.values, g)
    den = bound * _lp(Mf, weight.sigma * m.masses, weight.p) * _lp(Mg, weight.values * m.masses,
                                                                  weight.p_dual)
    return {"constant": form.pairing(f, g) / den if den > 0 else math.inf, "bound": bound}


def norm_sweep(lattice: Lattice, kernel: Kernel, lam: DominatingFunction, a_values,
               rng: np.random.Generator, p: float = 2.0, center: float = 0.5,
               trials: int = 4) -> list[dict]:
    """Power-weight sweep: characteristic, empirical sparse norm and their ratio per exponent.

    The families for each weight come from running the recursion on the
    dual weight ``sigma`` itself, so the selection sees the singularity.
    """
    rows = []
    for a in a_values:
        w = power_weight(lattice.measure, float(a), center, p)
        fam = recurse(lattice.root, w.sigma, lattice, kernel, lam)
        char = cell_characteristic(w, lattice).value
        est = weighted_sparse_norm(fam, w, rng, trials)
        rows.append({"a": float(a), "characteristic": char, "empirical_norm": est.value,
                     "ratio": est.value / char, "members": len(fam.members),
                     "attaining": est.attaining})
    return rows
