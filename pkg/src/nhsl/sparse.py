"""Stopping-time cell selection, its recursion over doubling cells, and certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import Cell, Lattice, decay_base, thetas
from .measure import DominatingFunction, as_values
from .operators import (Kernel, cell_averages, grand_maximal_all, max_truncation_all,
                        maximal_lambda_all, maximal_mu_all, tail_values)

K_CAP = 2.0 ** 60


class SelectionError(RuntimeError):
    """No threshold on the grid makes the bad set small enough."""


def _mass_sign(measure, atoms: np.ndarray, ref: np.ndarray, factor: float = 0.5) -> float:
    """Correctly rounded ``mu(atoms) - factor * mu(ref)``; its sign is exact."""
    m = measure.masses
    return math.fsum(np.concatenate((m[atoms], -factor * m[ref])).tolist())


def restrict_to_ball(lattice: Lattice, v: np.ndarray, cell: Cell, dilation: float = 30.0) -> np.ndarray:
    """``v * 1_{dilation B(cell)}``."""
    a, b = lattice.measure.ball_range(cell.center, dilation * cell.radius)
    out = np.zeros_like(v)
    out[a:b] = v[a:b]
    return out


def localized_grand_maximal(kernel: Kernel, lattice: Lattice, v: np.ndarray, Q0: Cell) -> np.ndarray:
    """``N_{Q0}(f 1_{30B(Q0)})`` on the atoms of ``Q0``."""
    g = restrict_to_ball(lattice, v, Q0)
    sups = {}
    for P in lattice.descendants(Q0):
        vals = tail_values(kernel, lattice.measure, g, P)
        sups[P.id] = float(np.max(np.abs(vals)))
    return grand_maximal_all(kernel, lattice, g, Q0, sups)[Q0.lo:Q0.hi]


@dataclass
class SelectionOutcome:
    root: int
    K: float | None
    average: float
    omega: np.ndarray          # atom-level bad set, indices into the measure
    omega_mass: float
    bad_cells: list[int]       # C_0(Q0)
    chains: dict[int, list[int]]  # n -> C_n(Q0), n >= 1
    stopped: list[int]         # F(Q0)
    N: np.ndarray              # N_{Q0}(f 1_{30B(Q0)}) on the atoms of Q0
    M: np.ndarray              # localised M_mu on the atoms of Q0
    K_half_mass: float | None = None  # mu(Omega(K/2)) - mu(Q0)/2, when K > 2

    def to_json(self) -> dict:
        return {"root": self.root, "K": self.K, "average": self.average,
                "omega_mass": self.omega_mass, "bad_cells": self.bad_cells,
                "chains": {str(n): ids for n, ids in self.chains.items()},
                "stopped": self.stopped}


def _maximal_bad_cells(lattice: Lattice, Q0: Cell, bad: np.ndarray) -> list[int]:
    """Maximal strict descendants of ``Q0`` whose atoms are all bad (``bad`` indexed from Q0.lo)."""
    out, stack = [], list(reversed(Q0.children))
    while stack:
        c = lattice[stack.pop()]
        seg = bad[c.lo - Q0.lo:c.hi - Q0.lo]
        if seg.all():
            out.append(c.id)
        elif seg.any():
            stack.extend(reversed(c.children))
    return sorted(out, key=lambda cid: lattice[cid].lo)


def select(Q0: Cell, f, lattice: Lattice, kernel: Kernel, K_cap: float = K_CAP) -> SelectionOutcome:
    """Bad set, maximal bad cells and their non-doubling chains below a doubling ``Q0``."""
    if not Q0.doubling:
        raise ValueError(f"cell {Q0.id} is not doubling")
    m = lattice.measure
    v = as_values(f, m)
    g = restrict_to_ball(lattice, v, Q0)
    A = cell_averages(lattice, g)
    avg = float(A[Q0.id])
    empty = np.zeros(0, dtype=np.intp)
    if not Q0.children:
        z = np.zeros(Q0.n_atoms)
        return SelectionOutcome(Q0.id, None, avg, empty, 0.0, [], {}, [], z, z)
    N = localized_grand_maximal(kernel, lattice, v, Q0)
    M = maximal_mu_all(lattice, g, Q0, averages=A)[Q0.lo:Q0.hi]
    span = np.arange(Q0.lo, Q0.hi)

    def omega(K):
        return (N > K * avg) | (M > K * avg)

    K, prev = 2.0, None
    while True:
        bad = omega(K)
        excess = _mass_sign(m, span[bad], span)
        if excess <= 0:
            break
        prev = excess
        K *= 2.0
        if K > K_cap:
            raise SelectionError(f"no threshold up to {K_cap:g} halves the bad set of cell {Q0.id}")
    bad_cells = _maximal_bad_cells(lattice, Q0, bad)
    stopped = [c for c in bad_cells if lattice[c].doubling]
    chains: dict[int, list[int]] = {}
    current = [c for c in bad_cells if not lattice[c].doubling]
    n = 1
    while current:
        chains[n] = current
        nxt = []
        for cid in current:
            for kid in lattice[cid].children:
                (stopped if lattice[kid].doubling else nxt).append(kid)
        current, n = nxt, n + 1
    stopped.sort(key=lambda cid: (lattice[cid].lo, lattice[cid].level))
    return SelectionOutcome(Q0.id, K, avg, span[bad], m.mass_of_mask(np.isin(np.arange(len(m)), span[bad])),
                            bad_cells, chains, stopped, N, M, prev)


# --------------------------------------------------------------------------
# recursion and sparse families


@dataclass(frozen=True)
class Member:
    n: int
    generation: int
    cell: int


@dataclass
class SparseFamilies:
    lattice: Lattice
    rho: float
    members: list[Member]
    witnesses: dict[Member, np.ndarray]
    outcomes: dict[int, SelectionOutcome]
    depth: int
    root: int

    def family(self, n: int) -> list[Member]:
        return [q for q in self.members if q.n == n]

    @property
    def orders(self) -> list[int]:
        return sorted({q.n for q in self.members})

    def generation(self, n: int, k: int) -> list[Member]:
        return [q for q in self.members if q.n == n and q.generation == k]

    def coefficients(self) -> np.ndarray:
        return np.array([self.rho ** q.n for q in self.members])

    def to_json(self) -> dict:
        out: dict[str, list] = {}
        for q in self.members:
            out.setdefault(str(q.n), []).append({
                "cell_id": q.cell, "generation": q.generation,
                "witness_atom_ids": self.witnesses[q].tolist()})
        return {"rho": self.rho, "depth": self.depth, "root": self.root, "families": out,
                "K_per_root": {str(r): o.K for r, o in self.outcomes.items()}}


def witness_sets(lattice: Lattice, members: list[Member]) -> dict[Member, np.ndarray]:
    """``E(Q)``: ``Q`` minus every later member of the same family lying inside it."""
    out = {}
    by_n: dict[int, list[Member]] = {}
    for q in members:
        by_n.setdefault(q.n, []).append(q)
    for group in by_n.values():
        for q in group:
            c = lattice[q.cell]
            keep = np.ones(c.n_atoms, dtype=bool)
            for r in group:
                if r.generation > q.generation:
                    d = lattice[r.cell]
                    if d.within(c):
                        keep[d.lo - c.lo:d.hi - c.lo] = False
            out[q] = np.arange(c.lo, c.hi)[keep]
    return out


def recurse(Q0: Cell, f, lattice: Lattice, kernel: Kernel, lam: DominatingFunction | None = None,
            rho: float | None = None, K_cap: float = K_CAP) -> SparseFamilies:
    """Apply :func:`select` to each generation of stopped doubling cells until none remain."""
    if rho is None:
        if lam is not None:
            rho = decay_base(lattice, lam)
        else:
            rho = lattice.params.paper_decay_base if not lattice.params.relaxed else 1.0
    v = as_values(f, lattice.measure)
    members = [Member(0, 0, Q0.id)]
    outcomes: dict[int, SelectionOutcome] = {}
    roots, k = [Q0.id], 0
    while roots:
        nxt = []
        for rid in roots:
            out = select(lattice[rid], v, lattice, kernel, K_cap)
            outcomes[rid] = out
            for n, ids in out.chains.items():
                members.extend(Member(n, k + 1, c) for c in ids)
            members.extend(Member(0, k + 1, c) for c in out.stopped)
            nxt.extend(out.stopped)
        roots, k = nxt, k + 1
    return SparseFamilies(lattice, float(rho), members, witness_sets(lattice, members),
                          outcomes, k, Q0.id)


def sparsity_report(families: SparseFamilies) -> dict:
    """Exact checks of the child-mass inequality and of the witness sets."""
    lat, m = families.lattice, families.lattice.measure
    child_ok, witness_ok, disjoint_ok = True, True, True
    failures = []
    for R in families.members:
        cR = lat[R.cell]
        kids = [q for q in families.generation(R.n, R.generation + 1) if lat[q.cell].within(cR)]
        atoms = np.concatenate([np.arange(lat[q.cell].lo, lat[q.cell].hi) for q in kids]) \
            if kids else np.zeros(0, dtype=np.intp)
        if len(np.unique(atoms)) != len(atoms) or _mass_sign(m, atoms, np.arange(cR.lo, cR.hi)) > 0:
            child_ok = False
            failures.append(f"child mass of family {R.n} member {R.cell} exceeds half")
        E = families.witnesses[R]
        if _mass_sign(m, np.arange(cR.lo, cR.hi), E, factor=2.0) > 0:
            witness_ok = False
            failures.append(f"witness of family {R.n} member {R.cell} is too light")
    for n in families.orders:
        seen = np.zeros(len(m), dtype=bool)
        for q in families.family(n):
            E = families.witnesses[q]
            if seen[E].any():
                disjoint_ok = False
                failures.append(f"witness sets overlap in family {n}")
            seen[E] = True
    return {"child_mass": child_ok, "witness_mass": witness_ok, "witness_disjoint": disjoint_ok,
            "passed": child_ok and witness_ok and disjoint_ok, "failures": failures}


def selection_report(families: SparseFamilies) -> dict:
    """Structural checks on every selection: disjointness, dichotomy, half mass, minimal K."""
    lat, m = families.lattice, families.lattice.measure
    ok = {"chains_disjoint": True, "dichotomy": True, "omega_half": True, "K_minimal": True}
    for out in families.outcomes.values():
        Q0 = lat[out.root]
        if _mass_sign(m, out.omega, np.arange(Q0.lo, Q0.hi)) > 0:
            ok["omega_half"] = False
        if out.K is not None and out.K > 2 and not (out.K_half_mass is not None and out.K_half_mass > 0):
            ok["K_minimal"] = False
        for ids in out.chains.values():
            cells = sorted((lat[c] for c in ids), key=lambda c: c.lo)
            if any(a.hi > b.lo for a, b in zip(cells, cells[1:])):
                ok["chains_disjoint"] = False
            for P in out.stopped:
                p = lat[P]
                for c in cells:
                    if not (p.within(c) or p.hi <= c.lo or c.hi <= p.lo):
                        ok["dichotomy"] = False
    ok["passed"] = all(ok.values())
    return ok


def sparse_eval_all(families: SparseFamilies, f) -> np.ndarray:
    """``S(x) = sum_n rho**n sum_{Q in F_n} A(f, Q) 1_Q(x)`` at every atom."""
    lat = families.lattice
    A = cell_averages(lat, as_values(f, lat.measure))
    S = np.zeros(len(lat.measure))
    for q, coef in zip(families.members, families.coefficients()):
        c = lat[q.cell]
        S[c.lo:c.hi] += coef * A[c.id]
    return S


def sparse_eval(families: SparseFamilies, f, i: int) -> float:
    return float(sparse_eval_all(families, f)[i])


# --------------------------------------------------------------------------
# certificates


@dataclass
class DominationCertificate:
    lhs: np.ndarray
    rhs: np.ndarray
    c_star: float
    violations: list[int]
    recursion_constants: dict[int, float] = field(default_factory=dict)
    K_per_root: dict[int, float | None] = field(default_factory=dict)
    m_lambda_over_theta_maximal: float = 0.0
    theta_maximal_over_sparse: float = 0.0

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.rhs > 0, self.lhs / np.where(self.rhs > 0, self.rhs, 1.0), np.nan)

    def summary(self) -> dict:
        return {"c_star": self.c_star, "violations": self.violations,
                "recursion_constants": {str(k): v for k, v in self.recursion_constants.items()},
                "K_per_root": {str(k): v for k, v in self.K_per_root.items()},
                "m_lambda_over_theta_maximal": self.m_lambda_over_theta_maximal,
                "theta_maximal_over_sparse": self.theta_maximal_over_sparse}


def _max_ratio(num: np.ndarray, den: np.ndarray, tol: float = 0.0) -> float:
    pos = den > 0
    if np.any((~pos) & (num > tol)):
        return math.inf
    return float(np.max(num[pos] / den[pos])) if np.any(pos) else 0.0


def recursion_constant(families: SparseFamilies, root: int, v: np.ndarray) -> float:
    """Smallest ``C`` in the per-root recursion inequality at the atoms of ``root``."""
    lat = families.lattice
    out = families.outcomes[root]
    Q0 = lat[root]
    A = cell_averages(lat, v)
    lhs = out.N.copy()
    for P in out.stopped:
        p = lat[P]
        sub = families.outcomes.get(P)
        NP = sub.N if sub is not None else np.zeros(p.n_atoms)
        lhs[p.lo - Q0.lo:p.hi - Q0.lo] -= NP
    den = np.full(Q0.n_atoms, A[root])
    for n, ids in out.chains.items():
        for cid in ids:
            c = lat[cid]
            den[c.lo - Q0.lo:c.hi - Q0.lo] += families.rho ** n * A[cid]
    return _max_ratio(np.maximum(lhs, 0.0), den)


def certify(kernel: Kernel, lattice: Lattice, families: SparseFamilies, f,
            lam: DominatingFunction | None = None, tol: float = 1e-12) -> DominationCertificate:
    """Pointwise comparison of ``T# f`` with the sparse sum built from ``families``."""
    m = lattice.measure
    v = as_values(f, m)
    lhs = max_truncation_all(kernel, m, v)
    rhs = sparse_eval_all(families, v)
    scale = max(1.0, float(np.max(lhs))) * tol
    violations = [int(i) for i in np.flatnonzero((rhs <= 0) & (lhs > scale))]
    pos = rhs > 0
    c_star = float(np.max(lhs[pos] / rhs[pos])) if np.any(pos) else 0.0
    rec = {r: recursion_constant(families, r, v) for r in families.outcomes}
    cert = DominationCertificate(lhs, rhs, c_star, violations, rec,
                                 {r: o.K for r, o in families.outcomes.items()})
    if lam is not None:
        root = lattice[families.root]
        A = cell_averages(lattice, v)
        th = thetas(lattice, lam)
        tn = maximal_mu_all(lattice, v, root, averages=th * A)
        ml = maximal_lambda_all(m, lam, v)
        sl = slice(root.lo, root.hi)
        cert.m_lambda_over_theta_maximal = _max_ratio(ml[sl], tn[sl], tol)
        cert.theta_maximal_over_sparse = _max_ratio(tn[sl], rhs[sl], tol)
    return cert
