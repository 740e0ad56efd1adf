"""Experiment configs and the end-to-end run that writes all artifacts."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import LatticeError, LatticeParams, build_lattice, check_lattice, decay_base
from .measure import AtomicMeasure, DominatingFunction, ResolutionError, load_measure
from .operators import Kernel
from .sparse import SelectionError, certify, recurse, selection_report, sparsity_report
from .weights import (Weight, cell_characteristic, duality_bound, holder_report,
                      interval_a2_characteristic, weighted_sparse_norm)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_LATTICE, EXIT_SPARSE, EXIT_WEIGHTS = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def csv_text(header, rows) -> str:
    import io
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


# --------------------------------------------------------------------------
# config


@dataclass
class ExperimentConfig:
    raw: dict
    base: Path
    measure_path: Path
    dominating: dict | None
    kernel: dict
    lattice: dict
    weights: list
    f: dict
    seed: int
    out: Path
    mode: str
    hash: str = field(init=False)

    def __post_init__(self):
        self.hash = config_hash(self.raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw, path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base=".") -> "ExperimentConfig":
        base = Path(base)
        for key in ("measure", "kernel", "lattice", "seed"):
            if key not in raw:
                raise ConfigError(f"config is missing {key!r}")
        if not isinstance(raw["seed"], int):
            raise ConfigError("seed must be an explicit integer")
        measure_path = base / raw["measure"]
        if not measure_path.is_file():
            raise ConfigError(f"measure file not found: {measure_path}")
        f = raw.get("f", {"kind": "normal"})
        if "path" in f and not (base / f["path"]).is_file():
            raise ConfigError(f"function file not found: {base / f['path']}")
        for w in raw.get("weights", []):
            if isinstance(w, dict) and "path" in w and not (base / w["path"]).is_file():
                raise ConfigError(f"weight file not found: {base / w['path']}")
        lat = dict(raw["lattice"])
        mode = raw.get("mode", "relaxed" if lat.get("relaxed") else "paper")
        if mode not in ("paper", "relaxed"):
            raise ConfigError(f"unknown mode {mode!r}")
        if mode == "paper" and lat.get("relaxed", False):
            raise ConfigError("paper-constants mode cannot use relaxed lattice params")
        lat["relaxed"] = mode == "relaxed"
        return cls(raw, base, measure_path, raw.get("dominating"), raw["kernel"], lat,
                   list(raw.get("weights", [])), f, raw["seed"], base / raw.get("out", "out"), mode)

    def stamp(self) -> dict:
        return {"config_hash": self.hash, "mode": self.mode}


def make_function(spec: dict, measure: AtomicMeasure, rng: np.random.Generator, base: Path) -> np.ndarray:
    n = len(measure)
    if "path" in spec:
        p = base / spec["path"]
        data = json.loads(p.read_text()) if p.suffix == ".json" else np.loadtxt(p, delimiter=",")
        v = np.asarray(data["values"] if isinstance(data, dict) else data, dtype=float).ravel()
        if v.size != n:
            raise ConfigError(f"function has {v.size} values for {n} atoms")
        return v
    kind = spec.get("kind", "normal")
    if kind == "zero":
        return np.zeros(n)
    if kind == "normal":
        return rng.standard_normal(n)
    if kind == "uniform":
        return rng.random(n)
    if kind == "spikes":
        rate = spec.get("rate", 0.02)
        return np.where(rng.random(n) < rate, rng.exponential(size=n) * 50.0, 0.0)
    raise ConfigError(f"unknown function kind {kind!r}")


def load_dominating(spec: dict | None, measure: AtomicMeasure) -> DominatingFunction:
    if spec is None:
        spec = {"family": "power", "s": 1.0}
    return DominatingFunction.from_json(spec, measure)


def load_weight(spec, measure: AtomicMeasure, base: Path) -> Weight:
    if isinstance(spec, dict) and "path" in spec:
        data = json.loads((base / spec["path"]).read_text())
        if isinstance(data, list):
            data = {"values": data}
        data.setdefault("p", spec.get("p", 2.0))
        return Weight.from_json(data, measure)
    return Weight.from_json(spec, measure)


# --------------------------------------------------------------------------
# stages


def lattice_stage(measure, lam, params: LatticeParams):
    try:
        lat = build_lattice(measure, params)
    except (LatticeError, ResolutionError) as exc:
        raise StageError(EXIT_LATTICE, f"lattice construction failed: {exc}") from exc
    return lat, check_lattice(lat, lam)


def certificate_rows(measure, cert):
    ratio = cert.ratio
    for x, l, r, q in zip(measure.positions, cert.lhs, cert.rhs, ratio):
        yield x, l, r, ("" if np.isnan(q) else q)


def run_pipeline(config: ExperimentConfig) -> tuple[int, dict]:
    """Run every stage and write the artifacts; returns ``(exit code, summary)``."""
    stamp = config.stamp()
    out = config.out
    ss = np.random.SeedSequence(config.seed)
    rng_f, rng_w = (np.random.default_rng(s) for s in ss.spawn(2))
    try:
        measure = load_measure(config.measure_path)
        lam = load_dominating(config.dominating, measure)
        kernel = Kernel.from_json(config.kernel)
        params = LatticeParams.from_json(config.lattice, measure)
        f = make_function(config.f, measure, rng_f, config.base)
        weights = [load_weight(w, measure, config.base) for w in config.weights]
    except (ValueError, KeyError, OSError) as exc:
        return EXIT_CONFIG, {"error": f"config: {exc}", **stamp}

    summary: dict = dict(stamp)
    try:
        lat, rep = lattice_stage(measure, lam, params)
        write_atomic(out / "lattice.json", dumps({**stamp, **lat.to_json(lam)}))
        write_atomic(out / "lattice_report.json", dumps({**stamp, **rep.to_json()}))
        summary["lattice"] = {"levels": [len(l) for l in lat.levels], "passed": rep.passed}
        if not rep.passed:
            raise StageError(EXIT_LATTICE, "lattice invariants failed: " + "; ".join(rep.failures))
        if not lat.root.doubling:
            raise StageError(EXIT_LATTICE, "root cell is not doubling")

        try:
            fam = recurse(lat.root, f, lat, kernel, lam)
        except SelectionError as exc:
            raise StageError(EXIT_SPARSE, str(exc)) from exc
        sp, se = sparsity_report(fam), selection_report(fam)
        cert = certify(kernel, lat, fam, f, lam)
        write_atomic(out / "families.json", dumps({**stamp, **fam.to_json()}))
        write_atomic(out / "certificate.csv",
                     csv_text(["x", "lhs", "rhs", "ratio"], certificate_rows(measure, cert)))
        write_atomic(out / "certificate.json",
                     dumps({**stamp, **cert.summary(), "sparsity": sp, "selection": se,
                            "rho": fam.rho, "decay_base": decay_base(lat, lam)}))
        summary["sparse"] = {"members": len(fam.members), "depth": fam.depth,
                             "c_star": cert.c_star, "violations": len(cert.violations),
                             "passed": sp["passed"] and se["passed"]}
        if not (sp["passed"] and se["passed"]):
            raise StageError(EXIT_SPARSE, "sparse family invariants failed")

        wsum = []
        for idx, w in enumerate(weights):
            ch = cell_characteristic(w, lat)
            table = f"characteristic_{idx}_cells.csv"
            rec = {**stamp, **ch.to_json(), "p": w.p, "per_cell_table_path": table,
                   "duality_bound": duality_bound(fam, w), "holder": holder_report(fam, w),
                   "empirical_norm": weighted_sparse_norm(fam, w, rng_w).to_json()}
            if w.p == 2:
                rec["interval_a2"] = interval_a2_characteristic(w, lat)
            write_atomic(out / table, csv_text(["cell", "level", "z_Q", "r_Q", "value"],
                                               ch.table_rows(lat)))
            write_atomic(out / f"characteristic_{idx}.json", dumps(rec))
            ok = np.isfinite(ch.value) and rec["holder"]["half_mass"] and rec["holder"]["holder"]
            wsum.append({"value": ch.value, "passed": bool(ok)})
            if not ok:
                raise StageError(EXIT_WEIGHTS, f"weight {idx} failed its identities")
        summary["weights"] = wsum
    except StageError as exc:
        summary["error"] = str(exc)
        write_atomic(out / "summary.json", dumps(summary))
        return exc.code, summary
    summary["exit"] = EXIT_OK
    write_atomic(out / "summary.json", dumps(summary))
    return EXIT_OK, summary
