"""Command line interface: ``nhsl lattice|sparse|weights|run|fixtures``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import fixtures as fx
from .lattice import Lattice, LatticeParams, check_lattice
from .measure import DominatingFunction, load_measure
from .operators import Kernel
from .pipeline import (EXIT_CONFIG, EXIT_LATTICE, EXIT_OK, EXIT_SPARSE,
                       ConfigError, ExperimentConfig, StageError, certificate_rows,
                       config_hash, csv_text, dumps, lattice_stage, load_dominating,
                       load_weight, make_function, run_pipeline, write_atomic)
from .sparse import SelectionError, certify, recurse, selection_report, sparsity_report
from .weights import cell_characteristic, norm_sweep

log = logging.getLogger("nhsl")


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"file not found: {p}")
    return json.loads(p.read_text())


def _stamp(args, mode: str) -> dict:
    inputs = {k: str(v) for k, v in sorted(vars(args).items()) if k != "func"}
    return {"config_hash": config_hash(inputs), "mode": mode}


def _common(args):
    for p in (args.measure, args.params):
        if not Path(p).is_file():
            raise ConfigError(f"file not found: {p}")
    measure = load_measure(args.measure)
    pdata = _read_json(args.params)
    dom = _read_json(args.dominating) if getattr(args, "dominating", None) else pdata.get("dominating")
    lam = load_dominating(dom, measure)
    params = LatticeParams.from_json(pdata, measure)
    return measure, lam, params


def parse_range(text: str) -> list[float]:
    """``start:stop:step`` inclusive of ``stop`` (up to rounding)."""
    try:
        a, b, s = (float(t) for t in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from exc
    if s <= 0 or b < a:
        raise argparse.ArgumentTypeError("need start <= stop and step > 0")
    n = int(round((b - a) / s))
    return [round(a + i * s, 12) for i in range(n + 1)]


# --------------------------------------------------------------------------
# commands


def cmd_lattice_build(args) -> int:
    measure, lam, params = _common(args)
    lat, rep = lattice_stage(measure, lam, params)
    write_atomic(Path(args.out), dumps({**_stamp(args, params.mode), **lat.to_json(lam)}))
    print(f"{lat!r}: invariants {'pass' if rep.passed else 'FAIL'}")
    return EXIT_OK


def cmd_lattice_check(args) -> int:
    data = _read_json(args.lattice)
    lat = Lattice.from_json(data)
    lam = DominatingFunction.from_json(data["dominating"], lat.measure) if "dominating" in data else None
    rep = check_lattice(lat, lam)
    print(dumps(rep.to_json()), end="")
    return EXIT_OK if rep.passed else 1


def cmd_sparse_run(args) -> int:
    measure, lam, params = _common(args)
    kernel = Kernel.from_json(_read_json(args.kernel))
    rng = np.random.default_rng(args.seed)
    fspec = {"path": str(Path(args.f).resolve())} if args.f else {"kind": args.f_kind}
    f = make_function(fspec, measure, rng, Path("."))
    lat, rep = lattice_stage(measure, lam, params)
    if not rep.passed:
        raise StageError(EXIT_LATTICE, "lattice invariants failed: " + "; ".join(rep.failures))
    try:
        fam = recurse(lat.root, f, lat, kernel, lam)
    except SelectionError as exc:
        raise StageError(EXIT_SPARSE, str(exc)) from exc
    cert = certify(kernel, lat, fam, f, lam)
    sp, se = sparsity_report(fam), selection_report(fam)
    out = Path(args.out)
    stamp = _stamp(args, params.mode)
    write_atomic(out / "families.json", dumps({**stamp, **fam.to_json()}))
    write_atomic(out / "certificate.csv", csv_text(["x", "lhs", "rhs", "ratio"],
                                                   certificate_rows(measure, cert)))
    write_atomic(out / "certificate.json", dumps({**stamp, **cert.summary(),
                                                  "sparsity": sp, "selection": se}))
    print(f"c* = {cert.c_star:.6g}, violations = {len(cert.violations)}")
    return EXIT_OK if sp["passed"] and se["passed"] else EXIT_SPARSE


def cmd_weights_characteristic(args) -> int:
    measure, lam, params = _common(args)
    w = load_weight({"path": str(Path(args.weight).resolve())}, measure, Path("."))
    lat, _ = lattice_stage(measure, lam, params)
    ch = cell_characteristic(w, lat)
    out = Path(args.out)
    table = out.with_name(out.stem + "_cells.csv")
    write_atomic(table, csv_text(["cell", "level", "z_Q", "r_Q", "value"], ch.table_rows(lat)))
    write_atomic(out, dumps({**_stamp(args, params.mode), **ch.to_json(), "p": w.p,
                             "per_cell_table_path": table.name}))
    print(f"characteristic = {ch.value:.6g} at cell {ch.attaining_cell}")
    return EXIT_OK


def cmd_weights_sweep(args) -> int:
    measure, lam, params = _common(args)
    if args.family != "power":
        raise ConfigError(f"unknown weight family {args.family!r}")
    kernel = Kernel.from_json(_read_json(args.kernel))
    lat, _ = lattice_stage(measure, lam, params)
    rows = norm_sweep(lat, kernel, lam, args.a_range, np.random.default_rng(args.seed),
                      p=args.p, center=args.center)
    text = csv_text(["a", "characteristic", "empirical_norm"],
                    ((r["a"], r["characteristic"], r["empirical_norm"]) for r in rows))
    if args.out:
        write_atomic(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    code, summary = run_pipeline(cfg)
    print(dumps(summary), end="")
    return code


def cmd_fixtures_list(args) -> int:
    for name in fx.list_fixtures():
        f = fx.generate(name)
        print(f"{name}\tseed={f.seed}\t{f.description}")
    return EXIT_OK


def cmd_fixtures_generate(args) -> int:
    try:
        f = fx.generate(args.name, args.seed)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from exc
    d = f.write(Path(args.out))
    print(f"wrote {d / 'measure.json'} and {d / 'config.json'}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nhsl", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def inputs(p, kernel=False):
        p.add_argument("--measure", required=True, help="measure JSON or CSV")
        p.add_argument("--params", required=True, help="lattice params JSON")
        p.add_argument("--dominating", help="dominating function JSON (default: from params or fitted)")
        if kernel:
            p.add_argument("--kernel", required=True, help="kernel JSON")

    lat = sub.add_parser("lattice").add_subparsers(dest="action", required=True)
    p = lat.add_parser("build")
    inputs(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lattice_build)
    p = lat.add_parser("check")
    p.add_argument("lattice")
    p.set_defaults(func=cmd_lattice_check)

    sp = sub.add_parser("sparse").add_subparsers(dest="action", required=True)
    p = sp.add_parser("run")
    inputs(p, kernel=True)
    p.add_argument("--f", help="function values JSON/CSV aligned with the atoms")
    p.add_argument("--f-kind", default="normal", help="random function kind when --f is absent")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sparse_run)

    ws = sub.add_parser("weights").add_subparsers(dest="action", required=True)
    p = ws.add_parser("characteristic")
    inputs(p)
    p.add_argument("--weight", required=True, help="weight JSON ({'p':..., 'values':[...]})")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weights_characteristic)
    p = ws.add_parser("norm-sweep")
    inputs(p, kernel=True)
    p.add_argument("--family", default="power")
    p.add_argument("--a-range", type=parse_range, default=parse_range("-0.9:0.9:0.1"))
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--center", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_weights_sweep)

    p = sub.add_parser("run")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    fs = sub.add_parser("fixtures").add_subparsers(dest="action", required=True)
    p = fs.add_parser("list")
    p.set_defaults(func=cmd_fixtures_list)
    p = fs.add_parser("generate")
    p.add_argument("name")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_fixtures_generate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
