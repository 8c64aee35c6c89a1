"""Command line front end: ``svmeuler <subcommand> [--config FILE] [--set k=v]``.

Exit codes: 0 all checks passed, 1 a check failed, 2 configuration error,
3 numerical abort (non-finite values; last valid state is dumped).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import ensemble as en
from . import io as sio
from . import lattice as lt
from . import presets
from .config import RunConfig, load_config, serialize
from .errors import ConfigError, NumericalAbort, SVMError
from .noise import derive_seed
from .scheme import LEDGER_COLUMNS, ProbeSampler, SnapshotWriter, run

log = logging.getLogger("svmeuler")

SUBCOMMANDS = ("run", "ensemble", "converge", "verify-energy", "consistency", "relative-energy", "info")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NAN = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svmeuler", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"svmeuler {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration (defaults: 2-D, n = 16)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted key, e.g. scheme.dt=0.005 (repeatable)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, help="FFT worker threads")
        p.add_argument("--dry-run", action="store_true", help="validate and print the effective config")
        if name == "run":
            p.add_argument("--resume", action="store_true", help="continue from <out>/checkpoint")
    return parser


# ---------------------------------------------------------------------------
# Subcommands; each returns a dict of checks {name: {"pass": bool, ...}}
# ---------------------------------------------------------------------------


def cmd_run(cfg: RunConfig, out: str, args) -> dict:
    sc = cfg.scheme_config()
    obs_cfg = cfg.section("observers")
    observers = []
    if obs_cfg["snapshot_stride"]:
        observers.append(SnapshotWriter(os.path.join(out, "snapshots"), obs_cfg["snapshot_stride"], sc.lattice))
    probes = ProbeSampler(cfg.ensemble_config().probes, sc.dt, sc.lattice)
    observers.append(probes)
    ckpt = os.path.join(out, "checkpoint") if obs_cfg["checkpoint_every"] or args.resume else None
    result = run(sc, cfg.initial(), observers=observers, seed=cfg.seed,
                 energy_stride=obs_cfg["energy_stride"], checkpoint_dir=ckpt,
                 checkpoint_every=obs_cfg["checkpoint_every"], resume=bool(args.resume))
    table = result.ledger.table()
    sio.write_csv(os.path.join(out, "ledger.csv"), LEDGER_COLUMNS, table)
    sio.write_snapshot(result.state.u, os.path.join(out, "final.svmf"), result.state.time)
    rows = [[i, t, *x, *probes.values(i)[0]] for i, (t, x) in enumerate(probes.probes) if len(probes.values(i))]
    if rows:
        xs = ["x", "y", "z"][: sc.dim]
        sio.write_csv(os.path.join(out, "probes.csv"), ["probe", "t", *xs, *[f"u{j}" for j in range(sc.dim)]], rows)
    u = result.state.u
    return {
        "finite": {"pass": bool(np.all(np.isfinite(u.coeffs)))},
        "divergence_free": {"pass": u.is_divergence_free(), "max_defect": u.max_divergence_defect()},
        "summary": {"pass": True, "final_time": result.state.time, "final_energy": float(table[-1, 1]),
                    "final_residual": float(table[-1, -1])},
    }


def cmd_ensemble(cfg: RunConfig, out: str, args) -> dict:
    sc = cfg.scheme_config()
    res = en.run_ensemble(cfg.ensemble_config(), sc, cfg.initial(), out_dir=out,
                          energy_stride=cfg.section("observers")["energy_stride"])
    E = res.energies()
    return {
        "failures": {"pass": len(res.failures) <= en.MAX_FAILURE_FRACTION * res.ens.M,
                     "count": len(res.failures)},
        "summary": {"pass": True, "members": int(res.alive.sum()), "mean_final_energy": float(np.mean(E)),
                    "stderr_final_energy": float(np.std(E, ddof=1) / np.sqrt(len(E))) if len(E) > 1 else 0.0},
    }


def cmd_converge(cfg: RunConfig, out: str, args) -> dict:
    sc = cfg.scheme_config()
    ens = cfg.ensemble_config()
    rep = en.cesaro_experiment(sc, ens.ladder, cfg.initial(), seed=cfg.seed, coupled=ens.coupled, out_dir=out)
    # a-priori bound along the ladder, one coupled path per member
    p = cfg.section("experiment")["p"]
    sup = {n: [] for n in ens.ladder}
    for i in range(cfg.section("experiment")["members"]):
        seed = derive_seed(cfg.seed, i)
        for n in ens.ladder:
            r = run(en.ladder_config(sc, n), cfg.initial(), seed=seed)
            sup[n].append(dg.sup_norm_power(r.ledger, p))
    apr = dg.apriori_check(sup, p)
    return {
        "cesaro_monotone": {"pass": rep.passed, "gaps": rep.gaps, "ladder": rep.ladder},
        "apriori": {"pass": apr.passed, "moments": apr.moments, "ratios": apr.ratios},
    }


def cmd_verify_energy(cfg: RunConfig, out: str, args) -> dict:
    sc = cfg.scheme_config()
    dts = cfg.section("experiment")["dts"]
    rows, finals = [], []
    for dt in dts:
        r = run(sc.replace(dt=dt), cfg.initial(), seed=cfg.seed)
        res = dg.energy_balance_residual(r.ledger)
        finals.append(abs(float(res[-1])))
        rows.append([dt, float(res[-1]), float(np.max(np.abs(res)))])
    sio.write_csv(os.path.join(out, "energy_balance.csv"), ["dt", "final_residual", "max_abs_residual"], rows)
    worst = max(r[2] for r in rows)
    checks = {"conservation": {"pass": worst <= 1e-10, "max_abs_residual": worst}}
    if worst > 1e-10 and all(f > 0 for f in finals) and len(dts) > 1:
        order = dg.observed_order(dts, finals)
        checks["order"] = {"pass": order >= 0.9, "order": order}
        checks["conservation"]["pass"] = checks["order"]["pass"]
        checks["conservation"]["note"] = "residual is not at round-off; judged by its dt-order"
    return checks


def cmd_consistency(cfg: RunConfig, out: str, args) -> dict:
    sc = cfg.scheme_config()
    exp = cfg.section("experiment")
    phi_spec = dict(exp["phi"])
    phi = presets.build(phi_spec, sc.dim)
    phi = lt.to_cutoff(phi, max(phi.n, *exp["cutoffs"]))  # exact zero padding
    phi_id = ",".join(f"{k}={v}" for k, v in sorted(phi_spec.items()))
    reports = []
    for n in exp["cutoffs"]:
        c = en.ladder_config(sc, n)
        u = presets.discretize(presets.build(cfg.initial(), sc.dim), c.lattice)
        reports.append(dg.consistency_report(u, phi, c.threshold, c.viscosity, phi_id))
    first = reports[0]
    C_hat = abs(first.R1_value) / first.R1_scale if first.R1_scale > 0 else 0.0
    for r in reports:
        r.C_hat = C_hat
    ok_r1 = all(abs(r.R1_value) <= 1.05 * r.R1_bound for r in reports[1:])
    rows = [[r.n, r.phi_id, r.R1_value, r.R1_scale, r.C_hat, r.R1_bound, r.N_value, r.N_bound] for r in reports]
    sio.write_csv(os.path.join(out, "consistency.csv"),
                  ["n", "phi_id", "R1", "R1_scale", "C_hat", "R1_bound", "N", "N_bound"], rows)
    return {
        "R1_bound": {"pass": bool(ok_r1), "C_hat": C_hat, "R1": [r.R1_value for r in reports]},
        "N_bound": {"pass": all(abs(r.N_value) <= r.N_bound for r in reports), "N": [r.N_value for r in reports]},
    }


def cmd_relative_energy(cfg: RunConfig, out: str, args) -> dict:
    sc = cfg.scheme_config()
    exp = cfg.section("experiment")
    seeds = [derive_seed(cfg.seed, i) for i in range(exp["members"])]
    rep = en.weak_strong_experiment(sc, cfg.ensemble_config().ladder, cfg.initial(), exp["n_ref"], seeds,
                                    exp["ref_factor"], exp["samples"], exp["slack"], out_dir=out)
    return {
        "l1_decreasing": {"pass": rep.monotone, "l1_spacetime": {str(k): v for k, v in rep.l1_spacetime.items()}},
        "gronwall": {"pass": all(g.passed for g in rep.gronwall.values()), "c": rep.c,
                     "worst_ratio": {str(n): g.worst_ratio for n, g in rep.gronwall.items()}},
    }


def cmd_info(cfg: RunConfig, out: str, args) -> dict:
    sc = cfg.scheme_config()
    lat = sc.lattice
    info = {
        "version": __version__, "dim": sc.dim, "n": sc.n, "m": sc.threshold, "eps": sc.viscosity,
        "modes_per_axis": lat.width, "grid": lat.grid, "steps": sc.steps, "noise_family": sc.noise.family,
        "K": sc.noise.K, "D0": sc.noise.D0, "D1": sc.noise.D1, "threads": cfg.threads,
    }
    for k, v in info.items():
        print(f"{k:>15}: {v}")
    return {"info": {"pass": True, **info}}


HANDLERS = {
    "run": cmd_run, "ensemble": cmd_ensemble, "converge": cmd_converge, "verify-energy": cmd_verify_energy,
    "consistency": cmd_consistency, "relative-energy": cmd_relative_energy, "info": cmd_info,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    overrides = list(args.set)
    if args.out:
        overrides.append(f"output={args.out}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dry_run:
        sys.stdout.write(serialize(cfg))
        return EXIT_OK
    out = cfg.output
    os.makedirs(out, exist_ok=True)
    sio.write_json(os.path.join(out, "config.json"), cfg.data)
    print(f"manifest: svmeuler {args.command} --config {os.path.join(out, 'config.json')}  # {cfg.run_hash()[:16]}")
    lt.set_threads(cfg.threads)
    summary = {"command": args.command, "config_hash": cfg.run_hash()}
    try:
        checks = HANDLERS[args.command](cfg, out, args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        if exc.state is not None:
            path = os.path.join(out, "abort_state.svmf")
            sio.write_snapshot(exc.state.u, path, exc.state.time)
            print(f"last valid state written to {path}", file=sys.stderr)
        summary.update(checks={}, error=str(exc))
        summary["pass"] = False
        sio.write_json(os.path.join(out, "result.json"), summary)
        return EXIT_NAN
    except SVMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        summary.update(checks={}, error=str(exc))
        summary["pass"] = False
        sio.write_json(os.path.join(out, "result.json"), summary)
        return EXIT_FAIL
    passed = all(c["pass"] for c in checks.values())
    summary["checks"] = checks
    summary["pass"] = passed
    sio.write_json(os.path.join(out, "result.json"), summary)
    for name, c in checks.items():
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {name}")
    return EXIT_OK if passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
