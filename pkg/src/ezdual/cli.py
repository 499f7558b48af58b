"""Command-line entry point: ``ezdual {check,solve,verify,transforms}``.

Exit codes: 0 pass, 1 runtime or solver failure, 2 inapplicable parameters,
64 configuration error.  Artifacts contain no wall-clock data, so identical
configurations and seeds produce byte-identical files; stage timings go to
``timings.jsonl``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import bsde, conjugates, duality
from .config import RunConfig, load_config_file
from .errors import ConfigError, EZDualError, ModelError, RegimeError
from .market import ConstantModel, check_model, check_regime_duality, derive_coefficients

EXIT_OK, EXIT_FAIL, EXIT_INAPPLICABLE, EXIT_CONFIG = 0, 1, 2, 64


def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(f"{float(v):.17g}")
    return v


class Artifacts:
    """Writes metadata and timing records for one command."""

    def __init__(self, out_dir):
        self.out = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.meta = []
        self.times = []

    def path(self, name):
        return os.path.join(self.out, name)

    def stage(self, name, seconds=None, **flags):
        self.meta.append({"stage": name, **{k: _num(v) for k, v in flags.items()}})
        if seconds is not None:
            self.times.append({"stage": name, "wall_seconds": seconds})

    def close(self):
        with open(self.path("metadata.jsonl"), "w") as fh:
            for rec in self.meta:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(self.path("timings.jsonl"), "w") as fh:
            for rec in self.times:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _fmt(v):
    return f"{float(v):.17g}"


def _regime_gate(cfg, art):
    rep = check_regime_duality(cfg.preference)
    art.stage("regime", regime=rep.regime, applicable=rep.applicable)
    print(f"regime: {rep.label}")
    return rep


def cmd_check(cfg: RunConfig, art: Artifacts):
    rep = _regime_gate(cfg, art)
    if not rep.applicable:
        return EXIT_INAPPLICABLE
    mrep = check_model(cfg.model, cfg.preference)
    table = mrep.table()
    print(table)
    with open(art.path("check_report.txt"), "w") as fh:
        fh.write(f"regime: {rep.label}\n{table}\n")
    art.stage("check", accepted=mrep.accepted, **{c.name: c.holds for c in mrep.conditions})
    return EXIT_OK if mrep.accepted else EXIT_INAPPLICABLE


def _solve(cfg, art):
    t0 = time.perf_counter()
    p, model = cfg.preference, cfg.model
    if isinstance(model, ConstantModel):
        vs = bsde.solve_constant(p, model, cfg.T, cfg.K)
    else:
        vs = bsde.solve_pde(p, model, cfg.T, cfg.K, cfg.nodes, override=cfg.override, tol=cfg.tol)
    art.stage("solve", time.perf_counter() - t0, scheme=vs.meta["scheme"], K=cfg.K, nodes=vs.x.size,
              clamped=bool(vs.meta.get("clamped", False)))
    return vs


def cmd_solve(cfg: RunConfig, art: Artifacts):
    rep = _regime_gate(cfg, art)
    if not rep.applicable:
        return EXIT_INAPPLICABLE
    vs = _solve(cfg, art)
    vs.to_csv(art.path("value_surface.csv"))
    dc = derive_coefficients(cfg.model, cfg.preference, vs.x)
    with open(art.path("coefficients.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "r", "h", "M", "Theta"])
        for j in range(vs.x.size):
            w.writerow([_fmt(dc.x[j]), _fmt(dc.r[j]), _fmt(dc.h[j]), _fmt(dc.M[j]), _fmt(np.trace(dc.Theta[j]))])
    ok = True
    if cfg.preference.theta < 0:
        t0 = time.perf_counter()
        br = bsde.verify_y_bounds(vs, cfg.model, cfg.preference, mc_paths=cfg.N, seed=cfg.seed)
        art.stage("bounds", time.perf_counter() - t0, Y0=br.Y0, lower=br.lower, lower_se=br.lower_se,
                  upper=br.upper, lower_ok=br.lower_ok, upper_ok=br.upper_ok, surface_ok=br.upper_surface_ok)
        ok = br.passed
        print(f"Y(0, x0) = {_fmt(br.Y0)}  lower = {_fmt(br.lower)} +- {_fmt(br.lower_se)}  upper = {_fmt(br.upper)}")
    else:
        print(f"Y(0, x0) = {_fmt(vs.value_at(0.0, cfg.model.x0))}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify(cfg: RunConfig, art: Artifacts):
    rep = _regime_gate(cfg, art)
    if not rep.applicable:
        return EXIT_INAPPLICABLE
    if not cfg.override:
        mrep = check_model(cfg.model, cfg.preference)
        art.stage("check", accepted=mrep.accepted)
        if not mrep.accepted:
            print(mrep.table())
            return EXIT_INAPPLICABLE
    stages = []
    report = duality.verify_duality(
        cfg.model, cfg.preference, w0=cfg.w0, N=cfg.N, K=cfg.K, T=cfg.T, seed=cfg.seed, batches=cfg.batches,
        nodes=cfg.nodes, threads=cfg.threads, lagrange_points=cfg.lagrange_points, override=cfg.override,
        stages=stages,
    )
    for name, secs in stages:
        art.stage(name, secs)
    art.stage("report", passed=report.passed, **report.flags)
    text = report.to_text()
    with open(art.path("duality_report.txt"), "w") as fh:
        fh.write(text)
    with open(art.path("duality_report.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        for line in text.splitlines():
            k, v = line.split(" = ", 1)
            w.writerow([k, v])
    print(text, end="")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_transforms(cfg: RunConfig, art: Artifacts):
    p = cfg.preference
    if not p.regime().dual:
        msg = ("gamma*psi <= 1 or gamma > 1 > psi: the aggregator is not convex in the utility argument, "
               "so the conjugacy chain does not apply")
        print(msg)
        art.stage("transforms", applicable=False)
        return EXIT_INAPPLICABLE
    t0 = time.perf_counter()
    res = conjugates.fenchel_chain_residuals(p, n=1000, seed=cfg.seed)
    ok = all(v <= 1e-5 for v, _ in res.values())
    with open(art.path("transforms.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link", "max_relative_residual", "hit_search_boundary"])
        for k, (v, b) in res.items():
            w.writerow([k, _fmt(v), str(b).lower()])
            print(f"{k:<18} {_fmt(v)}")
    art.stage("transforms", time.perf_counter() - t0, passed=ok, **{k: v for k, (v, _) in res.items()})
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"check": cmd_check, "solve": cmd_solve, "verify": cmd_verify, "transforms": cmd_transforms}


def build_parser():
    ap = argparse.ArgumentParser(prog="ezdual", description="Epstein-Zin primal/dual solver and verifier.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config_file(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            cfg.threads = args.threads
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    art = Artifacts(args.out or cfg.out_dir or "out")
    try:
        code = COMMANDS[args.command](cfg, art)
    except (RegimeError, ModelError) as exc:
        print(f"inapplicable: {exc}", file=sys.stderr)
        code = EXIT_INAPPLICABLE
    except EZDualError as exc:
        print(f"error: {exc}", file=sys.stderr)
        art.stage("error", message=str(exc))
        code = EXIT_FAIL
    art.close()
    return code


if __name__ == "__main__":
    sys.exit(main())
