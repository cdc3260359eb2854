"""Command line entry point: ``hyperrom <stage> --config FILE --out DIR``.

Stages build on each other through files in ``--out``::

    fom      training trajectories -> snapshots/, fom_outputs.csv
    pod      snapshots/ -> pod/ basis bundle, pod_eigenvalues.csv
    eim      snapshots/ -> eim/L<L>/<term>/ bundles and selection logs
             (analytic case: the interpolation error study, study.csv)
    offline  pod/ + snapshots/ -> offline/ reduced operators and the
             projected initial states of the test sample
    online   offline/ only -> online.csv, online_timing.json
    bench    the whole pipeline -> errors.csv, timings.csv, curves.csv,
             report.json

Exit status is 0 on success, 2 for an invalid configuration and 3 when a
stage fails; the error message starts with the stage tag.
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import store
from .bench import STUDY_COLUMNS, StageError, _Stage, emit_tables, load_config, run_case
from .fom import FullOrderModel, load_snapshots, save_snapshots, snapshot_harvest
from .foeim import build_eim_systems, evaluate_interpolation_study, save_eim_system, selection_log_rows
from .pod import load_basis, pod_basis, project, save_basis
from .rom import load_operators, offline_assemble, online_solve, save_operators

STAGES = ("fom", "pod", "eim", "offline", "online", "bench")


def _snapshots(cfg, out, model):
    sdir = out / "snapshots"
    if not (sdir / "index.json").exists():
        raise StageError("io", f"no snapshots in {out}; run the fom stage first")
    snaps = load_snapshots(out, model.space, model.mass)
    return snaps.with_initial() if cfg.include_initial else snaps


def cmd_fom(cfg, out):
    if cfg.case == "testcase1d":
        provider = cfg.build()
        snaps = provider.snapshots(cfg.training)
        save_snapshots(out, snaps)
        return
    problem, space = cfg.build()
    model = FullOrderModel(problem, space)
    with _Stage("fom"):
        snaps = snapshot_harvest(problem, space, cfg.training, cfg.time_grid, cfg.newton_config, out, model)
    rows = [(j, float(mu), float(t), float(s)) for j, (mu, tr) in enumerate(zip(cfg.training, snaps.trajectories))
            for t, s in zip(tr.times, tr.outputs)]
    store.write_csv(out / "fom_outputs.csv", ("j", "mu", "t", "s"), rows)
    store.write_csv(out / "fom_timing.csv", ("j", "mu", "wall_time", "newton_mean"),
                    [(j, float(mu), tr.wall_time, float(tr.newton_iters.mean()))
                     for j, (mu, tr) in enumerate(zip(cfg.training, snaps.trajectories))])


def _require_pde(cfg, stage):
    if cfg.case == "testcase1d":
        raise StageError(stage, "the analytic test case has no PDE; use the eim or bench stage")


def cmd_pod(cfg, out):
    _require_pde(cfg, "pod")
    problem, space = cfg.build()
    model = FullOrderModel(problem, space)
    snaps = _snapshots(cfg, out, model)
    with _Stage("pod"):
        basis = pod_basis(snaps, N=max(cfg.N) if cfg.N else None)
    save_basis(out / "pod", basis)
    lam = basis.eigenvalues
    store.write_csv(out / "pod_eigenvalues.csv", ("n", "eigenvalue", "ratio"),
                    [(n + 1, float(v), float(v / lam[0])) for n, v in enumerate(lam)])


def cmd_eim(cfg, out):
    if cfg.case == "testcase1d":
        provider = cfg.build()
        with _Stage("eim"):
            rep = evaluate_interpolation_study(provider, cfg.training, provider.grid, cfg.test_sample(), cfg.M, cfg.L, cfg.P)
        store.write_csv(out / "study.csv", STUDY_COLUMNS, [[r[c] for c in STUDY_COLUMNS] for r in rep.rows])
        return
    problem, space = cfg.build()
    model = FullOrderModel(problem, space)
    snaps = _snapshots(cfg, out, model)
    M = cfg.m_for(max(cfg.N))
    for L in cfg.L:
        with _Stage("eim"):
            systems = build_eim_systems(snaps, problem.nonlinear, L, M, cfg.P)
        for name, system in systems.items():
            d = out / "eim" / f"L{L}" / name
            save_eim_system(d, system)
            store.write_csv(d / "selection_log.csv", ("step", "mode", "point", "cell", "local", "residual", "role"),
                            selection_log_rows(system))


def cmd_offline(cfg, out):
    _require_pde(cfg, "offline")
    problem, space = cfg.build()
    model = FullOrderModel(problem, space)
    snaps = _snapshots(cfg, out, model)
    if not (out / "pod" / "manifest.json").exists():
        raise StageError("io", f"no POD basis in {out}; run the pod stage first")
    N, L = cfg.N[0], cfg.L[0]
    basis = load_basis(out / "pod", model.mass).truncate(N)
    with _Stage("eim"):
        systems = build_eim_systems(snaps, problem.nonlinear, L, cfg.m_for(N))
    with _Stage("offline"):
        ops = offline_assemble(space, problem, basis, systems, model)
        tests = cfg.test_sample()
        alpha0 = np.array([project(basis, model.initial(mu)) for mu in tests])
    save_operators(out / "offline", ops)
    store.write_array(out / "offline" / "test_params.bin", tests)
    store.write_array(out / "offline" / "alpha0.bin", alpha0)


def cmd_online(cfg, out):
    _require_pde(cfg, "online")
    odir = out / "offline"
    if not (odir / "manifest.json").exists():
        raise StageError("io", f"no reduced operators in {out}; run the offline stage first")
    # deliberately no mesh here: only the operator bundle and the formulas
    ops = load_operators(odir)
    tests = store.read_array(odir / "test_params.bin")
    alpha0 = store.read_array(odir / "alpha0.bin")
    problem = cfg.build()[0]
    grid, ncfg = cfg.time_grid, cfg.newton_config
    times, trajs = [], []
    with _Stage("online"):
        for _ in range(max(1, cfg.online_repeats)):
            t0 = time.perf_counter()
            trajs = [online_solve(ops, problem, mu, grid, a0, ncfg) for mu, a0 in zip(tests, alpha0)]
            times.append(time.perf_counter() - t0)
    rows = [(float(tr.mu), float(t), float(s)) for tr in trajs for t, s in zip(tr.times, tr.outputs)]
    store.write_csv(out / "online.csv", ("mu", "t", "s_N"), rows)
    store.write_json(out / "online_timing.json", {
        "N": ops.N, "M": ops.M, "repeats": len(times), "median_time": statistics.median(times), "times": times,
        "newton_mean": float(np.mean([t.newton_iters.mean() for t in trajs])),
    })


def cmd_bench(cfg, out):
    report = run_case(cfg, out)
    emit_tables(report, out)


COMMANDS = {"fom": cmd_fom, "pod": cmd_pod, "eim": cmd_eim, "offline": cmd_offline, "online": cmd_online, "bench": cmd_bench}


def build_parser():
    parser = argparse.ArgumentParser(prog="hyperrom", description="FOEIM-GN reduced-order modelling pipeline")
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=COMMANDS[name].__name__.replace("cmd_", "") + " stage")
        p.add_argument("--config", required=True, type=Path, help="JSON or TOML experiment configuration")
        p.add_argument("--out", required=True, type=Path, help="artifact directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (OSError, ValueError, TypeError) as err:
        print(f"error [config] {err}", file=sys.stderr)
        return 2
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[args.stage](cfg, args.out)
    except StageError as err:
        print(f"error {err}", file=sys.stderr)
        return 3
    except Exception as err:  # anything not tagged yet belongs to the requested stage
        print(f"error [{args.stage}] {type(err).__name__}: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
