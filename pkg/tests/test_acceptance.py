"""Acceptance criteria of the package, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) before
asserting.  The PDE criteria run the desk-scale configurations shipped in
``configs/``; expensive full-order data is shared between criteria.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperrom.bench import interface_geometry, load_config
from hyperrom.fom import FullOrderModel, snapshot_harvest
from hyperrom.foeim import (
    NonlinearSnapshotSet,
    build_eim_systems,
    eim_select,
    error_estimate,
    evaluate_interpolation_study,
    interpolate,
    nearest_parameters,
    nonlinear_pod,
    taylor_snapshots,
)
from hyperrom.pod import SnapshotSet, pod_basis, project
from hyperrom.fom import TimeGrid
from hyperrom.problems import AnalyticProvider, ac_space, allen_cahn, bl_space, buckley_leverett
from hyperrom.rom import GalerkinReference, _rom_functions, compare_errors, offline_assemble, online_solve

from conftest import fd_jacobian, record_criterion

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


# -- analytic study (criteria 1-4) --------------------------------------------

@pytest.fixture(scope="module")
def study():
    out = {}
    for name in ("testcase1d_table1", "testcase1d_table2"):
        cfg = load_config(CONFIGS / f"{name}.json")
        provider = cfg.build()
        rep = evaluate_interpolation_study(provider, cfg.training, provider.grid, cfg.test_sample(), cfg.M, cfg.L, cfg.P)
        out[len(cfg.training)] = rep
    return out


def test_criterion_01_effectivity(study):
    etas = [r["eta_mean"] for rep in study.values() for r in rep.rows]
    first = study[6].table()[(6, 10, 1)]
    ok = all(1.0 <= e <= 3.0 for e in etas) and 6.26e-2 / 3 <= first <= 6.26e-2 * 3
    record_criterion(1, ok, f"eta_mean in [{min(etas):.3f}, {max(etas):.3f}] over {len(etas)} pairs; "
                            f"eps_hat(M=10, L=1, J=6) = {first:.3e} (reference 6.26e-2)")
    assert ok


def test_criterion_02_convergence(study):
    tab = study[12].table()
    start, end = tab[(12, 10, 2)], tab[(12, 100, 2)]
    ratio = end / start
    ok = ratio <= 1e-3 * 30
    record_criterion(2, ok, f"eps_hat(L=2, J=12): M=10 {start:.3e} -> M=100 {end:.3e}, ratio {ratio:.2e} (limit 3e-2)")
    assert ok


@pytest.fixture(scope="module")
def analytic_pod():
    provider = AnalyticProvider()
    S_J = [0.0, 10.0, 1.4, 8.6, 4.2, 5.8]
    nls = taylor_snapshots(provider.snapshots(S_J), nearest_parameters(S_J, 2), provider.nonlinear[0])
    return nls, nonlinear_pod(nls, 105, rank_tol=0.0)


def test_criterion_03_estimator_exactness(analytic_pod):
    # With one reserve function the estimate is exact for g in Psi_{M+1}:
    # g - g_M = e_1 psi_{M+1} and sup|psi_{M+1}| = 1.  With P > 1 the
    # estimate is an upper bound, checked below together with the
    # coefficients e_j themselves.
    _, pod = analytic_pod
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        M = int(rng.integers(5, 80))
        system = eim_select(pod, M, 1, residual_tol=0.0)
        c = rng.normal(size=M + 1)
        g = c @ system.basis
        _, gM = interpolate(system, g[system.interp_points])
        eps = np.max(np.abs(g - gM))
        est, _ = error_estimate(system, g[system.reserve_points], gM[system.reserve_points])
        worst = max(worst, abs(est - eps) / eps)
    bound_ok = True
    for _ in range(20):
        M = int(rng.integers(5, 80))
        system = eim_select(pod, M, 5, residual_tol=0.0)
        c = rng.normal(size=M + 5)
        g = c @ system.basis
        _, gM = interpolate(system, g[system.interp_points])
        eps = np.max(np.abs(g - gM))
        est, e = error_estimate(system, g[system.reserve_points], gM[system.reserve_points])
        bound_ok &= bool(np.allclose(e, c[M:], rtol=1e-8, atol=1e-10 * np.abs(c).max())) and eps <= est * (1 + 1e-12)
    ok = worst < 1e-6 and bound_ok
    record_criterion(3, ok, f"P=1: max |eps_hat - eps|/eps = {worst:.2e} over 20 draws; "
                            f"P=5: e_j exact and eps <= eps_hat: {bound_ok}")
    assert ok


def test_criterion_04_interpolation_properties(analytic_pod):
    nls, pod = analytic_pod
    rng = np.random.default_rng(4)
    system = eim_select(pod, 50, 5, residual_tol=0.0)
    at_points = 0.0
    reproduction = 0.0
    for _ in range(20):
        b = rng.normal(size=system.M) * 10 ** rng.uniform(-3, 3)
        _, gM = interpolate(system, b)
        at_points = max(at_points, np.max(np.abs(gM[system.interp_points] - b)) / (1 + np.abs(b).max()))
        v = rng.normal(size=system.M) @ system.basis[: system.M]
        _, vM = interpolate(system, v[system.interp_points])
        reproduction = max(reproduction, np.max(np.abs(vM - v)) / np.abs(v).max())
    # L = 1 is plain EIM on g(snapshots)
    provider = AnalyticProvider()
    S_J = [0.0, 10.0, 1.4, 8.6, 4.2, 5.8]
    snaps = provider.snapshots(S_J)
    taylor1 = taylor_snapshots(snaps, nearest_parameters(S_J, 1), provider.nonlinear[0])
    plain = NonlinearSnapshotSet(np.exp(snaps.values), taylor1.provenance, "g", taylor1.weights)
    a, b = eim_select(taylor1, 35, 5), eim_select(plain, 35, 5)
    bitwise = np.array_equal(a.basis, b.basis) and np.array_equal(a.points, b.points)
    # V_K subset of V_KL subset of V_KL' for L < L'
    rows = {}
    nested = True
    for L in (1, 2, 3, 6):
        t = taylor_snapshots(snaps, nearest_parameters(S_J, L), provider.nonlinear[0])
        cur = {tuple(p): v for p, v in zip(t.provenance.tolist(), t.values)}
        nested &= all(k in cur and np.array_equal(cur[k], v) for k, v in rows.items())
        rows = cur
    ok = at_points < 1e-10 and reproduction < 1e-9 and bitwise and nested
    record_criterion(4, ok, f"point error {at_points:.1e}, span reproduction {reproduction:.1e}, "
                            f"L=1 bitwise {bitwise}, nested {nested}")
    assert ok


# -- POD oracle (criterion 5) -------------------------------------------------

POD_WORST = []


@settings(max_examples=40)
@given(st.integers(2, 20), st.integers(1, 6), st.integers(10, 40), st.integers(0, 2**31 - 1))
def _pod_oracle(K, r, n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(K, min(r, K))) @ rng.normal(size=(min(r, K), n))
    w = rng.uniform(0.5, 2.0, size=n)
    full = pod_basis(SnapshotSet(X, [(i, 0) for i in range(1, K + 1)], [0.0], inner=w))
    lam = full.eigenvalues
    for N in range(1, full.N + 1):
        V = full.vectors[:, :N]
        resid = X - (X @ (w[:, None] * V)) @ V.T
        gap = abs(np.mean(np.sum(resid**2 * w, axis=1)) - lam[N:].sum()) / lam[0]
        POD_WORST.append(gap)
        assert gap <= 1e-10


def test_criterion_05_pod_oracle():
    POD_WORST.clear()
    try:
        _pod_oracle()
        ok = True
    except AssertionError:
        ok = False
    record_criterion(5, ok, f"max |mean projection error - eigenvalue tail| / lambda_1 = {max(POD_WORST):.1e} "
                            f"over {len(POD_WORST)} (set, N) checks on random rank-deficient sets")
    assert ok


# -- desk-scale PDE data (criteria 6-10) ---------------------------------------

_DESK = {}


def desk(name):
    """Training snapshots and test-sample FOM trajectories of a config."""
    if name not in _DESK:
        cfg = load_config(CONFIGS / f"{name}.json")
        problem, space = cfg.build()
        model = FullOrderModel(problem, space)
        grid, ncfg = cfg.time_grid, cfg.newton_config
        snaps = snapshot_harvest(problem, space, cfg.training, grid, ncfg, model=model)
        tests = cfg.test_sample()
        foms = [model.solve(mu, grid, ncfg) for mu in tests]
        _DESK[name] = dict(cfg=cfg, problem=problem, space=space, model=model, grid=grid, snaps=snaps,
                           tests=tests, foms=foms, basis=pod_basis(snaps, N=max(cfg.N)), roms={})
    return _DESK[name]


def foeim_sweep(d, N, L, M):
    key = ("foeim", N, L, M)
    if key not in d["roms"]:
        basis = d["basis"].truncate(N)
        systems = build_eim_systems(d["snaps"], d["problem"].nonlinear, L, M)
        ops = offline_assemble(d["space"], d["problem"], basis, systems, d["model"])
        a0 = [project(basis, f.states[0]) for f in d["foms"]]
        trajs = [online_solve(ops, d["problem"], mu, d["grid"], a, d["cfg"].newton_config) for mu, a in zip(d["tests"], a0)]
        err = float(np.mean([compare_errors(f, r, basis).mean_u for f, r in zip(d["foms"], trajs)]))
        d["roms"][key] = dict(ops=ops, basis=basis, a0=a0, trajs=trajs, eps_u=err)
    return d["roms"][key]


def gn_sweep(d, N):
    key = ("gn", N)
    if key not in d["roms"]:
        basis = d["basis"].truncate(N)
        gn = GalerkinReference(d["space"], d["problem"], basis, d["model"])
        a0 = [project(basis, f.states[0]) for f in d["foms"]]
        trajs = [gn.solve(mu, d["grid"], a, d["cfg"].newton_config) for mu, a in zip(d["tests"], a0)]
        err = float(np.mean([compare_errors(f, r, basis).mean_u for f, r in zip(d["foms"], trajs)]))
        d["roms"][key] = dict(gn=gn, basis=basis, a0=a0, trajs=trajs, eps_u=err)
    return d["roms"][key]


def test_criterion_06_training_reproduction():
    d = desk("bl_desk")
    # t_0 fields are added so that the projected initial state is exact too
    pod_set = d["snaps"].with_initial()
    basis = pod_basis(pod_set)
    systems = build_eim_systems(pod_set, d["problem"].nonlinear, 1, None)
    ops = offline_assemble(d["space"], d["problem"], basis, systems, d["model"])
    worst = 0.0
    for mu, fom in zip(d["cfg"].training, d["snaps"].trajectories):
        rom = online_solve(ops, d["problem"], mu, d["grid"], project(basis, fom.states[0]))
        worst = max(worst, compare_errors(fom, rom, basis).eps_u.max())
    ok = worst < 1e-6
    record_criterion(6, ok, f"BL 16x16, N={basis.N} (rank), M={ops.M}: max per-step L2 error {worst:.2e} "
                            f"over {len(d['cfg'].training)} training parameters (limit 1e-6)")
    assert ok


def test_criterion_07_accuracy_vs_gn():
    lines, ok = [], True
    for name in ("bl_desk", "ac_desk"):
        d = desk(name)
        cfg = d["cfg"]
        ratios = []
        for N in cfg.N:
            gn = gn_sweep(d, N)["eps_u"]
            l3 = foeim_sweep(d, N, 3, cfg.m_for(N))["eps_u"]
            ratios.append(l3 / gn)
        Nmax = max(cfg.N)
        l1 = foeim_sweep(d, Nmax, 1, cfg.m_for(Nmax))["eps_u"]
        l3 = foeim_sweep(d, Nmax, 3, cfg.m_for(Nmax))["eps_u"]
        case_ok = all(r <= 2.0 for r in ratios) and l3 <= l1
        ok &= case_ok
        lines.append(f"{name}: L3/GN ratios " + ", ".join(f"N={n} {r:.2f}" for n, r in zip(cfg.N, ratios))
                     + f"; N={Nmax} L3 {l3:.3e} vs L1 {l1:.3e}")
    record_criterion(7, ok, " | ".join(lines))
    assert ok


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def test_criterion_08_online_cost_independent_of_mesh():
    N, L = 10, 3
    coarse, fine = desk("bl_desk"), desk("bl_desk_fine")
    M = coarse["cfg"].m_for(N)
    runs = {}
    for tag, d in (("16", coarse), ("32", fine)):
        rom = foeim_sweep(d, N, L, M)
        gn = gn_sweep(d, N)
        ncfg = d["cfg"].newton_config

        def online(d=d, rom=rom, ncfg=ncfg):
            for mu, a in zip(d["tests"], rom["a0"]):
                online_solve(rom["ops"], d["problem"], mu, d["grid"], a, ncfg)

        def reference(d=d, gn=gn, ncfg=ncfg):
            for mu, a in zip(d["tests"], gn["a0"]):
                gn["gn"].solve(mu, d["grid"], a, ncfg)

        runs[tag] = dict(online=online, reference=reference, fom=sum(f.wall_time for f in d["foms"]))
    # interleave the two meshes so that machine drift hits both alike
    samples = {"16": [], "32": []}
    for _ in range(7):
        for tag in ("16", "32"):
            samples[tag].append(_median_time(runs[tag]["online"], 1))
    t16, t32 = np.median(samples["16"]), np.median(samples["32"])
    gn16 = _median_time(runs["16"]["reference"], 3)
    gn32 = _median_time(runs["32"]["reference"], 3)
    change = abs(t32 / t16 - 1)
    fom_growth = runs["32"]["fom"] / runs["16"]["fom"]
    speedup = runs["16"]["fom"] / t16
    gn_ratio = gn32 / t32
    ok = change < 0.25 and fom_growth >= 3 and speedup > 10 and gn_ratio > 20
    record_criterion(8, ok, f"N={N}, M={M}, L={L}: online {t16:.3f}s -> {t32:.3f}s ({100 * change:.0f}% change); "
                            f"FOM x{fom_growth:.1f}; speedup over FOM {speedup:.0f}x at 16x16; "
                            f"GN/FOEIM {gn16 / t16:.1f}x at 16x16, {gn_ratio:.1f}x at 32x32")
    assert ok


def _small_case(kind):
    if kind == "bl":
        problem, space, training, grid = buckley_leverett(), bl_space(8), [0.03, 0.06, 0.1], TimeGrid(0.1, 4)
    else:
        problem, space, training, grid = allen_cahn(), ac_space(8), [0.25, 0.3, 0.35], TimeGrid(4e-4, 4)
    model = FullOrderModel(problem, space)
    snaps = snapshot_harvest(problem, space, training, grid, model=model)
    basis = pod_basis(snaps, N=6)
    ops = offline_assemble(space, problem, basis, build_eim_systems(snaps, problem.nonlinear, 2, 10), model)
    return problem, space, model, snaps, basis, ops, grid


def _rel(J, fd):
    return float(np.linalg.norm(J - fd) / np.linalg.norm(J))


def test_criterion_09_jacobians():
    rng = np.random.default_rng(9)
    worst, parts = 0.0, []
    for kind in ("bl", "ac"):
        problem, space, model, snaps, basis, ops, grid = _small_case(kind)
        mu = float(snaps.params[1, 0])
        u_prev = snaps.values[snaps.index(2, 1)]
        u = u_prev + 1e-2 * rng.normal(size=u_prev.size)
        K = model.operator(mu)
        e_fom = _rel(model._jacobian(u, K, grid.dt).toarray(),
                     fd_jacobian(lambda x: model.residual(x, u_prev, mu, grid.dt), u, 1e-6))
        a_prev = project(basis, u_prev)
        a = a_prev + 1e-2 * rng.normal(size=basis.N)
        Kr = ops.linear_part(problem, mu, grid.dt)
        res, jac = _rom_functions(ops, problem, Kr, ops.l_N + ops.M_N @ a_prev / grid.dt)
        e_rom = _rel(jac(a), fd_jacobian(res, a, 1e-6))
        gn = GalerkinReference(space, problem, basis, model)
        e_gn = _rel(gn.linear_part(mu, grid.dt) + gn.nonlinear(a, True)[1],
                    fd_jacobian(lambda x: gn.residual(x, a_prev, mu, grid.dt), a, 1e-6))
        worst = max(worst, e_fom, e_rom, e_gn)
        parts.append(f"{kind}: FOM {e_fom:.1e}, FOEIM {e_rom:.1e}, GN {e_gn:.1e}")
    ok = worst < 1e-5
    record_criterion(9, ok, "8x8 meshes, relative error vs central FD: " + "; ".join(parts))
    assert ok


def _geometry_series(space, states):
    geo = [interface_geometry(space, u) for u in states]
    return np.array([g[0] for g in geo]), np.array([g[2] for g in geo])


def _dynamics_ok(area, asph):
    area_ok = bool(np.all(np.diff(area[10:]) <= 1e-12 * area[0]))
    running_min = np.minimum.accumulate(asph)
    asph_ok = bool(np.all(asph[1:] <= 1.05 * running_min[:-1])) and asph[-1] < asph[0]
    return area_ok, asph_ok


def test_criterion_10_allen_cahn_dynamics():
    d = desk("ac_desk")
    j = int(np.argmin(np.abs(d["tests"] - 0.34)))
    area, asph = _geometry_series(d["space"], d["foms"][j].states)
    fa, fs = _dynamics_ok(area, asph)
    rom = foeim_sweep(d, 20, 3, d["cfg"].m_for(20))
    lifted = rom["trajs"][j].alphas @ rom["basis"].vectors.T
    r_area, r_asph = _geometry_series(d["space"], lifted)
    ra, rs = _dynamics_ok(r_area, r_asph)
    ok = fa and fs and ra and rs
    record_criterion(10, ok, f"mu=0.34, 32x32: FOM area {area[0]:.3f} -> {area[-1]:.3f} (nonincreasing {fa}), "
                             f"asphericity {asph[0]:.3f} -> {asph[-1]:.3f} (monotone within 5% {fs}); "
                             f"FOEIM N=20 L=3: area {ra}, asphericity {rs}")
    assert ok


# -- desk-scale regression checks (not criteria) --------------------------------

def test_bl_test_point_within_ten_gn():
    d = desk("bl_desk")
    j = int(np.argmin(np.abs(d["tests"] - 0.065)))
    rom = foeim_sweep(d, 20, 3, 40)
    gn = gn_sweep(d, 20)
    e_rom = compare_errors(d["foms"][j], rom["trajs"][j], rom["basis"]).mean_u
    e_gn = compare_errors(d["foms"][j], gn["trajs"][j], gn["basis"]).mean_u
    assert e_rom <= 10 * e_gn


def test_bl_errors_decrease_with_N():
    d = desk("bl_desk")
    errs = [foeim_sweep(d, N, 3, 2 * N)["eps_u"] for N in (5, 10, 20)]
    # recorded on the reference run
    np.testing.assert_allclose(errs, [1.3859e-2, 4.3654e-3, 1.0240e-3], rtol=1e-3)
    assert errs[0] > errs[1] > errs[2]


@pytest.mark.parametrize("name", ["bl_desk", "ac_desk"])
def test_errors_nonincreasing_in_N_within_factor_3(name):
    d = desk(name)
    cfg = d["cfg"]
    for series in ([gn_sweep(d, N)["eps_u"] for N in cfg.N],
                   [foeim_sweep(d, N, 3, cfg.m_for(N))["eps_u"] for N in cfg.N]):
        assert all(b <= 3 * a for a, b in zip(series, series[1:]))


@pytest.mark.parametrize("L", [1, 3])
def test_bl_foeim_approaches_gn_as_M_grows(L):
    d = desk("bl_desk")
    N = 10
    gn = gn_sweep(d, N)["eps_u"]
    errs = [foeim_sweep(d, N, L, M)["eps_u"] for M in (N, 2 * N, 4 * N)]
    assert errs[-1] <= 2 * gn
    assert errs[1] < errs[0]
