"""Configuration-driven experiments and their tables.

A configuration is a JSON or TOML file with these keys (defaults in
parentheses):

``case``
    ``"testcase1d"``, ``"buckley_leverett"`` or ``"allen_cahn"``.
``mesh``
    ``{"cells": int, "degree": int (2)}`` for the PDE cases,
    ``{"elements": int (1000)}`` for the analytic test case.
``grid``
    ``{"T": float, "I": int}``.
``training``
    Explicit list of training parameters.
``test``
    ``{"count": int}``; an inclusive equispaced sample of the domain.
``N``, ``L``
    Lists of basis sizes and Taylor neighbourhood sizes.
``M``
    ``{"rule": "multiple" | "absolute", "value": number}``, or a list of
    absolute values for the analytic study.
``P`` (5)
    Reserve functions for the interpolation error estimator.
``newton`` ({})
    Overrides of :class:`~hyperrom.newton.NewtonConfig` fields.
``problem`` ({})
    Problem constants, e.g. ``{"eps": 0.015, "exponent": 2}``.
``include_initial`` (false)
    Add the initial fields to the POD snapshot set.
``gn_reference`` (true)
    Also run the Galerkin-Newton reference at every N.
``online_repeats`` (3)
    Online sweeps timed per configuration; the median is reported.
``seed`` (0)
    Reserved; nothing in the pipeline is random.
"""

from __future__ import annotations

import json
import platform
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import store
from .fom import FullOrderModel, TimeGrid, save_snapshots, snapshot_harvest
from .foeim import build_eim_systems, evaluate_interpolation_study
from .mesh_fem import trace_at_points
from .newton import NewtonConfig
from .pod import pod_basis, project
from .problems import make_case, uniform_sample
from .rom import GalerkinReference, compare_errors, offline_assemble, online_solve

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

__all__ = [
    "ExperimentConfig",
    "BenchReport",
    "StageError",
    "ERROR_COLUMNS",
    "TIMING_COLUMNS",
    "STUDY_COLUMNS",
    "CURVE_COLUMNS",
    "load_config",
    "run_case",
    "emit_tables",
    "snapshot_field_dump",
    "interface_geometry",
]

CASES = ("testcase1d", "buckley_leverett", "allen_cahn")
ERROR_COLUMNS = ("method", "N", "M", "L", "eps_u", "eps_s", "newton_mean")
TIMING_COLUMNS = ("method", "N", "M", "L", "offline_time", "online_time", "fom_time", "speedup")
STUDY_COLUMNS = ("J", "M", "L", "P", "eps_mean", "eps_hat_mean", "eta_mean", "cond_B")
CURVE_COLUMNS = ("method", "L", "M", "N", "metric", "value")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    case: str
    grid: dict
    training: list
    mesh: dict = field(default_factory=dict)
    test: dict = field(default_factory=lambda: {"count": 11})
    N: list = field(default_factory=list)
    M: object = field(default_factory=lambda: {"rule": "multiple", "value": 2})
    L: list = field(default_factory=lambda: [1])
    P: int = 5
    newton: dict = field(default_factory=dict)
    problem: dict = field(default_factory=dict)
    include_initial: bool = False
    gn_reference: bool = True
    online_repeats: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}; expected one of {CASES}")
        if not self.training:
            raise ValueError("training sample must be nonempty")
        if not self.L or min(self.L) < 1 or max(self.L) > len(self.training):
            raise ValueError("L must be a nonempty list of values in [1, J]")
        if set(self.grid) != {"T", "I"}:
            raise ValueError("grid needs exactly the keys T and I")
        lo, hi = self.domain
        if any(not lo <= mu <= hi for mu in self.training):
            raise ValueError(f"training parameters must lie in [{lo}, {hi}]")
        if self.case == "testcase1d":
            if not isinstance(self.M, list) or not self.M or min(self.M) < 1:
                raise ValueError("the analytic study needs M as a nonempty list of positive ints")
        else:
            if not isinstance(self.M, dict) or self.M.get("rule") not in ("multiple", "absolute"):
                raise ValueError('M must be {"rule": "multiple" | "absolute", "value": number}')
            if any(self.m_for(n) < 1 for n in self.N):
                raise ValueError("M must be at least 1 per nonlinearity")
        NewtonConfig(**self.newton)  # rejects unknown keys

    @property
    def domain(self):
        return {"testcase1d": (0.0, 10.0), "buckley_leverett": (0.03, 0.1), "allen_cahn": (0.25, 0.35)}[self.case]

    @property
    def time_grid(self):
        return TimeGrid(float(self.grid["T"]), int(self.grid["I"]))

    @property
    def newton_config(self):
        return NewtonConfig(**self.newton)

    def m_for(self, N):
        if self.M["rule"] == "multiple":
            return int(round(self.M["value"] * N))
        return int(self.M["value"])

    def test_sample(self):
        return uniform_sample(*self.domain, int(self.test["count"]))

    def build(self):
        """``(problem, space)`` for a PDE case, the provider for the 1D case."""
        opts = dict(self.mesh)
        opts.update(self.problem)
        if self.case == "testcase1d":
            opts.update(T=self.grid["T"], I=self.grid["I"])
        return make_case(self.case, **opts)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown configuration keys: {sorted(extra)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".toml":
        data = tomllib.loads(raw.decode("utf-8"))
    else:
        data = json.loads(raw.decode("utf-8"))
    return ExperimentConfig.from_dict(data)


@dataclass
class BenchReport:
    case: str
    rows: list = field(default_factory=list)
    study: list = field(default_factory=list)
    machine: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def select(self, **match):
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]


def _machine():
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
    }


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, kind, err, tb):
        if err is not None and not isinstance(err, StageError) and isinstance(err, Exception):
            raise StageError(self.name, f"{type(err).__name__}: {err}") from err
        return False


def _run_study(cfg: ExperimentConfig, out):
    provider = cfg.build()
    with _Stage("eim"):
        report = evaluate_interpolation_study(
            provider, cfg.training, provider.grid, cfg.test_sample(), cfg.M, cfg.L, cfg.P
        )
    return BenchReport(cfg.case, [], report.rows, _machine(), cfg.to_dict())


def _sweep_online(ops, problem, grid, tests, alpha0s, newton_cfg, repeats):
    times, trajs = [], None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        trajs = [online_solve(ops, problem, mu, grid, a0, newton_cfg) for mu, a0 in zip(tests, alpha0s)]
        times.append(time.perf_counter() - t0)
    return trajs, statistics.median(times)


def _sweep_gn(gn, grid, tests, alpha0s, newton_cfg, repeats):
    times, trajs = [], None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        trajs = [gn.solve(mu, grid, a0, newton_cfg) for mu, a0 in zip(tests, alpha0s)]
        times.append(time.perf_counter() - t0)
    return trajs, statistics.median(times)


def _mean_errors(fom_trajs, rom_trajs, basis):
    errs = [compare_errors(f, r, basis) for f, r in zip(fom_trajs, rom_trajs)]
    return float(np.mean([e.mean_u for e in errs])), float(np.mean([e.mean_s for e in errs]))


def run_case(cfg: ExperimentConfig, out=None) -> BenchReport:
    """Run the full pipeline of a configuration.

    PDE cases: FOM on the training and test samples, POD, FOEIM for every
    (N, L), offline assembly, timed online sweeps, errors against the FOM,
    and optionally the GN reference.  Artifacts are written under ``out``
    as they are produced, so a failing stage leaves earlier ones in place.
    """
    out = None if out is None else Path(out)
    if cfg.case == "testcase1d":
        return _run_study(cfg, out)
    problem, space = cfg.build()
    grid, ncfg = cfg.time_grid, cfg.newton_config
    tests = cfg.test_sample()
    with _Stage("fom"):
        model = FullOrderModel(problem, space)
        snaps = snapshot_harvest(problem, space, cfg.training, grid, ncfg, model=model)
        if out is not None:
            save_snapshots(out, snaps)
        fom_trajs = [model.solve(mu, grid, ncfg) for mu in tests]
        fom_time = float(sum(t.wall_time for t in fom_trajs))
    with _Stage("pod"):
        pod_set = snaps.with_initial() if cfg.include_initial else snaps
        full = pod_basis(pod_set, N=max(cfg.N) if cfg.N else None)
    rows = []
    for N in cfg.N:
        basis = full.truncate(N)
        alpha0s = [project(basis, f.states[0]) for f in fom_trajs]
        for L in cfg.L:
            M = cfg.m_for(N)
            t0 = time.perf_counter()
            with _Stage("eim"):
                systems = build_eim_systems(pod_set, problem.nonlinear, L, M)
            with _Stage("offline"):
                ops = offline_assemble(space, problem, basis, systems, model)
            offline_time = time.perf_counter() - t0
            with _Stage("online"):
                trajs, online_time = _sweep_online(ops, problem, grid, tests, alpha0s, ncfg, cfg.online_repeats)
            eu, es = _mean_errors(fom_trajs, trajs, basis)
            rows.append(_row("foeim", N, M, L, eu, es, trajs, offline_time, online_time, fom_time))
        if cfg.gn_reference:
            t0 = time.perf_counter()
            with _Stage("offline"):
                gn = GalerkinReference(space, problem, basis, model)
            offline_time = time.perf_counter() - t0
            with _Stage("online"):
                trajs, online_time = _sweep_gn(gn, grid, tests, alpha0s, ncfg, cfg.online_repeats)
            eu, es = _mean_errors(fom_trajs, trajs, basis)
            rows.append(_row("gn", N, 0, 0, eu, es, trajs, offline_time, online_time, fom_time))
    report = BenchReport(cfg.case, rows, [], _machine(), cfg.to_dict())
    return report


def _row(method, N, M, L, eu, es, trajs, offline_time, online_time, fom_time):
    return {
        "method": method,
        "N": int(N),
        "M": int(M),
        "L": int(L),
        "eps_u": eu,
        "eps_s": es,
        "newton_mean": float(np.mean([t.newton_iters.mean() for t in trajs])),
        "offline_time": float(offline_time),
        "online_time": float(online_time),
        "fom_time": float(fom_time),
        "speedup": float(fom_time / online_time),
    }


def emit_tables(report: BenchReport, out, formats=("csv", "json")):
    """Write the report; returns the paths written.

    CSV: ``errors.csv`` (deterministic numbers), ``timings.csv``,
    ``curves.csv`` (long format for error-vs-N plots) and, for the
    analytic case, ``study.csv``.  JSON: ``report.json``.
    """
    out = Path(out)
    paths = []
    if "csv" in formats:
        specs = [("errors.csv", ERROR_COLUMNS, report.rows), ("timings.csv", TIMING_COLUMNS, report.rows)]
        if report.case == "testcase1d":
            specs.append(("study.csv", STUDY_COLUMNS, report.study))
        for name, cols, rows in specs:
            store.write_csv(out / name, cols, [[r[c] for c in cols] for r in rows])
            paths.append(out / name)
        curves = [
            (r["method"], r["L"], r["M"], r["N"], metric, r[metric])
            for r in sorted(report.rows, key=lambda r: (r["method"], r["L"], r["N"]))
            for metric in ("eps_u", "eps_s")
        ]
        store.write_csv(out / "curves.csv", CURVE_COLUMNS, curves)
        paths.append(out / "curves.csv")
    if "json" in formats:
        store.write_json(out / "report.json", report.to_dict())
        paths.append(out / "report.json")
    return paths


def load_report(path) -> BenchReport:
    return BenchReport.from_dict(store.read_json(path))


def plotting_grid(space, resolution=None):
    """Uniform tensor grid; the default coincides with the nodal points."""
    res = space.degree * np.asarray(space.mesh.cells_per_axis) + 1 if resolution is None else np.broadcast_to(resolution, (space.dim,))
    axes = [np.linspace(lo, hi, int(n)) for (lo, hi), n in zip(space.mesh.bounds, res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel(order="F") for m in mesh])


def snapshot_field_dump(space, states, steps, path, resolution=None, fmt="csv"):
    """Field values on a uniform grid at selected time steps.

    Writes ``field_step<i>.csv`` (columns x[, y], u) or ``.bin`` (array of
    rows ``(x[, y], u)``) for every step; returns the paths.
    """
    states = np.atleast_2d(states)
    steps = [int(s) for s in steps]
    if any(not 0 <= s < states.shape[0] for s in steps):
        raise IndexError(f"steps must lie in [0, {states.shape[0] - 1}]")
    pts = plotting_grid(space, resolution)
    trace = trace_at_points(space, pts)
    cols = ("x", "y")[: space.dim] + ("u",)
    paths = []
    for s in steps:
        vals = trace.evaluate(states[s])
        table = np.column_stack([pts, vals])
        if fmt == "csv":
            p = Path(path) / f"field_step{s:04d}.csv"
            store.write_csv(p, cols, table.tolist())
        elif fmt == "bin":
            p = Path(path) / f"field_step{s:04d}.bin"
            store.write_array(p, table)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        paths.append(p)
    return paths


def interface_geometry(space, coeffs, n_rays=180, samples=400):
    """Area, centroid and asphericity of the region where u > 0.

    The area and centroid come from quadrature of the indicator of u > 0.
    Radii of the zero level set are found along ``n_rays`` rays from the
    centroid (first sign change, linearly interpolated); asphericity is the
    ratio of the largest to the smallest radius.
    """
    uq = space.eval_quad(coeffs)
    inside = (uq > 0).astype(float)
    w = space.quad_weights * inside
    area = float(w.sum())
    if area == 0:
        return area, None, np.nan
    centre = (space.quad_points * w[:, None]).sum(axis=0) / area
    lo = np.array([b[0] for b in space.mesh.bounds])
    hi = np.array([b[1] for b in space.mesh.bounds])
    theta = np.linspace(0, 2 * np.pi, n_rays, endpoint=False)
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    # longest ray that stays inside the box, per direction
    with np.errstate(divide="ignore"):
        lim = np.where(dirs > 0, (hi - centre) / dirs, np.where(dirs < 0, (lo - centre) / dirs, np.inf)).min(axis=1)
    s = np.linspace(0, 1, samples)
    pts = centre + (lim[:, None, None] * s[None, :, None]) * dirs[:, None, :]
    pts = np.clip(pts.reshape(-1, 2), lo, hi)
    vals = trace_at_points(space, pts).evaluate(coeffs).reshape(n_rays, samples)
    radii = np.full(n_rays, np.nan)
    for k in range(n_rays):
        neg = np.flatnonzero(vals[k] <= 0)
        if neg.size == 0 or neg[0] == 0:
            continue
        j = neg[0]
        a, b = vals[k, j - 1], vals[k, j]
        frac = a / (a - b)
        radii[k] = lim[k] * (s[j - 1] + frac * (s[j] - s[j - 1]))
    ok = radii[np.isfinite(radii)]
    asph = float(ok.max() / ok.min()) if ok.size else np.nan
    return area, centre, asph
