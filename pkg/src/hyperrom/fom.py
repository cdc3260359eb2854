"""Backward-Euler / Newton finite element solver and snapshot generation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import store
from .mesh_fem import FESpace, assemble_linear, assemble_nonlinear, project_l2
from .newton import NewtonConfig, NewtonDiverged, newton
from .pod import SnapshotSet

__all__ = [
    "AffineTerm",
    "Nonlinearity",
    "ProblemDef",
    "TimeGrid",
    "Trajectory",
    "FullOrderModel",
    "fom_step",
    "fom_solve",
    "snapshot_harvest",
    "save_snapshots",
    "load_snapshots",
]


@dataclass(frozen=True)
class AffineTerm:
    """``theta(mu) * a^q(w, v)`` with a^q the mass or stiffness form."""

    theta: Callable
    operator: str  # "mass" | "stiffness"

    def __post_init__(self):
        if self.operator not in ("mass", "stiffness"):
            raise ValueError(f"unknown affine operator {self.operator!r}")


@dataclass(frozen=True)
class Nonlinearity:
    """One nonlinear integrand, ``int value(u) v`` or ``int value(u) dv/dx_d``.

    Any sign of the weak form is folded into ``value``/``deriv``.
    """

    name: str
    value: Callable
    deriv: Callable
    direction: int | None = None


@dataclass(frozen=True)
class ProblemDef:
    """Weak-form ingredients of ``m(u_t, v) + a(u, v; mu) = l(v)``.

    The output functional is the domain average of u.
    """

    name: str
    affine: tuple
    nonlinear: tuple
    initial: Callable  # initial(points, mu) -> values
    param_range: tuple
    bc_kind: str = "neumann"
    source: Callable | None = None  # source(points, mu) -> values

    def thetas(self, mu):
        th = np.array([float(t.theta(mu)) for t in self.affine])
        if not np.all(np.isfinite(th)):
            raise ValueError(f"non-finite affine coefficient at mu={mu}")
        return th

    def term(self, name):
        for t in self.nonlinear:
            if t.name == name:
                return t
        raise KeyError(name)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    I: int

    def __post_init__(self):
        if self.I < 1 or not self.T > 0:
            raise ValueError("need T > 0 and I >= 1")

    @property
    def dt(self):
        return self.T / self.I

    @property
    def times(self):
        t = np.arange(self.I + 1) * self.dt
        t[-1] = self.T
        return t


@dataclass
class Trajectory:
    """States at t_0..t_I (rows), outputs, and solver statistics."""

    mu: object
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    newton_iters: np.ndarray
    wall_time: float = 0.0
    histories: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.states.shape[0] != self.times.size:
            raise ValueError("one state per time level required")


class FullOrderModel:
    """Linear operators of a problem on a space, assembled once."""

    def __init__(self, problem: ProblemDef, space: FESpace):
        if problem.bc_kind != space.bc_kind:
            raise ValueError(f"problem expects {problem.bc_kind} boundary, space has {space.bc_kind}")
        self.problem = problem
        self.space = space
        self.mass, self.stiffness = assemble_linear(space)
        self._mass_lu = splu(self.mass.tocsc())
        self.output_vector = space.integrate_test(np.ones(space.nquad)) / space.mesh.measure
        self._ops = {"mass": self.mass, "stiffness": self.stiffness}

    def operator(self, mu):
        th = self.problem.thetas(mu)
        K = sp.csr_matrix(self.mass.shape)
        for t, term in zip(th, self.problem.affine):
            K = K + t * self._ops[term.operator]
        return K.tocsr()

    def source_vector(self, mu):
        if self.problem.source is None:
            return np.zeros(self.space.ndof)
        return self.space.integrate_test(self.problem.source(self.space.quad_points, mu))

    def initial(self, mu):
        return project_l2(self.space, lambda x: self.problem.initial(x, mu), self._mass_lu).coeffs

    def output(self, u):
        """Domain average of u; ``u`` may hold one state per row."""
        return u @ self.output_vector

    def nonlinear(self, u, jacobian=False):
        vecs, jacs = assemble_nonlinear(self.space, u, self.problem.nonlinear, jacobian)
        vec = sum(vecs.values()) if vecs else np.zeros(self.space.ndof)
        if not jacobian:
            return vec, None
        jac = sum(jacs.values()) if jacs else None
        return vec, jac

    def _jacobian(self, u, K, dt):
        # one assembly over all nonlinear terms instead of one per term
        uq = self.space.eval_quad(u)
        blocks = [(t.deriv(uq), t.direction, None) for t in self.problem.nonlinear]
        J = self.mass + dt * K
        if blocks:
            J = J + dt * self.space.assemble(blocks)
        return J.tocsc()

    def residual(self, u, u_prev, mu, dt, K=None, l=None):
        """``m(u - u_prev, v) + dt (a(u, v; mu) - l(v))`` for all free v."""
        K = self.operator(mu) if K is None else K
        l = self.source_vector(mu) if l is None else l
        n, _ = self.nonlinear(u)
        return self.mass @ (u - u_prev) + dt * (K @ u + n - l)

    def step(self, mu, dt, u_prev, cfg=NewtonConfig(), K=None, l=None):
        K = self.operator(mu) if K is None else K
        l = self.source_vector(mu) if l is None else l
        res = newton(
            lambda u: self.residual(u, u_prev, mu, dt, K, l),
            lambda u: self._jacobian(u, K, dt),
            u_prev,
            cfg,
            lambda J, r: splu(J).solve(r),
        )
        return res

    def solve(self, mu, grid: TimeGrid, cfg=NewtonConfig(), u0=None):
        t0 = time.perf_counter()
        K, l = self.operator(mu), self.source_vector(mu)
        states = np.empty((grid.I + 1, self.space.ndof))
        states[0] = self.initial(mu) if u0 is None else u0
        iters = np.zeros(grid.I, dtype=int)
        hist = []
        for i in range(1, grid.I + 1):
            try:
                res = self.step(mu, grid.dt, states[i - 1], cfg, K, l)
            except NewtonDiverged as err:
                raise NewtonDiverged(str(err), err.history, step=i) from err
            states[i] = res.x
            iters[i - 1] = res.iterations
            hist.append(res.history)
        wall = time.perf_counter() - t0
        return Trajectory(mu, grid.times, states, states @ self.output_vector, iters, wall, hist)


def fom_step(problem, space, mu, dt, u_prev, cfg=NewtonConfig()):
    """One Backward-Euler step; returns the new coefficient vector."""
    return FullOrderModel(problem, space).step(mu, dt, np.asarray(u_prev, dtype=float), cfg).x


def fom_solve(problem, space, mu, grid, cfg=NewtonConfig()):
    return FullOrderModel(problem, space).solve(mu, grid, cfg)


def snapshot_harvest(problem, space, S_J, grid, cfg=NewtonConfig(), directory=None, model=None):
    """Solve at every training parameter and collect ``K = I*J`` snapshots.

    Snapshots are ordered parameter-major (all times of mu_1, then mu_2, ...)
    and exclude t_0; initial fields are kept in ``SnapshotSet.initial``.
    If ``directory`` is given the set is also written there.
    """
    model = FullOrderModel(problem, space) if model is None else model
    S_J = np.atleast_1d(np.asarray(S_J, dtype=float))
    if S_J.size == 0:
        raise ValueError("empty training sample")
    lo, hi = problem.param_range
    if np.any((S_J < lo) | (S_J > hi)):
        raise ValueError(f"training parameters outside [{lo}, {hi}]")
    rows, tags, init, trajs = [], [], [], []
    for j, mu in enumerate(S_J.reshape(S_J.shape[0], -1)):
        mu_val = mu[0] if mu.size == 1 else mu
        try:
            traj = model.solve(mu_val, grid, cfg)
        except NewtonDiverged as err:
            wrapped = NewtonDiverged(f"{err} at parameter index {j}", err.history)
            wrapped.step = err.step
            raise wrapped from err
        trajs.append(traj)
        rows.append(traj.states[1:])
        init.append(traj.states[0])
        tags.extend((i, j) for i in range(1, grid.I + 1))
    snaps = SnapshotSet(
        np.vstack(rows), np.array(tags), S_J, inner=model.mass, times=grid.times, initial=np.array(init), space=space
    )
    snaps.trajectories = trajs
    if directory is not None:
        save_snapshots(directory, snaps)
    return snaps


def save_snapshots(directory, snaps: SnapshotSet):
    """``<dir>/snapshots/mu<j>_t<i>.bin`` plus ``index.json`` metadata."""
    sdir = Path(directory) / "snapshots"
    entries = []
    for k, (i, j) in enumerate(snaps.tags):
        name = f"mu{j}_t{i}.bin"
        store.write_array(sdir / name, snaps.values[k])
        entries.append({"file": name, "i": int(i), "j": int(j)})
    if snaps.initial is not None:
        for j, u0 in enumerate(snaps.initial):
            store.write_array(sdir / f"mu{j}_t0.bin", u0)
    meta = {
        "params": snaps.params.tolist(),
        "times": None if snaps.times is None else snaps.times.tolist(),
        "snapshots": entries,
        "has_initial": snaps.initial is not None,
        "length": snaps.size,
    }
    store.write_json(sdir / "index.json", meta)


def load_snapshots(directory, space=None, inner=None):
    sdir = Path(directory) / "snapshots"
    meta = store.read_json(sdir / "index.json")
    values = np.array([store.read_array(sdir / e["file"]) for e in meta["snapshots"]])
    tags = np.array([(e["i"], e["j"]) for e in meta["snapshots"]])
    initial = None
    if meta["has_initial"]:
        initial = np.array([store.read_array(sdir / f"mu{j}_t0.bin") for j in range(len(meta["params"]))])
    times = None if meta["times"] is None else np.array(meta["times"])
    return SnapshotSet(values, tags, np.array(meta["params"]), inner, times, initial, space)
