"""Reduced-order models: offline assembly and the two online solvers.

The hyperreduced solver (FOEIM-GN) sees only small dense arrays held by
``ROMOperators`` plus the pointwise formulas of the problem; it never
touches the mesh.  The Galerkin-Newton reference (GN) evaluates the
nonlinear terms with full quadrature and serves as an accuracy oracle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.linalg.lapack import dgesv as _gesv

from . import store
from .fom import FullOrderModel, ProblemDef, TimeGrid, Trajectory
from .newton import NewtonConfig, NewtonDiverged, NewtonResult, newton
from .pod import ReducedBasis, apply_inner

__all__ = [
    "TermOperator",
    "ROMOperators",
    "ROMTrajectory",
    "GalerkinReference",
    "ErrorSummary",
    "offline_assemble",
    "online_step",
    "online_solve",
    "gn_reference_step",
    "compare_errors",
    "save_operators",
    "load_operators",
]


@dataclass(eq=False)
class TermOperator:
    """Reduced data of one nonlinear term.

    ``W = H B_M^{-1}`` maps values at the interpolation points to reduced
    residual contributions; ``trace`` evaluates u_N at those points.
    """

    name: str
    direction: int | None
    W: np.ndarray  # (N, M)
    H: np.ndarray  # (N, M)
    trace: np.ndarray  # (M, N)
    points: np.ndarray  # quadrature indices
    B_M: np.ndarray

    @property
    def M(self):
        return self.trace.shape[0]


@dataclass(eq=False)
class ROMOperators:
    """Parameter-independent reduced operators.

    ``A[q]`` is the projection of the q-th affine form, scaled online by
    theta_q(mu).
    """

    M_N: np.ndarray
    A: np.ndarray  # (Q, N, N)
    l_N: np.ndarray
    l_out: np.ndarray
    terms: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        N = self.M_N.shape[0]
        if self.A.shape[1:] != (N, N) or self.l_N.shape != (N,) or self.l_out.shape != (N,):
            raise ValueError("reduced operator dimensions are inconsistent")
        for t in self.terms:
            if t.W.shape != (N, t.M) or t.trace.shape != (t.M, N):
                raise ValueError(f"term {t.name}: dimensions inconsistent with N={N}")
        arrays = [self.M_N, self.A, self.l_N, self.l_out] + [a for t in self.terms for a in (t.W, t.trace)]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("non-finite reduced operator")
        self.stacked_trace = np.vstack([t.trace for t in self.terms]) if self.terms else np.zeros((0, N))
        self.stacked_W = np.hstack([t.W for t in self.terms]) if self.terms else np.zeros((N, 0))

    @property
    def N(self):
        return self.M_N.shape[0]

    @property
    def Q(self):
        return self.A.shape[0]

    @property
    def M(self):
        return {t.name: t.M for t in self.terms}

    def linear_part(self, problem: ProblemDef, mu, dt):
        """``M_N / dt + sum_q theta_q(mu) A_q``."""
        th = problem.thetas(mu)
        return self.M_N / dt + np.tensordot(th, self.A, axes=1)

    def output(self, alpha):
        return alpha @ self.l_out


@dataclass
class ROMTrajectory:
    """Reduced coefficients at t_0..t_I (rows) and the outputs s_N."""

    mu: object
    times: np.ndarray
    alphas: np.ndarray
    outputs: np.ndarray
    newton_iters: np.ndarray
    wall_time: float = 0.0


def _hyper_terms(space, problem, basis_q, systems):
    terms = []
    w = space.quad_weights
    for term in problem.nonlinear:
        if term.name not in systems:
            raise KeyError(f"no EIM system for nonlinear term {term.name!r}")
        sys_ = systems[term.name]
        if sys_.basis.shape[1] != space.nquad:
            raise ValueError(f"EIM system {term.name!r} lives on {sys_.basis.shape[1]} points, space has {space.nquad}")
        test = basis_q[0] if term.direction is None else basis_q[1 + term.direction]
        psi = sys_.basis[: sys_.M]
        H = test.T @ (w[:, None] * psi.T)
        B = sys_.B_M
        W = la.solve_triangular(B, H.T, lower=True, trans="T").T if sys_.M else H
        trace = basis_q[0][sys_.interp_points]
        terms.append(TermOperator(term.name, term.direction, W, H, trace, sys_.interp_points.copy(), B.copy()))
    return tuple(terms)


def _basis_at_quadrature(space, vectors):
    vals = [space.eval_quad(vectors)]
    vals += [space.eval_quad(vectors, deriv=d) for d in range(space.dim)]
    return vals


def offline_assemble(space, problem: ProblemDef, basis: ReducedBasis, eim_systems, model=None) -> ROMOperators:
    """Project the affine forms, source, output and nonlinear terms.

    ``eim_systems`` maps term names to EIMSystem objects built on the same
    quadrature points.  A source term, if present, must not depend on mu.
    """
    model = FullOrderModel(problem, space) if model is None else model
    Phi = basis.vectors
    if Phi.shape[0] != space.ndof:
        raise ValueError(f"basis length {Phi.shape[0]} does not match {space.ndof} free dofs")
    ops = {"mass": model.mass, "stiffness": model.stiffness}
    M_N = Phi.T @ (model.mass @ Phi)
    A = np.array([Phi.T @ (ops[t.operator] @ Phi) for t in problem.affine]).reshape(-1, Phi.shape[1], Phi.shape[1])
    l_N = Phi.T @ model.source_vector(None)
    l_out = Phi.T @ model.output_vector
    terms = _hyper_terms(space, problem, _basis_at_quadrature(space, Phi), eim_systems)
    meta = {
        "problem": problem.name,
        "N": int(Phi.shape[1]),
        "M": {t.name: t.M for t in terms},
        "Q": len(problem.affine),
        "D": sum(t.direction is not None for t in terms),
        "affine": [t.operator for t in problem.affine],
    }
    return ROMOperators(0.5 * (M_N + M_N.T), A, l_N, l_out, terms, meta)


def _rom_functions(ops: ROMOperators, problem, K, rhs):
    # all traces stacked so that one product gives u_N at every point; the
    # derivative values computed with the residual are reused by the Jacobian
    funcs = [problem.term(t.name) for t in ops.terms]
    T, W = ops.stacked_trace, ops.stacked_W
    bounds = np.cumsum([0] + [t.M for t in ops.terms])
    cache = {}

    def residual(a):
        z = T @ a
        vals = np.empty_like(z)
        ders = np.empty_like(z)
        for f, lo, hi in zip(funcs, bounds[:-1], bounds[1:]):
            vals[lo:hi] = f.value(z[lo:hi])
            ders[lo:hi] = f.deriv(z[lo:hi])
        cache["a"], cache["d"] = a, ders
        return K @ a + W @ vals - rhs

    def jacobian(a):
        if cache.get("a") is not a:
            residual(a)
        return K + (W * cache["d"]) @ T

    return residual, jacobian


def _dense_solve(J, r):
    _, _, x, info = _gesv(J, r)
    if info != 0:
        raise NewtonDiverged(f"singular reduced Jacobian (LAPACK info {info})")
    return x


def online_step(ops: ROMOperators, problem: ProblemDef, mu, dt, alpha_prev, cfg=NewtonConfig(), K=None):
    """One Backward-Euler step of the hyperreduced system; returns alpha.

    Solves ``K alpha + sum_t W_t h_t(T_t alpha) = l_N + M_N alpha_prev / dt``
    with ``K = M_N / dt + sum_q theta_q A_q``.
    """
    return _online_step(ops, problem, mu, dt, alpha_prev, cfg, K).x


def _online_step(ops, problem, mu, dt, alpha_prev, cfg, K=None):
    K = ops.linear_part(problem, mu, dt) if K is None else K
    rhs = ops.l_N + ops.M_N @ alpha_prev / dt
    if not ops.terms:
        return NewtonResult(np.linalg.solve(K, rhs), 1)
    residual, jacobian = _rom_functions(ops, problem, K, rhs)
    return newton(residual, jacobian, alpha_prev, cfg, _dense_solve)


def _march(step, mu, grid: TimeGrid, alpha0, output):
    t0 = time.perf_counter()
    alphas = np.empty((grid.I + 1, np.size(alpha0)))
    alphas[0] = alpha0
    iters = np.zeros(grid.I, dtype=int)
    for i in range(1, grid.I + 1):
        try:
            res = step(alphas[i - 1])
        except NewtonDiverged as err:
            raise NewtonDiverged(str(err), err.history, step=i) from err
        alphas[i] = res.x
        iters[i - 1] = res.iterations
    wall = time.perf_counter() - t0
    return ROMTrajectory(mu, grid.times, alphas, output(alphas), iters, wall)


def online_solve(ops: ROMOperators, problem: ProblemDef, mu, grid: TimeGrid, alpha0, cfg=NewtonConfig()):
    """March the hyperreduced model; ``alpha0`` is the projected initial state."""
    K = ops.linear_part(problem, mu, grid.dt)
    return _march(lambda a: _online_step(ops, problem, mu, grid.dt, a, cfg, K), mu, grid, alpha0, ops.output)


class GalerkinReference:
    """Galerkin ROM with nonlinear terms integrated by full quadrature.

    Holds the basis and its derivatives at all quadrature points, so every
    Newton iteration costs O(N * nquad).
    """

    def __init__(self, space, problem: ProblemDef, basis: ReducedBasis, model=None):
        model = FullOrderModel(problem, space) if model is None else model
        self.problem = problem
        self.basis = basis
        Phi = basis.vectors
        self.values = _basis_at_quadrature(space, Phi)
        w = space.quad_weights
        self.tests = [
            w[:, None] * (self.values[0] if t.direction is None else self.values[1 + t.direction]) for t in problem.nonlinear
        ]
        self.M_N = Phi.T @ (model.mass @ Phi)
        ops = {"mass": model.mass, "stiffness": model.stiffness}
        self.A = np.array([Phi.T @ (ops[t.operator] @ Phi) for t in problem.affine]).reshape(-1, Phi.shape[1], Phi.shape[1])
        self.l_N = Phi.T @ model.source_vector(None)
        self.l_out = Phi.T @ model.output_vector

    def linear_part(self, mu, dt):
        return self.M_N / dt + np.tensordot(self.problem.thetas(mu), self.A, axes=1)

    def nonlinear(self, alpha, jacobian=False):
        """Reduced nonlinear vector and, optionally, its Jacobian."""
        uq = self.values[0] @ alpha
        vec = np.zeros(alpha.shape[0])
        jac = np.zeros((alpha.shape[0],) * 2) if jacobian else None
        for term, test in zip(self.problem.nonlinear, self.tests):
            vec += test.T @ term.value(uq)
            if jacobian:
                jac += test.T @ (term.deriv(uq)[:, None] * self.values[0])
        return vec, jac

    def residual(self, alpha, alpha_prev, mu, dt, K=None):
        K = self.linear_part(mu, dt) if K is None else K
        return K @ alpha + self.nonlinear(alpha)[0] - self.l_N - self.M_N @ alpha_prev / dt

    def _step(self, mu, dt, alpha_prev, cfg, K):
        rhs = self.l_N + self.M_N @ alpha_prev / dt

        def residual(a):
            return K @ a + self.nonlinear(a)[0] - rhs

        def jacobian(a):
            return K + self.nonlinear(a, True)[1]

        return newton(residual, jacobian, alpha_prev, cfg, _dense_solve)

    def step(self, mu, dt, alpha_prev, cfg=NewtonConfig()):
        return self._step(mu, dt, alpha_prev, cfg, self.linear_part(mu, dt)).x

    def solve(self, mu, grid: TimeGrid, alpha0, cfg=NewtonConfig()):
        K = self.linear_part(mu, grid.dt)
        return _march(lambda a: self._step(mu, grid.dt, a, cfg, K), mu, grid, alpha0, lambda a: a @ self.l_out)


def gn_reference_step(space, problem, basis, mu, dt, alpha_prev, cfg=NewtonConfig()):
    return GalerkinReference(space, problem, basis).step(mu, dt, np.asarray(alpha_prev, dtype=float), cfg)


@dataclass
class ErrorSummary:
    """Per-step field and output errors plus their means over t_1..t_I."""

    eps_u: np.ndarray
    eps_s: np.ndarray

    @property
    def mean_u(self):
        return float(np.mean(self.eps_u[1:]))

    @property
    def mean_s(self):
        return float(np.mean(self.eps_s[1:]))


def compare_errors(fom_traj: Trajectory, rom_traj: ROMTrajectory, basis: ReducedBasis, norm="mass"):
    """``||u - Phi alpha||`` and ``|s - s_N|`` at every time level.

    ``norm="mass"`` measures in the inner product of the basis (the L2
    norm for finite element coefficients); ``norm="euclid"`` uses the
    coefficient 2-norm.
    """
    if fom_traj.times.shape != rom_traj.times.shape or not np.allclose(fom_traj.times, rom_traj.times):
        raise ValueError("full and reduced trajectories use different time grids")
    diff = fom_traj.states - rom_traj.alphas @ basis.vectors.T
    if norm == "mass":
        sq = np.einsum("ij,ij->i", diff, apply_inner(basis.inner, diff.T).T)
    elif norm == "euclid":
        sq = np.einsum("ij,ij->i", diff, diff)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    eps_u = np.sqrt(np.maximum(sq, 0.0))
    eps_s = np.abs(np.asarray(fom_traj.outputs) - np.asarray(rom_traj.outputs))
    return ErrorSummary(eps_u, eps_s)


def save_operators(directory, ops: ROMOperators):
    """Persist reduced operators as binary arrays plus a JSON manifest."""
    arrays = {"M_N": ops.M_N, "A": ops.A, "l_N": ops.l_N, "l_out": ops.l_out}
    terms = []
    for k, t in enumerate(ops.terms):
        for key in ("W", "H", "trace", "points", "B_M"):
            arrays[f"term{k}_{key}"] = getattr(t, key)
        terms.append({"name": t.name, "direction": t.direction})
    store.save_bundle(directory, arrays, {"kind": "rom_operators", "meta": ops.meta, "terms": terms})


def load_operators(directory) -> ROMOperators:
    arrays, manifest = store.load_bundle(directory)
    if manifest.get("kind") != "rom_operators":
        raise store.ContainerError(f"{directory} does not hold reduced operators")
    terms = tuple(
        TermOperator(
            t["name"], t["direction"], *(arrays[f"term{k}_{key}"] for key in ("W", "H", "trace", "points", "B_M"))
        )
        for k, t in enumerate(manifest["terms"])
    )
    return ROMOperators(arrays["M_N"], arrays["A"], arrays["l_N"], arrays["l_out"], terms, manifest["meta"])
