"""Built-in problems: the 1D analytic interpolation test, Buckley-Leverett
and Allen-Cahn."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fom import AffineTerm, Nonlinearity, ProblemDef, TimeGrid
from .mesh_fem import build_space
from .pod import SnapshotSet

# hierarchical: S_J is the first J entries
TESTCASE1D_SAMPLE = (0.0, 10.0, 1.4, 8.6, 4.2, 5.8, 0.5, 9.5, 2.7, 7.3, 0.15, 9.85)
BL_TRAINING = (0.03, 0.044, 0.058, 0.072, 0.086, 0.1)
AC_TRAINING = (0.25, 0.27, 0.29, 0.31, 0.33, 0.35)


def uniform_sample(lo, hi, count):
    """Equispaced test sample including both endpoints."""
    return np.linspace(lo, hi, int(count))


# -- Buckley-Leverett --------------------------------------------------------

def bl_f1(u):
    return u**2 / (u**2 + (1.0 - u) ** 2)


def bl_f1_prime(u):
    den = u**2 + (1.0 - u) ** 2
    return 2.0 * u * (1.0 - u) / den**2


def bl_f2(u):
    return bl_f1(u) * (1.0 - 5.0 * (1.0 - u) ** 2)


def bl_f2_prime(u):
    return bl_f1_prime(u) * (1.0 - 5.0 * (1.0 - u) ** 2) + bl_f1(u) * 10.0 * (1.0 - u)


def bl_initial(x, mu):
    return np.exp(-16.0 * (x[:, 0] ** 2 + x[:, 1] ** 2))


def buckley_leverett():
    """u_t - mu lap u + div f(u) = 0 on (-1.5, 1.5)^2, u = 0 on the boundary.

    The convection form is ``-int f(u) . grad v``; the minus sign lives in
    the two flux nonlinearities.
    """
    return ProblemDef(
        name="buckley_leverett",
        affine=(AffineTerm(lambda mu: mu, "stiffness"),),
        nonlinear=(
            Nonlinearity("f1", lambda u: -bl_f1(u), lambda u: -bl_f1_prime(u), direction=0),
            Nonlinearity("f2", lambda u: -bl_f2(u), lambda u: -bl_f2_prime(u), direction=1),
        ),
        initial=bl_initial,
        param_range=(0.03, 0.1),
        bc_kind="dirichlet",
    )


def bl_space(cells=16, degree=2):
    return build_space(2, [(-1.5, 1.5), (-1.5, 1.5)], (cells, cells), degree, "dirichlet")


# -- Allen-Cahn --------------------------------------------------------------

def ac_initial(x, mu, eps=0.015):
    dx, dy = x[:, 0] - 0.5, x[:, 1] - 0.5
    theta = np.arctan2(dy, dx)
    r = np.sqrt(dx**2 + dy**2)
    return np.tanh((mu + 0.1 * np.cos(6.0 * theta) - r) / (np.sqrt(2.0) * eps))


def allen_cahn(eps=0.015, exponent=2):
    """u_t - lap u + (u^3 - u) / eps^exponent = 0 on (0, 1)^2, Neumann.

    ``exponent=2`` matches the strong form; ``exponent=1`` gives the variant
    where the weak form carries 1/eps.
    """
    scale = 1.0 / eps**exponent
    return ProblemDef(
        name="allen_cahn",
        affine=(AffineTerm(lambda mu: 1.0, "stiffness"), AffineTerm(lambda mu: -scale, "mass")),
        nonlinear=(Nonlinearity("g", lambda u: scale * u**3, lambda u: 3.0 * scale * u**2),),
        initial=lambda x, mu: ac_initial(x, mu, eps),
        param_range=(0.25, 0.35),
        bc_kind="neumann",
    )


def ac_space(cells=32, degree=2):
    return build_space(2, [(0.0, 1.0), (0.0, 1.0)], (cells, cells), degree, "neumann")


# -- 1D analytic test case -----------------------------------------------------

def testcase1d_u(x, t, mu):
    """Closed-form u(x, t, mu) on [0, 2] x [0, 100] x [0, 10]."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)[..., None]
    a = mu + 1.0
    return x / (a * (1.0 + np.sqrt(a / np.exp(0.5 * t)) * np.exp(t * x**2 / a)))


@dataclass(eq=False)
class AnalyticProvider:
    """Snapshot provider with no PDE solve: u is known in closed form.

    Values live at the quadrature points of a 1D linear-element space, and
    the inner product is the quadrature-weighted discrete L2 product.
    """

    name: str = "testcase1d"
    elements: int = 1000
    degree: int = 1
    T: float = 100.0
    I: int = 100
    param_range: tuple = (0.0, 10.0)

    def __post_init__(self):
        self.space = build_space(1, (0.0, 2.0), self.elements, self.degree)
        self.points = self.space.quad_points[:, 0]
        self.weights = self.space.quad_weights
        self.nonlinear = (Nonlinearity("g", np.exp, np.exp),)

    @property
    def grid(self):
        return TimeGrid(self.T, self.I)

    def exact(self, mu, times):
        return testcase1d_u(self.points, times, mu)

    def snapshots(self, S_J, grid=None):
        grid = self.grid if grid is None else grid
        S_J = np.atleast_1d(np.asarray(S_J, dtype=float))
        lo, hi = self.param_range
        if np.any((S_J < lo) | (S_J > hi)):
            raise ValueError(f"training parameters outside [{lo}, {hi}]")
        t = grid.times
        rows = [self.exact(mu, t[1:]) for mu in S_J]
        tags = [(i, j) for j in range(S_J.size) for i in range(1, grid.I + 1)]
        initial = np.array([self.exact(mu, t[:1])[0] for mu in S_J])
        return SnapshotSet(np.vstack(rows), np.array(tags), S_J, inner=self.weights, times=t, initial=initial)


def make_case(case, **opts):
    """Return ``(problem, space)`` for a PDE case or the analytic provider."""
    if case == "testcase1d":
        keys = ("elements", "degree", "T", "I")
        return AnalyticProvider(**{k: opts[k] for k in keys if k in opts})
    if case == "buckley_leverett":
        return buckley_leverett(), bl_space(opts.get("cells", 16), opts.get("degree", 2))
    if case == "allen_cahn":
        prob = allen_cahn(opts.get("eps", 0.015), opts.get("exponent", 2))
        return prob, ac_space(opts.get("cells", 32), opts.get("degree", 2))
    raise ValueError(f"unknown case {case!r}")
