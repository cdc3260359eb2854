"""Structured meshes, tensor-product Lagrange spaces and quadrature assembly.

Cells are uniform and axis aligned, so every cell shares one reference
element and one set of physical quadrature weights.  All assembly is done
per cell with dense local arrays and scattered into a fixed CSR pattern.

Example
-------
>>> space = build_space(2, [(0, 1), (0, 1)], (4, 4), degree=2)
>>> mass, stiffness = assemble_linear(space)
>>> float(np.ones(space.ndof) @ mass @ np.ones(space.ndof))  # doctest: +ELLIPSIS
1.0...
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = [
    "Mesh",
    "FESpace",
    "FEField",
    "BasisTrace",
    "NonFiniteError",
    "build_space",
    "assemble_linear",
    "project_l2",
    "assemble_nonlinear",
    "trace_at_points",
    "lagrange_1d",
]


class NonFiniteError(FloatingPointError):
    """A nonlinear function returned NaN/Inf at some evaluation point."""

    def __init__(self, message, index=None, point=None):
        super().__init__(message)
        self.index = index
        self.point = point


def lagrange_1d(degree, x):
    """Values and derivatives of equispaced Lagrange polynomials on [0, 1].

    Returns two arrays of shape ``(len(x), degree + 1)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nodes = np.linspace(0.0, 1.0, degree + 1)
    n = degree + 1
    vals = np.ones((x.size, n))
    ders = np.zeros((x.size, n))
    for a in range(n):
        others = [b for b in range(n) if b != a]
        denom = np.prod([nodes[a] - nodes[b] for b in others])
        factors = np.stack([x - nodes[b] for b in others], axis=1) if others else np.ones((x.size, 0))
        vals[:, a] = np.prod(factors, axis=1) / denom
        for skip in range(len(others)):
            rest = np.delete(factors, skip, axis=1)
            ders[:, a] += np.prod(rest, axis=1) / denom
    return vals, ders


def _gauss_01(npts):
    pts, wts = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (pts + 1.0), 0.5 * wts


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform axis-aligned mesh of intervals (1D) or quadrilaterals (2D)."""

    bounds: tuple
    cells_per_axis: tuple

    def __post_init__(self):
        if len(self.bounds) != len(self.cells_per_axis) or self.dim not in (1, 2):
            raise ValueError("mesh must be 1D or 2D with one bound pair per axis")
        for (lo, hi), n in zip(self.bounds, self.cells_per_axis):
            if not hi > lo:
                raise ValueError(f"degenerate axis bounds ({lo}, {hi})")
            if int(n) < 1:
                raise ValueError("cells_per_axis must be >= 1")

    @property
    def dim(self):
        return len(self.cells_per_axis)

    @property
    def ncells(self):
        return int(np.prod(self.cells_per_axis))

    @property
    def cell_size(self):
        return np.array([(hi - lo) / n for (lo, hi), n in zip(self.bounds, self.cells_per_axis)])

    @property
    def measure(self):
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    @property
    def cell_measure(self):
        return float(np.prod(self.cell_size))

    def cell_origins(self):
        """Lower-left corner of every cell, x index fastest."""
        axes = [lo + np.arange(n) * h for (lo, _), n, h in zip(self.bounds, self.cells_per_axis, self.cell_size)]
        grids = np.meshgrid(*axes, indexing="xy") if self.dim == 2 else axes
        return np.stack([g.ravel() for g in grids], axis=1)

    def cell_vertices(self):
        """Cell to vertex connectivity (vertex grid numbered x fastest)."""
        return _tensor_cell_map(self.cells_per_axis, 1)


def _tensor_cell_map(cells, degree):
    """Global node indices of each cell for a tensor grid of nodes."""
    cells = tuple(int(c) for c in cells)
    nn = [degree * c + 1 for c in cells]
    loc = np.arange(degree + 1)
    if len(cells) == 1:
        return (np.arange(cells[0])[:, None] * degree + loc[None, :]).astype(np.int64)
    cx, cy = np.meshgrid(np.arange(cells[0]), np.arange(cells[1]), indexing="xy")
    cx, cy = cx.ravel(), cy.ravel()
    ax, ay = np.meshgrid(loc, loc, indexing="xy")
    ax, ay = ax.ravel(), ay.ravel()
    ix = cx[:, None] * degree + ax[None, :]
    iy = cy[:, None] * degree + ay[None, :]
    return (iy * nn[0] + ix).astype(np.int64)


@dataclass(eq=False)
class FESpace:
    """Continuous tensor-product Lagrange space on a structured mesh.

    Coefficient vectors always refer to the free dofs (boundary dofs are
    eliminated for ``bc_kind="dirichlet"``).  Quadrature points are numbered
    cell by cell: global index ``cell * nq + q``.
    """

    mesh: Mesh
    degree: int
    bc_kind: str
    nodes_per_axis: tuple = field(init=False)
    coords: np.ndarray = field(init=False, repr=False)
    cell_dofs: np.ndarray = field(init=False, repr=False)
    boundary: np.ndarray = field(init=False, repr=False)
    free: np.ndarray = field(init=False, repr=False)
    free_index: np.ndarray = field(init=False, repr=False)
    ref_points: np.ndarray = field(init=False, repr=False)
    phi: np.ndarray = field(init=False, repr=False)
    dphi: np.ndarray = field(init=False, repr=False)
    cell_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.bc_kind not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown bc_kind {self.bc_kind!r}")
        mesh, p = self.mesh, self.degree
        dim = mesh.dim
        self.nodes_per_axis = tuple(p * int(n) + 1 for n in mesh.cells_per_axis)
        axes = [np.linspace(lo, hi, nn) for (lo, hi), nn in zip(mesh.bounds, self.nodes_per_axis)]
        if dim == 1:
            self.coords = axes[0][:, None]
        else:
            gx, gy = np.meshgrid(*axes, indexing="xy")
            self.coords = np.stack([gx.ravel(), gy.ravel()], axis=1)
        self.cell_dofs = _tensor_cell_map(mesh.cells_per_axis, p)

        idx = np.arange(self.ndof_total)
        on_bdry = np.zeros(self.ndof_total, dtype=bool)
        if dim == 1:
            on_bdry[[0, -1]] = True
        else:
            ix, iy = idx % self.nodes_per_axis[0], idx // self.nodes_per_axis[0]
            on_bdry = (ix == 0) | (iy == 0) | (ix == self.nodes_per_axis[0] - 1) | (iy == self.nodes_per_axis[1] - 1)
        self.boundary = idx[on_bdry]
        self.free = idx if self.bc_kind == "neumann" else idx[~on_bdry]
        self.free_index = np.full(self.ndof_total, -1, dtype=np.int64)
        self.free_index[self.free] = np.arange(self.free.size)

        # degree + 2 Gauss points per axis
        g, w1 = _gauss_01(p + 2)
        v1, d1 = lagrange_1d(p, g)
        h = mesh.cell_size
        if dim == 1:
            self.ref_points = g[:, None]
            self.phi = v1
            self.dphi = (d1 / h[0])[None]
            self.cell_weights = w1 * h[0]
        else:
            gx, gy = np.meshgrid(g, g, indexing="xy")
            self.ref_points = np.stack([gx.ravel(), gy.ravel()], axis=1)
            self.phi = np.kron(v1, v1)
            self.dphi = np.stack([np.kron(v1, d1) / h[0], np.kron(d1, v1) / h[1]])
            self.cell_weights = np.kron(w1, w1) * h[0] * h[1]
        self._pattern = None
        self._quad_points = None

    # -- sizes -------------------------------------------------------------
    @property
    def dim(self):
        return self.mesh.dim

    @property
    def ndof_total(self):
        return int(np.prod(self.nodes_per_axis))

    @property
    def ndof(self):
        """Number of free dofs, the full-order dimension."""
        return int(self.free.size)

    @property
    def nloc(self):
        return self.phi.shape[1]

    @property
    def nq(self):
        """Quadrature points per cell."""
        return self.phi.shape[0]

    @property
    def nquad(self):
        return self.mesh.ncells * self.nq

    @property
    def quad_points(self):
        if self._quad_points is None:
            origins = self.mesh.cell_origins()
            pts = origins[:, None, :] + self.ref_points[None, :, :] * self.mesh.cell_size
            self._quad_points = pts.reshape(-1, self.dim)
        return self._quad_points

    @property
    def quad_weights(self):
        return np.tile(self.cell_weights, self.mesh.ncells)

    # -- dof helpers -------------------------------------------------------
    def to_full(self, coeffs):
        """Pad free-dof coefficients with zeros on eliminated boundary dofs."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[0] != self.ndof:
            raise ValueError(f"expected {self.ndof} coefficients, got {coeffs.shape[0]}")
        if self.bc_kind == "neumann":
            return coeffs
        full = np.zeros((self.ndof_total,) + coeffs.shape[1:])
        full[self.free] = coeffs
        return full

    def eval_quad(self, coeffs, deriv=None):
        """Evaluate a field (or several, as columns) at all quadrature points.

        ``deriv`` selects the partial derivative along that axis.
        """
        full = self.to_full(coeffs)
        local = full[self.cell_dofs]  # (ncells, nloc, ...)
        basis = self.phi if deriv is None else self.dphi[deriv]
        out = np.tensordot(local, basis, axes=([1], [1]))  # (ncells, ..., nq)
        out = np.moveaxis(out, -1, 1)
        return out.reshape((self.nquad,) + full.shape[1:])

    def integrate_test(self, values, deriv=None):
        """Return ``sum_q w_q values_q v_j(x_q)`` for every free test function.

        With ``deriv=d`` the test function is replaced by its x_d derivative.
        """
        vals = np.asarray(values, dtype=float).reshape(self.mesh.ncells, self.nq)
        basis = self.phi if deriv is None else self.dphi[deriv]
        local = (vals * self.cell_weights) @ basis
        dofs = self.free_index[self.cell_dofs].ravel()
        keep = dofs >= 0
        return np.bincount(dofs[keep], weights=local.ravel()[keep], minlength=self.ndof)

    def _build_pattern(self):
        rows = self.free_index[self.cell_dofs][:, :, None]
        cols = self.free_index[self.cell_dofs][:, None, :]
        rows, cols = np.broadcast_arrays(rows, cols)
        rows, cols = rows.ravel(), cols.ravel()
        keep = (rows >= 0) & (cols >= 0)
        keys = rows[keep] * self.ndof + cols[keep]
        ukeys = np.unique(keys)
        indptr = np.searchsorted(ukeys // self.ndof, np.arange(self.ndof + 1))
        indices = (ukeys % self.ndof).astype(np.int32)
        pos = np.full(rows.size, -1, dtype=np.int64)
        pos[keep] = np.searchsorted(ukeys, keys)
        self._pattern = (indptr.astype(np.int32), indices, pos, keep)

    def assemble(self, blocks):
        """Assemble ``sum_b int coef_b (test_b) (trial_b)`` into a CSR matrix.

        Each block is ``(coef, test_deriv, trial_deriv)`` where ``coef`` holds
        one value per quadrature point (or a scalar) and a deriv of ``None``
        means the function value, an integer d its x_d derivative.
        """
        if self._pattern is None:
            self._build_pattern()
        indptr, indices, pos, keep = self._pattern
        ncells = self.mesh.ncells
        local = np.zeros((ncells, self.nloc, self.nloc))
        for coef, test, trial in blocks:
            cw = np.broadcast_to(np.asarray(coef, dtype=float), (self.nquad,)).reshape(ncells, self.nq) * self.cell_weights
            tb = self.phi if test is None else self.dphi[test]
            rb = self.phi if trial is None else self.dphi[trial]
            local += np.einsum("cq,qa,qb->cab", cw, tb, rb, optimize=True)
        data = np.bincount(pos[keep], weights=local.ravel()[keep], minlength=indices.size)
        return sp.csr_matrix((data, indices, indptr), shape=(self.ndof, self.ndof))

    def locate(self, points):
        """Cell index and reference coordinates of each point.

        Raises ``ValueError`` for points outside the closed domain.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            raise ValueError(f"points must have {self.dim} columns")
        h = self.mesh.cell_size
        lo = np.array([b[0] for b in self.mesh.bounds])
        hi = np.array([b[1] for b in self.mesh.bounds])
        tol = 1e-12 * (hi - lo)
        outside = np.any((points < lo - tol) | (points > hi + tol), axis=1)
        if np.any(outside):
            bad = points[np.argmax(outside)]
            raise ValueError(f"point {bad} lies outside the domain")
        s = (points - lo) / h
        ncell = np.array(self.mesh.cells_per_axis)
        cidx = np.clip(np.floor(s).astype(np.int64), 0, ncell - 1)
        ref = s - cidx
        cell = cidx[:, 0] if self.dim == 1 else cidx[:, 1] * ncell[0] + cidx[:, 0]
        return cell, ref


@dataclass(frozen=True)
class FEField:
    """A finite element function, stored as free-dof coefficients."""

    space: FESpace
    coeffs: np.ndarray

    def __post_init__(self):
        if np.shape(self.coeffs) != (self.space.ndof,):
            raise ValueError(f"coefficient length {np.shape(self.coeffs)} does not match {self.space.ndof} free dofs")


def build_space(dim, bounds, cells_per_axis, degree=2, bc_kind="neumann"):
    """Create a mesh and a Lagrange space of the given polynomial degree."""
    if dim == 1 and np.ndim(bounds) == 1:
        bounds = [bounds]
    if np.ndim(cells_per_axis) == 0:
        cells_per_axis = (int(cells_per_axis),) * dim
    bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
    mesh = Mesh(bounds, tuple(int(n) for n in cells_per_axis))
    if mesh.dim != dim:
        raise ValueError("dim does not match bounds/cells_per_axis")
    return FESpace(mesh, int(degree), bc_kind)


def assemble_linear(space):
    """Mass and stiffness matrices on the free dofs."""
    mass = space.assemble([(1.0, None, None)])
    stiffness = space.assemble([(1.0, d, d) for d in range(space.dim)])
    return mass, stiffness


def project_l2(space, func, mass_lu=None):
    """L2 projection of ``func(points)`` onto the space.

    ``func`` receives an ``(npts, dim)`` array of quadrature points.
    """
    values = np.asarray(func(space.quad_points), dtype=float)
    rhs = space.integrate_test(values)
    if mass_lu is None:
        mass_lu = splu(space.assemble([(1.0, None, None)]).tocsc())
    coeffs = mass_lu.solve(rhs)
    if not np.all(np.isfinite(coeffs)):
        raise np.linalg.LinAlgError("L2 projection produced non-finite coefficients")
    return FEField(space, coeffs)


def _check_finite(values, what, space):
    if not np.all(np.isfinite(values)):
        i = int(np.flatnonzero(~np.isfinite(values))[0])
        raise NonFiniteError(f"{what} is not finite at quadrature point {i} {space.quad_points[i]}", i, space.quad_points[i])


def assemble_nonlinear(space, coeffs, terms, jacobian=False):
    """Nonlinear vectors (and optionally Jacobians) of a field.

    Each term has ``name``, ``value(u)``, ``deriv(u)`` and ``direction``;
    ``direction=None`` tests against v (the ``g`` integral) and an integer d
    tests against dv/dx_d (one flux component).  Returns ``(vectors,
    jacobians)`` as dicts keyed by term name; ``jacobians`` is ``None``
    unless requested.
    """
    u = space.eval_quad(coeffs)
    vectors, jacs = {}, ({} if jacobian else None)
    for term in terms:
        val = np.asarray(term.value(u), dtype=float)
        _check_finite(val, f"{term.name}(u)", space)
        vectors[term.name] = space.integrate_test(val, term.direction)
        if jacobian:
            der = np.asarray(term.deriv(u), dtype=float)
            _check_finite(der, f"{term.name}'(u)", space)
            jacs[term.name] = space.assemble([(der, term.direction, None)])
    return vectors, jacs


@dataclass(frozen=True)
class BasisTrace:
    """Basis values (and gradients) at arbitrary points, over all dofs.

    Rows are points and columns are global dofs including eliminated
    boundary dofs, so each value row sums to one.
    """

    space: FESpace
    values: sp.csr_matrix
    gradients: tuple = ()

    def free(self, mat=None):
        mat = self.values if mat is None else mat
        return mat[:, self.space.free]

    def evaluate(self, coeffs, deriv=None):
        mat = self.values if deriv is None else self.gradients[deriv]
        return mat @ self.space.to_full(coeffs)


def trace_at_points(space, points, gradient=False):
    """Evaluate all basis functions (and optionally gradients) at points."""
    cell, ref = space.locate(points)
    p, h = space.degree, space.mesh.cell_size
    npts = cell.size
    parts = [lagrange_1d(p, ref[:, d]) for d in range(space.dim)]
    if space.dim == 1:
        vals = parts[0][0]
        grads = [parts[0][1] / h[0]]
    else:
        (vx, dx), (vy, dy) = parts
        vals = (vy[:, :, None] * vx[:, None, :]).reshape(npts, -1)
        grads = [
            (vy[:, :, None] * dx[:, None, :]).reshape(npts, -1) / h[0],
            (dy[:, :, None] * vx[:, None, :]).reshape(npts, -1) / h[1],
        ]
    rows = np.repeat(np.arange(npts), space.nloc)
    cols = space.cell_dofs[cell].ravel()
    shape = (npts, space.ndof_total)
    as_csr = lambda a: sp.csr_matrix((a.ravel(), (rows, cols)), shape=shape)
    return BasisTrace(space, as_csr(vals), tuple(as_csr(g) for g in grads) if gradient else ())
