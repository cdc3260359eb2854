"""Damping-free Newton iteration shared by the full and reduced solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NewtonConfig:
    """Stopping rule for Newton.

    Converged when ``||R|| <= tol_abs + tol_rel * ||R(x0)||``, or when the
    update satisfies ``||dx|| <= step_tol * max(1, ||x||)`` (the residual has
    then reached its round-off floor).
    """

    tol_abs: float = 1e-10
    tol_rel: float = 1e-8
    step_tol: float = 1e-10
    max_iter: int = 50


class NewtonDiverged(RuntimeError):
    """Newton failed: iteration cap reached or a non-finite iterate."""

    def __init__(self, message, history=(), step=None):
        super().__init__(message if step is None else f"{message} (time step {step})")
        self.history = list(history)
        self.step = step


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    history: list = field(default_factory=list)


def _norm(v):
    # Euclidean norm without np.linalg.norm's overhead; this sits on the
    # reduced solver's hot path
    return math.sqrt(float(v @ v))


def newton(residual, jacobian, x0, cfg: NewtonConfig, solve):
    """Solve ``residual(x) = 0``.

    ``jacobian(x)`` returns whatever ``solve(J, rhs)`` accepts.
    """
    x = np.array(x0, dtype=float, copy=True)
    r = residual(x)
    rnorm = _norm(r)
    history = [rnorm]
    if not math.isfinite(rnorm):
        raise NewtonDiverged("non-finite initial residual", history)
    tol = cfg.tol_abs + cfg.tol_rel * rnorm
    for it in range(cfg.max_iter):
        if rnorm <= tol:
            return NewtonResult(x, it, history)
        dx = solve(jacobian(x), -r)
        x = x + dx
        r = residual(x)
        rnorm = _norm(r)
        history.append(rnorm)
        xnorm = _norm(x)
        if not (math.isfinite(rnorm) and math.isfinite(xnorm)):
            raise NewtonDiverged(f"non-finite iterate at Newton iteration {it + 1}", history)
        if _norm(dx) <= cfg.step_tol * max(1.0, xnorm):
            return NewtonResult(x, it + 1, history)
    if rnorm <= tol:
        return NewtonResult(x, cfg.max_iter, history)
    raise NewtonDiverged(f"no convergence in {cfg.max_iter} iterations, residual {rnorm:.3e}", history)
