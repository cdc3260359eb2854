"""Hyperreduced Galerkin-Newton reduced-order models for nonlinear
parabolic problems, with first-order empirical interpolation (FOEIM)."""

from .fom import FullOrderModel, TimeGrid, snapshot_harvest
from .foeim import build_eim_systems, eim_select, evaluate_interpolation_study, nonlinear_pod
from .newton import NewtonConfig, NewtonDiverged
from .pod import SnapshotSet, pod_basis, project
from .problems import make_case
from .rom import GalerkinReference, compare_errors, offline_assemble, online_solve

__version__ = "0.1.0"

__all__ = [
    "FullOrderModel",
    "TimeGrid",
    "snapshot_harvest",
    "build_eim_systems",
    "eim_select",
    "evaluate_interpolation_study",
    "nonlinear_pod",
    "NewtonConfig",
    "NewtonDiverged",
    "SnapshotSet",
    "pod_basis",
    "project",
    "make_case",
    "GalerkinReference",
    "compare_errors",
    "offline_assemble",
    "online_solve",
]
