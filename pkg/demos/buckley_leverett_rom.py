"""Hyperreduced model of the Buckley-Leverett problem, end to end.

1. Solve the full model at six training parameters and collect snapshots.
2. Build a POD basis and first-order interpolation systems for both flux
   components.
3. Assemble the reduced operators once, then sweep a test sample online
   and compare against the full model and the Galerkin-Newton reference.

Run: python demos/buckley_leverett_rom.py  (about 30 s)
"""

import time

import numpy as np

from hyperrom.fom import FullOrderModel, TimeGrid, snapshot_harvest
from hyperrom.foeim import build_eim_systems
from hyperrom.pod import pod_basis, project
from hyperrom.problems import BL_TRAINING, bl_space, buckley_leverett, uniform_sample
from hyperrom.rom import GalerkinReference, compare_errors, offline_assemble, online_solve

problem, space = buckley_leverett(), bl_space(16)
model = FullOrderModel(problem, space)
grid = TimeGrid(1.0, 25)
print(f"full model: {space.ndof} unknowns, {space.nquad} quadrature points")

snaps = snapshot_harvest(problem, space, BL_TRAINING, grid, model=model)
print(f"{snaps.K} snapshots, mean Newton iterations "
      f"{np.mean([t.newton_iters.mean() for t in snaps.trajectories]):.1f}")

tests = uniform_sample(0.03, 0.1, 5)
foms = [model.solve(mu, grid) for mu in tests]
fom_time = sum(f.wall_time for f in foms)

basis_all = pod_basis(snaps, N=20)
print("\n   N     GN error   FOEIM L=1   FOEIM L=3   online s (L=3)")
for N in (5, 10, 20):
    basis = basis_all.truncate(N)
    a0 = [project(basis, f.states[0]) for f in foms]
    gn = GalerkinReference(space, problem, basis, model)
    gn_err = np.mean([compare_errors(f, gn.solve(mu, grid, a), basis).mean_u for f, mu, a in zip(foms, tests, a0)])
    errs = []
    for L in (1, 3):
        ops = offline_assemble(space, problem, basis, build_eim_systems(snaps, problem.nonlinear, L, 2 * N), model)
        t0 = time.perf_counter()
        roms = [online_solve(ops, problem, mu, grid, a) for mu, a in zip(tests, a0)]
        online = time.perf_counter() - t0
        errs.append(np.mean([compare_errors(f, r, basis).mean_u for f, r in zip(foms, roms)]))
    print(f"{N:4d}  {gn_err:11.3e} {errs[0]:11.3e} {errs[1]:11.3e} {online:10.3f}")

print(f"\nfull model time for the same sweep: {fom_time:.2f} s")
