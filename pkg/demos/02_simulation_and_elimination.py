"""Simulation, latent elimination, realizations, and normalization.

An LFR model closes the loop w = Delta(p) z around a constant nine-block
matrix.  At a frozen scheduling point the latent channel can be eliminated
to an ordinary state-space quadruple (A, B, C, D)(p); a rollout of the
interconnection must agree with stepping those frozen matrices.  This
script also shows the exact LFR realization of a model that is affine in
p, and the normalization that maps an arbitrary scheduling box onto
[-1, 1]^n_p.
"""

import numpy as np

from lfrid.lfr import (
    AffineSsModel,
    DeltaStructure,
    LfrPlant,
    SchedulingBox,
    WellPosedFactors,
    affine_ss_to_lfr,
    build_Dzw,
    eliminate_to_ss,
    normalize_scheduling,
    simulate,
)

rng = np.random.default_rng(1)

# -- a random well-posed plant with eta = (2, 1): p_1 repeated twice ------
eta = (2, 1)
n_w = sum(eta)
f = WellPosedFactors(n_w=n_w, dA_lower=rng.normal(size=6),
                     dB_upper=rng.normal(size=3), d_d=rng.normal(size=3))
A = rng.normal(size=(3, 3))
A *= 0.4 / np.max(np.abs(np.linalg.eigvals(A)))
plant = LfrPlant(
    A_x=A, B_w=0.2 * rng.normal(size=(3, n_w)), B_u=rng.normal(size=(3, 1)),
    C_z=0.2 * rng.normal(size=(n_w, 3)), D_zw=build_Dzw(f),
    D_zu=rng.normal(size=(n_w, 1)),
    C_y=rng.normal(size=(1, 3)), D_yw=rng.normal(size=(1, n_w)),
    D_yu=np.zeros((1, 1)), delta=DeltaStructure(eta),
)

N = 200
u = rng.normal(size=(N, 1))
p = rng.uniform(-1, 1, size=(N, 2))
traj = simulate(plant, p, u)  # exogenous scheduling

# step the frozen matrices in parallel
x = np.zeros(3)
worst = 0.0
for k in range(N):
    Ak, Bk, Ck, Dk = eliminate_to_ss(plant, p[k])
    worst = max(worst, float(np.max(np.abs(traj.y[k] - (Ck @ x + Dk @ u[k])))))
    x = Ak @ x + Bk @ u[k]
print(f"rollout vs frozen-matrix stepping, {N} steps: "
      f"max discrepancy = {worst:.2e}")

# -- exact LFR realization of an affine model ----------------------------
m = AffineSsModel(
    A0=0.3 * np.eye(2), B0=np.ones((2, 1)), C0=np.ones((1, 2)),
    D0=np.zeros((1, 1)),
    A_inc=(rng.normal(size=(2, 2)),), B_inc=(rng.normal(size=(2, 1)),),
    C_inc=(rng.normal(size=(1, 2)),), D_inc=(rng.normal(size=(1, 1)),),
)
lfr_m = affine_ss_to_lfr(m)
print(f"\naffine model realized as LFR with eta = {lfr_m.delta.eta} "
      f"(rank of the stacked increment)")
p0 = np.array([0.37])
err = max(np.max(np.abs(X - Y))
          for X, Y in zip(eliminate_to_ss(lfr_m, p0), m.evaluate(p0)))
print(f"evaluation match at p = {p0[0]}: max error = {err:.2e}")

# -- scheduling normalization --------------------------------------------
box = SchedulingBox(np.array([-0.5, 1.0]), np.array([2.0, 3.0]))
plant_bar, c, s = normalize_scheduling(plant, box)
pbar = rng.uniform(-1, 1, size=2)
err = max(np.max(np.abs(X - Y))
          for X, Y in zip(eliminate_to_ss(plant_bar, pbar),
                          eliminate_to_ss(plant, c + s * pbar)))
print(f"\nnormalization of box {box.p_min}..{box.p_max}: center {c}, "
      f"half-width {s}")
print(f"equivalence at a random normalized point: max error = {err:.2e}")
