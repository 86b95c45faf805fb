"""Graph-style curve over the master angle and its Fourier truncation.

At k_n/k = 1.5 the master angle advances monotonically so the slave
coordinates are single-valued functions of theta.  They are steep where the
angle rate is small, and a short Fourier series resolves them slowly.  The
study prints the ROM error against the full system for growing N_h, then
shows the fold diagnosis at k_n/k = 10 where the graph form breaks down.
"""
from __future__ import annotations

from pwlcone import bench
from pwlcone import graphstyle as gs
from pwlcone.system import assemble_state_space

ss = assemble_state_space(bench.make_chain_3dof(1.5))
sol = bench.conservative_branch_cone(1.5)
sel = gs.MasterSelection.switching_dof(ss)
prev = None
for nh in (20, 40, 80):
    if prev is None:
        cv = gs.solve_generating_curve_hbm(ss, sel, nh, reference=sol)
    else:
        cv = gs.solve_generating_curve_hbm(ss, sel, nh, guess=prev)
    prev = cv
    err, _ = bench.gs_rom_error(ss, cv, sol.T, periods=5)
    print(f"N_h = {nh:3d}: residual {cv.report.residual_norm:.1e}, ROM error over 5 periods {err:.2e}")

ss10 = assemble_state_space(bench.make_chain_3dof(10.0))
d = gs.diagnose_failures(ss10, gs.MasterSelection.switching_dof(ss10), bench.conservative_branch_cone(10.0))
print(f"k_n/k = 10: {d.kind}, theta* = {d.evidence['theta_star']:.4f}, |Theta'| = {d.evidence['abs_theta_rate']:.1e}")
