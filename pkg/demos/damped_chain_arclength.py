"""Damped three-mass chain with a stiff contact: arc-length ROM.

The invariant cone at k_n/k = 10, c/k = 0.0295 crosses the switching
boundary twice per cycle.  The generating curve is parametrized by arc length
on the unit sphere; the multiplier follows from a line integral along it and
the reduced model reproduces the full amplitude decay.
"""
from __future__ import annotations

import numpy as np

from pwlcone import arclength as al
from pwlcone import bench
from pwlcone.flow import poincare_map_k
from pwlcone.system import assemble_state_space

ss = assemble_state_space(bench.make_chain_3dof(10.0, 0.0295))
sol = bench.damped_cone_10()
y, _ = poincare_map_k(ss, sol.xi, sol.k)
print(f"cone: k = {sol.k}, mu = {sol.mu:.8f}, period = {sol.T:.5f}")

curve = al.solve_generating_curve(ss, sol, method="shooting", n_harmonics=12)
print(f"curve length L = {curve.L:.6f}, closure {curve.diagnostics['closure']:.1e}")
mu = al.multiplier_line_integral(ss, curve)
print(f"line-integral mu = {mu:.10f}, return-map ratio = {np.linalg.norm(y):.10f}")

hb = al.solve_generating_curve(ss, sol, method="hbm", n_harmonics=12)
print(f"N_h = 12 harmonic balance mu = {al.multiplier_line_integral(ss, hb):.6f} (truncated Fourier curve)")

err, _ = bench.al_rom_error(ss, curve, sol, decay=10.0, dof=2)
print(f"ROM vs full simulation, x3 over a 10x decay: relative sup-error {err:.2e}")
