"""One-DOF contact oscillator: the cone is a closed half-circle pair.

With k_n = 3 the free half takes pi and the contact half pi / sqrt(1 + k_n),
so the frequency is 2 pi / (pi + pi/2) = 4/3 and the multiplier is 1.
"""
from __future__ import annotations

import numpy as np

from pwlcone import bench
from pwlcone.cone import solve_elementary_cone
from pwlcone.system import assemble_state_space

ss = assemble_state_space(bench.make_sdof(3.0))
sol = solve_elementary_cone(ss)
print("half-map times :", sol.times, "expected", (np.pi, np.pi / 2))
print("multiplier     :", sol.mu)
print("frequency      :", sol.omega)
print("ray            :", sol.xi)
