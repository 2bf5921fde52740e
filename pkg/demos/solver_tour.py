"""
Forward solver tour
===================

Crank-Nicolson on the free eigenmode, a gauge transformation and a
norm-preserving run with a random real potential.
"""

import numpy as np

from magschrod.grid import SpaceTimeGrid, l2_norm_spacetime
from magschrod.solver import ElectromagneticPotential, solve_forward

# free eigenmode sin(pi x) exp(-i pi^2 t): error drops by ~4 per halving
for nx in (51, 101, 201):
    g = SpaceTimeGrid.unit(1, nx, nx, 1.0)
    x = g.axes[0]
    sol = solve_forward(ElectromagneticPotential.zero(g), np.sin(np.pi * x))
    exact = np.sin(np.pi * x)[None] * np.exp(-1j * np.pi**2 * g.t)[:, None]
    print(f"nx={nx:4d}  L2(Q) error {l2_norm_spacetime(g, sol.u - exact):.3e}")

# gauge: A = grad psi with psi = 0 on the boundary only changes the phase
g = SpaceTimeGrid.unit(1, 101, 101, 1.0)
x = g.axes[0]
psi = 0.3 * np.sin(np.pi * x)
pot = ElectromagneticPotential(g, 0.0, (0.3 * np.pi * np.cos(np.pi * x))[:, None], -0.3 * np.pi**2 * np.sin(np.pi * x))
free = solve_forward(ElectromagneticPotential.zero(g), np.sin(np.pi * x))
gauged = solve_forward(pot, np.exp(-1j * psi) * np.sin(np.pi * x))
print("gauge mismatch", l2_norm_spacetime(g, gauged.u - np.exp(-1j * psi) * free.u))

# real potentials keep the L2 norm to rounding
g = SpaceTimeGrid.unit(2, 31, 51, 1.0)
X = g.coords
rho = np.cos(2 * X[..., 0] - X[..., 1])
A = np.stack([np.sin(X[..., 1]), np.cos(X[..., 0])], axis=-1)
u0 = np.prod(np.sin(np.pi * X), axis=-1) * np.exp(3j * X[..., 0])
norms = solve_forward(ElectromagneticPotential(g, rho, A), u0).norms()
print("norm drift", np.max(np.abs(norms / norms[0] - 1)))
