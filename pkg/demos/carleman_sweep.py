"""
Carleman estimate sweep
=======================

Evaluates both sides of the global estimate for random band-limited fields
over a geometric s-grid.  C_hat stays bounded (no violations) but decays
with s, since the Neumann term on the right carries no weight.
"""

import numpy as np

from magschrod.carleman import TERM_NAMES, bandlimited_field, geometric_s_grid, verify_carleman
from magschrod.grid import SpaceTimeGrid
from magschrod.weights import build_default_weight, certify_pseudoconvexity, observation_boundary

g = SpaceTimeGrid.unit(1, 101, 201, 3.0)
w = build_default_weight(g, [-0.3], lam=1.0)
print("pseudoconvexity epsilon", certify_pseudoconvexity(w).epsilon)
print("observation nodes", np.flatnonzero(observation_boundary(g, w).mask))

s_grid = geometric_s_grid(1, 100, 12)
rng = np.random.default_rng(0)
reports = [verify_carleman(bandlimited_field(g, rng), w, s_grid) for _ in range(10)]
c_max = np.max([r.C_hat for r in reports], axis=0)

print("      s   " + "  ".join(f"{n:>9s}" for n in TERM_NAMES) + "      C_hat")
for k, s in enumerate(s_grid):
    terms = reports[0].terms[k]
    print(f"{s:7.2f}   " + "  ".join(f"{t:9.2e}" for t in terms) + f"  {c_max[k]:9.2e}")
