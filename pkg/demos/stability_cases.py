"""
Lipschitz stability experiments
===============================

Paired forward solves for the three potential classes.  The ratio of the
coefficient gap to the boundary observation stays put as delta shrinks.
"""

from magschrod.carleman import verify_initial_bound
from magschrod.grid import SpaceTimeGrid
from magschrod.stability import (
    make_case1_pair,
    make_case2_pair,
    make_case3_pair,
    make_divfree_pair,
    make_initial_states,
    run_stability,
)
from magschrod.weights import build_default_weight

# electric potential only, one constant initial state
g1 = SpaceTimeGrid.unit(1, 101, 151, 3.0)
w1 = build_default_weight(g1, [-0.3])
for delta in (1e-1, 1e-2, 1e-3):
    rep = run_stability(make_case1_pair(g1, delta, 0.0), make_initial_states("case1", g1), w1)
    print(f"case1  delta={delta:g}  ratio={rep.ratio:.5f}")

# electromagnetic pairs in 2D: n + 1 states, or n for the divergence-free variant
g2 = SpaceTimeGrid.unit(2, 31, 61, 1.0)
w2 = build_default_weight(g2, [-0.3, 0.5])
makers = {"case2": make_case2_pair, "case3": make_case3_pair, "case3-divfree": make_divfree_pair}
for case, make in makers.items():
    states = make_initial_states(case, g2)
    for delta in (1e-1, 1e-2):
        pair = make(g2, delta)
        rep = run_stability(pair, states, w2, keep_fields=True)
        bound = all(verify_initial_bound(v, w2, 50.0).ok for v in rep.v_fields)
        print(f"{case:14s} delta={delta:g}  ratio={rep.ratio:.5f}  M_eff={pair.effective_M}  initial bound {bound}")
