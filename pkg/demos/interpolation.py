"""Transport-regularized divergence between its two limits
==========================================================

Scaling the cost by ``r`` slides ``D^{rc}(Q || P)`` from a pure transport
cost (small ``r``, after dividing by ``r``) to a pure f-divergence (large
``r``). Run with ``python demos/interpolation.py``.
"""

# %%
import numpy as np

from armor import KL, Alpha, d_f, dc_scan_r, ot_cost

cost = np.array([[0.0, 1.0], [1.0, 0.0]])
P = np.array([0.5, 0.5])
Q = np.array([0.2, 0.8])
ladder = np.logspace(-4, 4, 17)

# %%
# The two reference values the scan should approach.
ot = ot_cost(cost, P, Q)[0]
print(f"transport cost C(P, Q)   = {ot:.6f}")
for spec in (KL(), Alpha(2)):
    print(f"{spec}: D(Q || P)  = {d_f(spec, Q, P):.6f}")

# %%
# Between them, D^{rc} grows with r while D^{rc} / r shrinks.
for spec in (KL(), Alpha(2)):
    print(f"\n{spec}")
    print(f"{'r':>10} {'D^rc':>12} {'D^rc / r':>12}")
    for r, value in dc_scan_r(spec, cost, P, Q, ladder):
        print(f"{r:10.1e} {value:12.6f} {value / r:12.6f}")
