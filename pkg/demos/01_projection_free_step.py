"""Projecting without a projection oracle.

The learners never project onto the feasible set.  They only call its linear
optimization oracle (LOO), through an approximately-feasible projection that
returns a feasible ``x`` together with a "pulled-in" point ``y_tilde``.  This
script runs that routine on three sets whose exact projections are expensive
or awkward, and prints the guarantees it certifies along with the oracle cost.

    python demos/01_projection_free_step.py
"""

import numpy as np

from pfoco import Dag, FlowPolytope, PSDCone, Simplex, afp, loo_call_bound, membership

rng = np.random.default_rng(0)

# a small routing network: 0 -> {1, 2} -> 3 -> {4, 5} -> 6
dag = Dag(7, [(0, 1), (0, 2), (1, 3), (2, 3), (1, 2), (3, 4), (3, 5), (4, 6), (5, 6), (4, 5)], 0, 6)
sets = {
    "capped simplex in R^5": Simplex(5),
    "unit-flow polytope (10 edges)": FlowPolytope(dag),
    "trace-bounded PSD cone, 3x3": PSDCone(3, tau=1.0),
}

for name, K in sets.items():
    eps = 1e-3
    y1 = 2.0 * K.outer_radius * rng.standard_normal(K.dim) / np.sqrt(K.dim)
    x0 = K.initial_point()
    K.reset_counter()
    res = afp(K, y1, x0, eps)
    z = K.loo(rng.standard_normal(K.dim))  # some point of the set
    print(f"\n{name}")
    print(f"  ||y1|| = {np.linalg.norm(y1):.3f}  ->  ||y_tilde|| = {np.linalg.norm(res.y_tilde):.3f}")
    print(f"  ||x - y_tilde||^2 = {np.sum((res.x - res.y_tilde) ** 2):.2e}  (<= 3 eps = {3 * eps:.0e})")
    print(f"  distance to a set point: {np.linalg.norm(y1 - z):.3f} before, {np.linalg.norm(res.y_tilde - z):.3f} after")
    print(f"  x feasible: {membership(K, res.x)}")
    bound = loo_call_bound(K.outer_radius, eps, float(np.sum((y1 - x0) ** 2)))
    print(f"  oracle calls: {res.loo_calls} over {res.outer_iterations} pull steps (worst case {bound:.3g})")

# the flow polytope stores points relative to a reference path; recover the flow
K = sets["unit-flow polytope (10 edges)"]
flow = K.flow_of(afp(K, np.ones(K.dim), K.initial_point(), 1e-3).x)
print("\nflow recovered from the last flow point:", np.round(flow, 3))
