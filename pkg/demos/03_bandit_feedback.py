"""Learning from function values only.

The bandit learner sees only the numbers ``f_t(z_t)`` and ``g_t(z_t)`` at the
point it plays.  It plays a random point ``z_t = x + mu * u_t`` on a small
sphere around a block center kept inside a shrunk copy of the set, so every
``z_t`` is still feasible.  Scaling ``f(z_t) * u_t`` by ``n / mu`` gives an
unbiased gradient estimate of a smoothed version of ``f``.

    python demos/03_bandit_feedback.py
"""

import numpy as np

from pfoco import Box, default_schedule, gen_planted_quadratic, membership, run_bandit, sample_unit_sphere, summarize
from pfoco.learners import one_point_gradients

rng = np.random.default_rng(0)

# 1. the one-point estimator on a linear function recovers the gradient
a, x, mu = np.array([1.0, -0.5, 2.0]), np.array([0.2, 0.1, -0.3]), 0.2
U = sample_unit_sphere(rng, 3, 200_000)
est = one_point_gradients((x + mu * U) @ a, U, mu)
print("true gradient     ", a)
print("estimator average ", np.round(est.mean(axis=0), 3), f"(sd per draw ~{est.std(axis=0).max():.1f})")

# 2. a bandit run on the cube [-1, 1]^3
K = Box(3, 1.0)
T = 2**14
problem = gen_planted_quadratic(K, T, seed=3, drift=0.05)
schedule = default_schedule("bandit", problem, scales={"eps": 1e-3, "delta": 1e-3})
trace = run_bandit(problem, schedule, rng_seed=11)
m = summarize(trace, problem, [(1, T), (3 * T // 4, T)])
outside = sum(not membership(K, z) for z in trace.played)
print(f"\nT={T}, block K={schedule.K}, smoothing mu={schedule.mu:.3f}")
print(f"played points outside the cube: {outside} of {T}")
print(f"regret {m.regret:.1f}, violation {m.violation:.1f}, final dual variable {trace.lam[-1]:.3g}")
last = m.intervals[1]
print(f"last quarter: regret per round {last.regret / (T // 4 + 1):.3f} vs {m.regret / T:.3f} overall")
