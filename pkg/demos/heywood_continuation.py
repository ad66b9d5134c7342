"""Heywood cases: box bound, eps-continuation and the ridge penalty.

With correlations r12 = 0.8, r13 = 0.7, r23 = 0.4 a one-factor model
needs a communality of r12 * r13 / r23 = 1.4 for the first variable,
more than its variance, so the ML uniqueness psi_1 is driven to zero.
The plain solver stops on the box ``psi >= eps``; continuation walks eps
down and pins that coordinate; the ridge variant keeps every
``psi_i >= sqrt(2 gamma)`` instead.
"""

import numpy as np

from factmle import (
    ContinuationConfig, CovarianceInput, RidgeConfig, SolverConfig, solve, solve_continuation, solve_ridge,
)

s = np.array([[1.0, 0.8, 0.7], [0.8, 1.0, 0.4], [0.7, 0.4, 1.0]])
cov = CovarianceInput.from_covariance(s, n=500)

for eps in (1e-2, 1e-4, 1e-6):
    phi, trace = solve(cov, SolverConfig(r=1, eps=eps, max_iters=20000))
    print(f"box eps={eps:.0e}: psi = {np.round(1 / phi, 8)}  f = {trace.final_objective:.8f}  "
          f"({trace.iterations} iterations)")

# small eps: the iterate crawls toward zero and the relative-decrease rule
# fires long before it reaches the bound; continuation gets there in ~100 steps
cc = ContinuationConfig.geometric(start=1e-2, stop=1e-8)
phi, pinned, traces = solve_continuation(cov, SolverConfig(r=1), cc)
print(f"continuation over {len(traces)} steps: pinned {pinned}, psi = {1 / phi}, "
      f"{sum(t.iterations for t in traces)} iterations in total")

for gamma in (1e-2, 1e-4):
    phi, trace = solve_ridge(cov, RidgeConfig(r=1, gamma=gamma))
    print(f"ridge gamma={gamma:.0e}: psi = {np.round(1 / phi, 6)}, bound sqrt(2 gamma) = {np.sqrt(2 * gamma):.3e}")
