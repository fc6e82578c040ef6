"""
Stability of the momentum iterates
==================================

With equal step sizes the three iterates form one linear system driven by a
matrix G; it is Hurwitz whenever w(w+1) exceeds ||A||^2. With separated step
sizes the iterates are a three-timescale scheme and each level needs its own
stable mean map.
"""

# %%
import numpy as np

from momentum_gtd import (ScheduleSpec, build_environment, build_stacked, check_b_conditions,
                          compute_model, hurwitz_sufficient, is_hurwitz_eig, momentum_problem)

env = build_environment("rw5")
model = compute_model(*env)

# %%
for w in (-1.0, 0.01, 0.1, 1.0):
    G = build_stacked(model, w).G
    ok, top = is_hurwitz_eig(G)
    print(f"w={w:5.2f}  sufficient={hurwitz_sufficient(model.A_bar, w)!s:5}  "
          f"Hurwitz={ok!s:5}  max Re={top:+.3e}")

# %%
# G's eigenvalues only depend on the singular values of A, and the cubic they
# solve is stable exactly when w(w+1) > ||A||^2. At w = 0.01, w(w+1) = 0.0101
# falls just short.
print("||A||^2 =", np.linalg.norm(model.A_bar, 2) ** 2)

# %%
spec = ScheduleSpec("three_ts", 0.25, 0.125, 0.2, w=0.1)
report = check_b_conditions(momentum_problem("gtd2", model, spec, env=env))
print(report.text())
