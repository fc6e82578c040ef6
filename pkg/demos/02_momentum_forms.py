"""
Two ways to write heavy-ball momentum
=====================================

The momentum learners keep either (theta, theta_prev) or a velocity v next to
theta. Both describe the same iterates; this script feeds one stream of
transitions to both and watches the gap, and shows how the momentum weight
eta_t creeps towards one.
"""

# %%
import numpy as np

from momentum_gtd import (ScheduleSpec, build_environment, compute_model, eta_settling_step,
                          make_learner, sample_episode, schedule_at)

mdp, policy, features = build_environment("boyan14")
spec = ScheduleSpec("three_ts", alpha_exp=0.25, beta_exp=0.125, rho_exp=0.2, w=0.1)

rng = np.random.default_rng(0)
stream = []
while len(stream) < 5000:
    stream.extend(sample_episode(mdp, policy, features, rng))

# %%
two = make_learner("tdc", "two_form", spec, features.dim, gamma=mdp.gamma)
three = make_learner("tdc", "three_form", spec, features.dim, gamma=mdp.gamma)
gap = 0.0
for tr in stream[:5000]:
    gap = max(gap, np.linalg.norm(two.step(tr).theta - three.step(tr).theta))
print("largest |theta_two - theta_three| over 5000 steps:", gap)
# The forms agree, but agreeing is not converging: with these slowly decaying
# steps theta is still far from the fixed point and moving away from it.
print("theta after 5000 steps:", three.theta)
print("theta*                :", compute_model(mdp, policy, features).theta_star)

# %%
# eta_t = (rho_t - w alpha_t) / rho_{t-1} starts negative and tends to one,
# but only polynomially slowly.
for t in (1, 10, 100, 10**4, 10**6, 10**8):
    print(f"t={t:>9d}  eta={schedule_at(spec, t).eta:+.4f}")
print("|eta - 1| < 0.01 from about t =", f"{eta_settling_step(spec):.3g}")
