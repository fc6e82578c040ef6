"""
Environments and their exact linear model
=========================================

Build the four benchmark chains, then look at the quantities every learner is
measured against: the stationary distribution, the matrices A, b, C and the
TD fixed point.
"""

# %%
import numpy as np

from momentum_gtd import build_environment, compute_model, mspbe, rmspbe

np.set_printoptions(precision=4, suppress=True)

# %%
# The Boyan chain: 13 live states plus an absorbing end, four spiked features.
mdp, policy, features = build_environment("boyan14")
print(features.phi)

# %%
model = compute_model(mdp, policy, features)
print("d_pi      ", model.d_pi)
print("theta*    ", model.theta_star)
print("A eigvals ", np.linalg.eigvals(model.A_bar))

# The fixed point solves A theta + b = 0, so its MSPBE is zero up to rounding.
print("MSPBE(theta*) =", mspbe(model.theta_star, model))
# Learners start from zero; this is where every curve begins.
print("RMSPBE(0)     =", rmspbe(np.zeros(model.dim), model))

# %%
# The same summary for the other environments.
for name in ("rw5", "rw19", "randmdp(0,20,5)"):
    m = compute_model(*build_environment(name))
    sym = np.linalg.eigvalsh((m.A_bar + m.A_bar.T) / 2)
    print(f"{name:16s} d={m.dim:2d}  ||A||={np.linalg.norm(m.A_bar, 2):.3f}  "
          f"max eig of sym(A)={sym.max():.4f}  RMSPBE(0)={rmspbe(np.zeros(m.dim), m):.3f}")
