"""
Learning curves on the Boyan chain
==================================

A scaled-down version of the standard protocol: several independent runs,
RMSPBE after every episode, averaged. The curves are written to CSV for
plotting elsewhere.
"""

# %%
import tempfile
from dataclasses import replace
from pathlib import Path

from momentum_gtd import export_curves, load_preset, run_experiment

cfg = load_preset("boyan_one_ts")
cfg = replace(cfg, n_runs=10, n_episodes=100)
curves = run_experiment(cfg)

# %%
print("episode " + "".join(f"{label:>16s}" for label in curves.labels))
for k in (0, 9, 24, 49, 99):
    row = "".join(f"{curves.mean(label)[k]:16.4f}" for label in curves.labels)
    print(f"{k + 1:7d} {row}")

# %%
vanilla = run_experiment(replace(load_preset("boyan_vanilla"), n_runs=10, n_episodes=100))
for algo in ("gtd", "gtd2", "tdc"):
    print(f"{algo:5s} AUC vanilla {vanilla.auc(algo):8.2f}   "
          f"one_ts momentum {curves.auc(f'{algo}-m/one_ts'):8.2f}")

# %%
out = Path(tempfile.mkdtemp()) / "boyan_one_ts.csv"
raw, agg = export_curves(curves, out)
print("wrote", raw, "and", agg)
