"""Gradient TD policy evaluation with heavy-ball momentum.

Modules:

* :mod:`.mdp` - benchmark MDPs, feature maps and transition samplers
* :mod:`.model` - exact model matrices, TD fixed point and MSPBE
* :mod:`.algorithms` - GTD, GTD2, TDC and their momentum variants
* :mod:`.sa_framework` - stacked one-timescale system and three-timescale runner
* :mod:`.experiments` - multi-run RMSPBE experiments and presets
* :mod:`.cli` - command-line front end
"""
from .algorithms import (ALGORITHMS, FORMS, REGIMES, DivergenceError, Learner, LearnerState,
                         ScheduleSpec, StepSizes, eta_settling_step, expected_directions,
                         make_learner, sampled_directions, schedule_at, step_gtd, step_gtd2,
                         step_momentum_three_form, step_momentum_two_form, step_tdc,
                         step_vanilla)
from .experiments import (AlgorithmConfig, ConfigError, CurveSet, ExperimentConfig,
                          ExperimentError, compare_presets, export_curves, list_presets,
                          load_curves, load_preset, run_experiment)
from .mdp import (Episode, FeatureMap, Policy, TabularMDP, Transition, TransitionBatch,
                  build_boyan_chain, build_environment, build_random_mdp, build_random_walk,
                  sample_episode, sample_iid, sample_iid_batch)
from .model import (ModelError, ModelMatrices, compute_model, mspbe, neu, rmspbe,
                    stationary_distribution)
from .sa_framework import (StackedSystem, ThreeTSProblem, build_stacked, check_b_conditions,
                           hurwitz_sufficient, is_hurwitz_eig, momentum_problem, run_three_ts)

__version__ = "0.1.0"
