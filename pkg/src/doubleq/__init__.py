"""Tabular double Q-learning: learners, finite-time bound calculators and a
seeded Monte-Carlo harness for checking block-wise convergence claims."""

from .mdp import (Mdp, bellman_apply, chain_mdp, fanout_mdp, load_mdp, optimal_q, random_mdp,
                  sample_transition, save_mdp, sup_norm, sup_norm_diff)
from .learners import (ExplorationPolicy, LearnerState, async_double_q_step, exact_drift_mean,
                       init_state, poly_lr, sync_double_q_step, vanilla_q_step)

__version__ = "0.1.0"
