"""Contrastive mutual-information estimators (CPC, ML-CPC and their reweighted forms)."""
from .critics import (AdamState, CriticModel, MlpParams, adam_step, critic_backward,
                      critic_logits, load_checkpoint, make_critic, save_checkpoint)
from .errors import DomainError, SamplerError, ShapeError, StateError
from .experiments import (EstimateTrace, StaircaseConfig, SweepResult, run_bias_variance_sweep,
                          run_staircase, run_timing_parity)
from .numerics import RngState, logsumexp, marginal_shuffle, sample_correlated_gaussian
from .objectives import (AlphaSchedule, ObjectiveSpec, alpha_min, cpc_value, ml_cpc_value,
                         objective_grad_logits, schedule_alpha)
from .oracles import (BinaryWorld, OracleStats, binary_cpc_oracle, binary_mlcpc_oracle,
                      binary_true_mi, exchangeable_bound_mc, gaussian_true_mi)

__version__ = "0.1.0"
