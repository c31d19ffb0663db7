"""Differentiable architecture search for 1D inverse problems."""
from .autodiff import Parameter, Tensor, backward, grad_check, no_grad, optimizer_step
from .baselines import BudgetPolicy, fixed_op_baseline, random_search, runs_to_beat, single_random
from .config import ExperimentConfig, load_config, resolve
from .engine import PRESETS, HyperParams, TrainSchedule, das_search, das_single_search, train_architecture
from .harness import derive_seed, pearson_linreg, run_study, summarize
from .hyperopt import HPSpace, hyperband_brackets, run_bohb
from .ops import OperationKind
from .signals import CosineConfig, make_operator, psnr
from .spaces import DiscreteArch, SpaceSpec, build_discrete, build_relaxed, discretize, forward_relaxed

__version__ = "0.1.0"
