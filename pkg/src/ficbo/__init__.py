"""Feedback-informed in-context black-box optimization on candidate pools."""

from .bias import BiasConfig, BiasRecord, apply_bias_pipeline
from .estimator import InContextOptimizer, make_prior_sampler
from .gp import GpRegressor, sample_gp_joint
from .kernels import KernelSpec, kernel_eval, sample_kernel_spec
from .network import FeedbackAwareNetwork, ModelConfig, load_checkpoint, save_checkpoint
from .tasks import (
    AdditivePriorConfig,
    MixturePriorConfig,
    TaskInstance,
    sample_additive_task,
    sample_mixture_task,
    sample_task,
)
from .training import TrainingConfig, train
from .trees import GradientBoostedTrees, RegressionTree

__all__ = [
    "AdditivePriorConfig",
    "BiasConfig",
    "BiasRecord",
    "FeedbackAwareNetwork",
    "GpRegressor",
    "GradientBoostedTrees",
    "InContextOptimizer",
    "KernelSpec",
    "MixturePriorConfig",
    "ModelConfig",
    "RegressionTree",
    "TaskInstance",
    "TrainingConfig",
    "apply_bias_pipeline",
    "kernel_eval",
    "load_checkpoint",
    "make_prior_sampler",
    "sample_additive_task",
    "sample_gp_joint",
    "sample_kernel_spec",
    "sample_mixture_task",
    "sample_task",
    "save_checkpoint",
    "train",
]

__version__ = "0.1.0"
