"""Metric-learning zero-shot classification with hard negative mining."""

from .data import (
    ClassDescriptorSet,
    Dataset,
    SyntheticSpec,
    build_candidate_pool,
    generate_synthetic,
    load,
    save,
)
from .evaluation import EvalReport, classify, evaluate
from .experiments import multi_run, ratio_sweep
from .mining import Strategy
from .model import Hyperparameters, ModelParameters, PairSet, load_model, save_model
from .train import LearningCurve, TrainConfig, grid_search, train

__version__ = "0.1.0"
