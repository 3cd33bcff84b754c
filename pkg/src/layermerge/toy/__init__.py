from .data import DomainShift, ToyDataset, make_domain_pair
from .model import ToyModel, evaluate, softmax
from .training import TrainConfig, TrainResult, TrainingDivergedError, train
from .fisher import estimate_fisher
from .experiment import ExperimentConfig, render_report, run_experiment

__all__ = [
    "DomainShift",
    "ToyDataset",
    "make_domain_pair",
    "ToyModel",
    "evaluate",
    "softmax",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "train",
    "estimate_fisher",
    "ExperimentConfig",
    "render_report",
    "run_experiment",
]
