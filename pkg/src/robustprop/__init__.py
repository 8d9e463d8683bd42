"""Training, attacking and verifying small ReLU classifiers against robustness properties."""
from .attacks import AttackParams, fgsm, pgd, property_pgd, sample_ball
from .data import Dataset, gen_blobs, gen_two_moons, load_csv, load_idx, save_csv
from .estimator import RobustMLPClassifier
from .losses import LossConfig, combined_loss, constraint_loss
from .metrics import (
    MetricReport, constraint_accuracy, constraint_satisfaction, constraint_security,
)
from .nn import Network, backward, forward, init_network, load_model, save_model
from .properties import Kind, Metric, PropertySpec, make_property, to_constraint, violation_margin
from .training import Mode, TrainConfig, train_network
from .verifier import Budget, Status, verify

__version__ = "0.1.0"

__all__ = [
    "AttackParams", "Budget", "Dataset", "Kind", "LossConfig", "Metric", "MetricReport", "Mode",
    "Network", "PropertySpec", "RobustMLPClassifier", "Status", "TrainConfig", "backward",
    "combined_loss", "constraint_accuracy", "constraint_loss", "constraint_satisfaction",
    "constraint_security", "fgsm", "forward", "gen_blobs", "gen_two_moons", "init_network",
    "load_csv", "load_idx", "load_model", "make_property", "pgd", "property_pgd", "sample_ball",
    "save_csv", "save_model", "to_constraint", "train_network", "verify", "violation_margin",
]
