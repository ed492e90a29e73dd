"""Query-efficient black-box model extraction at desk scale.

Two-stage attack: an anchor classifier trained on a small set of hard
labels queried from the victim, then a student trained on labeled plus
unlabeled proxy data with guidance from the frozen anchor and an EMA
teacher. The final student is the thief model.
"""

from .data import LabeledSet, ProxyPool, SplitSpec, UnlabeledSet
from .distill import BatchPlan, LossConfig, train_student
from .errors import (
    BudgetExhausted,
    ConfigError,
    DataError,
    ResumeError,
    SelectionError,
    ShapeError,
    TrainingError,
)
from .metrics import MetricsReport, compute_metrics, report_victim_baseline
from .oracle import QueryBudget, VictimOracle, train_victim
from .runner import compare_runs, load_config, run_pipeline

__all__ = [
    "BatchPlan",
    "BudgetExhausted",
    "ConfigError",
    "DataError",
    "LabeledSet",
    "LossConfig",
    "MetricsReport",
    "ProxyPool",
    "QueryBudget",
    "ResumeError",
    "SelectionError",
    "ShapeError",
    "SplitSpec",
    "TrainingError",
    "UnlabeledSet",
    "VictimOracle",
    "compare_runs",
    "compute_metrics",
    "load_config",
    "report_victim_baseline",
    "run_pipeline",
    "train_student",
    "train_victim",
]
