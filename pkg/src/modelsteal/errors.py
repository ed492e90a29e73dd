"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A hyperparameter or config field is outside its valid range."""


class ShapeError(ValueError):
    """Tensor/array shapes are inconsistent."""


class LabelError(ValueError):
    """A class label is outside {0..K-1}."""


class DataError(ValueError):
    """A dataset or split does not satisfy its preconditions."""


class SelectionError(ValueError):
    """An invalid query-set selection was requested."""


class ConsistencyError(ValueError):
    """Cross-referenced collections disagree (e.g. foreign sample ids)."""


class BudgetExhausted(RuntimeError):
    """The oracle's query budget cannot cover the requested batch."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss). Carries the step/epoch index."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ResumeError(RuntimeError):
    """A resumed run's config hash does not match the stored manifest."""
