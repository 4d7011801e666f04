"""Exception types shared across the toolkit."""


class DataError(Exception):
    """Input data is missing, unreadable or inconsistent with the request."""


class EstimationError(RuntimeError):
    """A robust estimator could not produce a usable model."""


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""
