# data/errors.py


class LoadError(ValueError):
    """A feature, label or manifest file is malformed."""


class GenerationError(RuntimeError):
    """Synthetic dataset generation could not satisfy its parameters."""


class BatchingError(ValueError):
    """The dataset or batch size cannot form a batch plan."""
