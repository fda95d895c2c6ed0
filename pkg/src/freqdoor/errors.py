"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument or configuration value violates its documented contract."""


class NumericError(ArithmeticError):
    """Non-finite values reached a numeric kernel."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, batch_index: int):
        super().__init__(f"{message} (batch {batch_index})")
        self.batch_index = batch_index


class DependencyError(RuntimeError):
    """A pipeline stage is missing a prerequisite artifact."""


class CheckpointError(ValueError):
    """A checkpoint manifest disagrees with its binary blob."""
