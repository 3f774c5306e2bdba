"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericDivergenceError -> 4. Anything else is a plain crash.
"""


class RainError(Exception):
    pass


class ConfigError(RainError):
    """Invalid or inconsistent configuration, detected before any compute."""


class DataError(RainError):
    """Malformed, truncated, or incompatible data files."""


class NumericDivergenceError(RainError):
    """Non-finite values produced during simulation or training."""

    def __init__(self, message, step=None, agent=None, channel=None):
        super().__init__(message)
        self.step = step
        self.agent = agent
        self.channel = channel


class UndefinedCorrelationError(RainError):
    """Pearson correlation requested on a zero-variance operand."""
