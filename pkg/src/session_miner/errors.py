"""Exception hierarchy for the session-miner pipeline.

Each error class maps to a distinct CLI exit code (see cli.EXIT_CODES).
"""


class SessionMinerError(Exception):
    """Base class for all session-miner errors."""


class ConfigError(SessionMinerError):
    """Invalid run configuration (bad threshold, malformed window, ...)."""


class UnknownAdapterError(SessionMinerError):
    def __init__(self, adapter: str):
        super().__init__(f"unknown log adapter: {adapter!r}")
        self.adapter = adapter


class MalformedHeaderError(SessionMinerError):
    """Header row is missing required columns for the chosen adapter."""


class RejectRateExceededError(SessionMinerError):
    """Too many rows failed to parse; the adapter is probably wrong."""

    def __init__(self, rate: float, ceiling: float):
        super().__init__(
            f"reject rate {rate:.4f} exceeds ceiling {ceiling:.4f}; "
            "wrong adapter or corrupted input"
        )
        self.rate = rate
        self.ceiling = ceiling


class UnknownRuleFieldError(SessionMinerError):
    def __init__(self, field: str):
        super().__init__(f"unknown field in gaming rule: {field!r}")
        self.field = field


class InvalidSpecError(SessionMinerError):
    """Synthetic cohort spec violates its invariants."""


class InsufficientDataError(SessionMinerError):
    """Not enough students/months/rows for the requested analysis."""


class DegenerateVarianceError(SessionMinerError):
    """Student and residual variance are both zero; G is undefined."""


class SingularDesignError(SessionMinerError):
    """Design matrix is rank deficient."""


class PerfectFitError(SessionMinerError):
    """RSS is zero; the Gaussian BIC is undefined."""


class InfiniteVIFError(SessionMinerError):
    def __init__(self, column: str):
        super().__init__(f"exact collinearity: VIF for {column!r} is infinite")
        self.column = column


class ZeroVarianceError(SessionMinerError):
    """Input vector has no variance."""
