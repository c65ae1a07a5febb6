"""Exception types shared across the engine."""


class PayEquityError(Exception):
    """Base class for engine errors."""


class SchemaError(PayEquityError):
    """Input file does not match the required schema."""


class EmptyDatasetError(PayEquityError):
    """No rows survived validation."""


class ConfigError(PayEquityError):
    """A configuration value violates its constraints."""


class NumericOverflowError(PayEquityError):
    """A density or gradient evaluation produced a non-finite value."""

    def __init__(self, block: str, message: str = ""):
        self.block = block
        super().__init__(message or f"non-finite value in block '{block}'")


class AdaptationError(PayEquityError):
    """Warmup adaptation failed (e.g. step size collapsed)."""


class SamplerRunError(PayEquityError):
    """A chain failed during sampling."""


class IntegrityError(PayEquityError):
    """Stored draws do not match their recorded digests."""


class ContractViolation(PayEquityError):
    """Inputs from different runs or datasets were mixed."""
