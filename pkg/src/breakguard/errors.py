"""Exception hierarchy shared across breakguard modules."""

from __future__ import annotations


class BreakguardError(Exception):
    """Base class for every error raised by this package."""


class ContractError(BreakguardError, ValueError):
    """A caller violated an operation's precondition."""


class SchemaError(BreakguardError):
    """Input data does not conform to the normalized dialogue schema."""

    def __init__(self, message: str, *, dialogue_id: str | None = None, turn_index: int | None = None):
        where = []
        if dialogue_id is not None:
            where.append(f"dialogue {dialogue_id!r}")
        if turn_index is not None:
            where.append(f"turn {turn_index}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.dialogue_id = dialogue_id
        self.turn_index = turn_index


class JSONParseError(BreakguardError):
    """Source bytes are not valid JSON."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BudgetError(BreakguardError):
    """A rendered prompt exceeds the configured token cap."""

    def __init__(self, estimated: int, cap: int):
        self.estimated = estimated
        self.cap = cap
        self.overage = estimated - cap
        super().__init__(f"prompt estimated at {estimated} tokens exceeds cap {cap} by {self.overage}")


class InsufficientExemplarsError(ContractError):
    """The exemplar pool lacks a (difficulty, label) bucket the strategy needs."""

    def __init__(self, difficulty: str, label: str, needed: int, available: int):
        self.bucket = (difficulty, label)
        super().__init__(
            f"exemplar pool has {available} of {needed} required ({difficulty}, {label}) exemplars"
        )


class TransportError(BreakguardError):
    """A backend could not be reached or kept failing after retries."""


class FixtureMissError(BreakguardError):
    """A replay backend has no recorded response for a request."""

    def __init__(self, fingerprint: str):
        self.fingerprint = fingerprint
        super().__init__(f"no recorded fixture for request {fingerprint}")


class GenerationError(BreakguardError):
    """A backend returned an unusable (e.g. empty) completion."""


class UnrecoverableOutputError(BreakguardError):
    """Neither the monitor's output nor the judge's reinterpretation could be parsed."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class PricingError(BreakguardError):
    """A model or backend id has no entry in the pricing table."""


class ConfigError(BreakguardError):
    """Gateway or backend configuration is incomplete or inconsistent."""
