"""Exception types shared across the package.

Every error the CLI maps to an exit code derives from PflsimError, so the
entry point can translate failures without matching on message text.
"""

from __future__ import annotations


class PflsimError(Exception):
    """Base class for all package errors."""


class DimensionError(PflsimError, ValueError):
    """Array or parameter-vector shapes are inconsistent."""


class EmptyInputError(PflsimError, ValueError):
    """An operation received an empty collection it cannot act on."""


class ConfigError(PflsimError, ValueError):
    """Invalid experiment configuration.

    ``field`` names the offending config entry when known, so CLI messages
    can point at the exact key.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class ScheduleOverrunError(PflsimError, ValueError):
    """More training epochs consumed than the schedule allows."""


class PreconditionError(PflsimError, ValueError):
    """A caller-asserted precondition does not hold."""


class DataFormatError(PflsimError, ValueError):
    """A dataset file failed to parse.

    ``offset`` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class DivergedRunError(PflsimError, RuntimeError):
    """Training produced non-finite parameters.

    ``round_index`` is the 1-based global round in which divergence was
    detected.
    """

    def __init__(self, message: str, round_index: int | None = None):
        super().__init__(message)
        self.round_index = round_index
