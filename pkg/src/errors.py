"""
Exception hierarchy for the rate-making engine
"""
from typing import Optional


class RateEngineError(Exception):
    """Base class for every error raised by the engine"""


class ValidationError(RateEngineError, ValueError):
    """Input data or configuration is invalid (CLI exit code 1)"""


class ComputationError(RateEngineError, ArithmeticError):
    """A statistic cannot be computed from otherwise valid inputs (CLI exit code 2)"""


class PanelFormatError(ValidationError):
    def __init__(self, source: str, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.source = source
        self.row = row
        self.column = column
        location = source
        if row is not None:
            location += f" row {row}"
        if column is not None:
            location += f", column '{column}'"
        super().__init__(f"{location}: {message}")


class NegativeValueError(PanelFormatError):
    pass


class DuplicateKeyError(PanelFormatError):
    pass


class EmptyPanelError(ValidationError):
    pass


class ZeroAreaError(ValidationError):
    def __init__(self, year: int):
        self.year = year
        super().__init__(f"Total area planted in {year} is zero")


class MissingPriceError(ValidationError):
    def __init__(self, crop: str, year: Optional[int] = None):
        self.crop = crop
        self.year = year
        where = f" in {year}" if year is not None else ""
        super().__init__(f"No price for crop '{crop}'{where}")


class DeclarationYearError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NuBelowFloorError(ValidationError):
    def __init__(self, nu: float, floor: float):
        self.nu = nu
        self.floor = floor
        super().__init__(f"Subsidy share nu={nu:.6g} is below the floor {floor:.6g} (1 - E[S]/l)")


class ZeroVarianceError(ComputationError):
    pass


class InsufficientDataError(ComputationError):
    pass


class IdentityCheckError(ComputationError):
    pass
