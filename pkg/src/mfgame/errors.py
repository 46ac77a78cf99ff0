"""Exception types raised across the package."""


class MFGameError(Exception):
    """Base class for all engine errors."""


class InvalidPoint(MFGameError, ValueError):
    pass


class DimError(MFGameError, ValueError):
    pass


class InvalidMeasure(MFGameError, ValueError):
    pass


class OracleTooLarge(MFGameError, ValueError):
    pass


class DegenerateMarginal(MFGameError, ValueError):
    pass


class InvalidKernel(MFGameError, ValueError):
    pass


class UnknownAtom(MFGameError, KeyError):
    pass


class IncompleteResponse(MFGameError, ValueError):
    pass


class SearchSpaceTooLarge(MFGameError, RuntimeError):
    """Exhaustive enumeration would exceed the configured cap."""


class DynamicsError(MFGameError, RuntimeError):
    pass


class FlowDomainError(MFGameError, ValueError):
    pass


class StepTooLarge(MFGameError, ValueError):
    pass


class PlanMismatch(MFGameError, ValueError):
    pass


class GridError(MFGameError, ValueError):
    pass


class GraphTooLarge(MFGameError, RuntimeError):
    def __init__(self, message, layer_sizes=None):
        super().__init__(message)
        self.layer_sizes = list(layer_sizes or [])


class TableIncomplete(MFGameError, ValueError):
    pass


class ConfigError(MFGameError, ValueError):
    pass
