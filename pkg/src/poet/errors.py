"""Exception hierarchy shared by every subsystem."""


class PoetError(Exception):
    """Base class for all errors raised by this package."""


class InputError(PoetError, ValueError):
    """An argument violates a documented precondition."""


class DimensionError(InputError):
    """Tensor shapes are incompatible for the requested operation."""


class AxisError(InputError):
    pass


class ContractError(PoetError, RuntimeError):
    pass


class DegeneracyError(InputError):
    """A 6D rotation vector cannot be orthonormalized."""


class ConfigError(PoetError, ValueError):
    pass


class CapacityError(InputError):
    pass


class ClassError(InputError):
    pass


class UndefinedLossError(PoetError, RuntimeError):
    """A batch contained no objects, so the averaged loss is undefined."""


class TrainingFault(PoetError, FloatingPointError):
    pass


class PackingError(PoetError, RuntimeError):
    pass


class ParseError(PoetError, ValueError):
    pass


class VersionError(PoetError, ValueError):
    pass
