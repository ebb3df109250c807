"""Exception types shared across the package."""


class TbdfsError(Exception):
    pass


class DimensionError(TbdfsError, ValueError):
    """Shapes of operands do not agree."""


class DomainError(TbdfsError, ValueError):
    """Value outside the domain of an operation (e.g. log of a non-positive number)."""


class ConfigError(TbdfsError, ValueError):
    pass


class DataError(TbdfsError, ValueError):
    """Malformed or semantically invalid input data."""


class LookupFailure(TbdfsError, KeyError):
    pass


class SamplingError(TbdfsError, RuntimeError):
    pass


class GuardExceeded(TbdfsError, RuntimeError):
    """An exhaustive enumeration would exceed its size guard."""


class DivergenceError(TbdfsError, RuntimeError):
    pass
