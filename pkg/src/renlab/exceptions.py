"""Error taxonomy shared across the package."""


class RenlabError(Exception):
    """Base class for all errors raised by renlab."""


class ShapeError(RenlabError):
    """Tensor extents do not line up for the requested operation."""


class NonFiniteError(RenlabError):
    """An operation produced NaN or infinity."""


class ConfigError(RenlabError):
    """Invalid configuration value or unknown configuration key."""


class ContractError(RenlabError):
    """A documented precondition was violated by the caller."""
