"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated a function's precondition (shape, range, state)."""


class ConfigurationError(ValueError):
    """Inputs cannot produce a valid configuration (grid, batch, dataset)."""


class DegenerateDistributionError(ContractError):
    """Resampling weights carry no probability mass."""


class StoreError(IOError):
    """Parameter store file is missing, corrupt or not resident."""


class ParseError(ValueError):
    """A manifest or config field could not be parsed."""
