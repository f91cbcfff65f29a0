"""Exception types shared across the package."""


class RfimError(Exception):
    """Base class for all rfimlab errors."""


class CapacityError(RfimError, ValueError):
    """A lattice, enumeration or replica budget was exceeded."""


class ValidationError(RfimError, ValueError):
    """Invalid model, disorder or plan input."""


class QuadratureError(RfimError, RuntimeError):
    """A numerical integral did not meet its tolerance within budget."""
