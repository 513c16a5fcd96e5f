"""Exception types shared across the package."""


class AcpError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(AcpError):
    """A file or byte stream is malformed (bad header, wrong container)."""


class ValidationError(AcpError):
    """Input values violate a documented precondition or invariant."""
