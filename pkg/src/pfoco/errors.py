"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed argument: wrong dimension, non-finite entries, asymmetric matrix."""


class ConfigurationError(ValueError):
    """Parameters that cannot be used together (e.g. shrinking a set without inner radius)."""


class NumericError(RuntimeError):
    """An iterative routine hit its iteration cap.

    ``diagnostics`` carries whatever the routine knew when it gave up
    (residual, gap, iteration count) so callers can report it.
    """

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        extra = ", ".join(f"{k}={v!r}" for k, v in self.diagnostics.items())
        return f"{base} ({extra})"
