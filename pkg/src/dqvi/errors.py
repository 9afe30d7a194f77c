"""Exception hierarchy shared by every solver module."""


class DqviError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DqviError, ValueError):
    """Problem data violates a standing hypothesis (e.g. m <= beta)."""


class InputError(DqviError, ValueError):
    """Malformed call: wrong dimensions, bad grid, unknown keys."""


class NonConvergenceError(DqviError, RuntimeError):
    """An iterative solve hit its iteration cap.

    Carries whatever context the caller attached (node index, family
    index ``n``, control parameter ``q``) so that failures deep inside a
    trajectory or a parameter sweep can be located.
    """

    def __init__(self, message, residual=float("nan"), **context):
        self.residual = residual
        self.context = dict(context)
        if context:
            extra = ", ".join(f"{k}={v!r}" for k, v in context.items())
            message = f"{message} ({extra})"
        super().__init__(message)

    def with_context(self, **context):
        merged = {**self.context, **context}
        base = str(self.args[0]).split(" (", 1)[0]
        return NonConvergenceError(base, self.residual, **merged)


class NotCertifiedError(DqviError, RuntimeError):
    """A candidate solution failed its residual certificate."""
