class DomainError(ValueError):
    """A point outside the domain of a transform (e.g. not in the upper half-plane)."""


class NumericalError(RuntimeError):
    """A numerical procedure failed to produce a trustworthy answer."""


class InversionError(NumericalError):
    pass


class ConeSelectionError(NumericalError):
    pass


class DegenerateResidual(NumericalError):
    pass


class MassDefect(NumericalError):
    pass


class SubordinationStall(NumericalError):
    def __init__(self, message, z=None):
        super().__init__(message)
        self.z = z
