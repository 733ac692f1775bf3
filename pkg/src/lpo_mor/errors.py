"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data violates a documented precondition."""


class UnstableSystemError(ValidationError):
    """The dynamics matrix has an eigenvalue with nonnegative real part."""

    def __init__(self, eigenvalue: complex):
        self.eigenvalue = eigenvalue
        super().__init__(
            f"A is not asymptotically stable: eigenvalue {eigenvalue:.6g} "
            f"has real part {eigenvalue.real:.3e} >= 0")


class NumericalError(RuntimeError):
    """A numerical kernel failed (breakdown, loss of definiteness, overflow)."""
