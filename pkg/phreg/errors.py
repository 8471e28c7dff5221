"""Exceptions and warnings raised across phreg."""


class PhRegError(Exception):
    """Base class for every error raised by phreg."""


class DimensionError(PhRegError, ValueError):
    pass


class NumericDomainError(PhRegError, ValueError):
    pass


class StructureError(PhRegError, ValueError):
    pass


class DomainError(PhRegError, ValueError):
    """Argument outside the support of the function."""


class UnsupportedTransformError(PhRegError, ValueError):
    pass


class InfiniteMeanError(PhRegError, ArithmeticError):
    pass


class SettingsError(PhRegError, ValueError):
    pass


class ModelFormatError(PhRegError, ValueError):
    pass


class LikelihoodUnderflowError(PhRegError, ArithmeticError):
    def __init__(self, index, value=0.0):
        self.index = int(index)
        self.value = value
        super().__init__(f"likelihood underflow at observation {self.index} (value={value!r})")


class DegenerateStateError(PhRegError, ArithmeticError):
    def __init__(self, state):
        self.state = int(state)
        super().__init__(f"state {self.state} was never visited (expected sojourn time is 0)")


class SingularInformationError(PhRegError, ArithmeticError):
    def __init__(self, condition, source, recommended_source):
        self.condition = condition
        self.source = source
        self.recommended_source = recommended_source
        super().__init__(
            f"{source} information matrix is near-singular (condition {condition:.3g}); "
            f"try source={recommended_source!r}"
        )


class DataError(PhRegError, ValueError):
    def __init__(self, message, column=None, row=None):
        self.column = column
        self.row = row
        super().__init__(message)


class TailUnderflowWarning(RuntimeWarning):
    """Survival fell below the representable floor and was clamped."""


class DefectiveMatrixWarning(RuntimeWarning):
    """Closed-form evaluation needed a diagonalizable matrix and fell back to quadrature."""
