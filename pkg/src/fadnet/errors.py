"""Exception types shared across the package."""


class FadnetError(Exception):
    pass


class DimensionError(FadnetError, ValueError):
    """Operand shapes are incompatible."""


class GeometryError(FadnetError, ValueError):
    """Spatial extents do not work out (non-integer output size, bad stride)."""


class ParameterError(FadnetError, ValueError):
    """A configuration or hyperparameter value is invalid."""


class ContractError(FadnetError, RuntimeError):
    """An API precondition was violated (e.g. backward from a non-scalar)."""


class DomainError(FadnetError, ValueError):
    """A numeric argument is outside the function's domain."""


class DegenerateGeometryError(FadnetError, ValueError):
    pass


class ProjectionError(FadnetError, ValueError):
    """A 3D point lies on or behind the image plane."""


class ParseError(FadnetError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TemplateError(FadnetError, ValueError):
    pass


class GenerationError(FadnetError, RuntimeError):
    pass


class TrainingDivergenceError(FadnetError, RuntimeError):
    def __init__(self, term, value):
        super().__init__(f"non-finite loss term {term!r}: {value}")
        self.term = term
        self.value = value
