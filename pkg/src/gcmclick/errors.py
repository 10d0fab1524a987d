"""Exception hierarchy shared by all modules."""


class GCMError(Exception):
    """Base class for errors raised by gcmclick."""


class DimensionError(GCMError, ValueError):
    """An array or vector has the wrong length or shape."""


class DefinitionError(GCMError, ValueError):
    """A model definition is inconsistent (unknown parameter, infeasible click state, ...)."""


class NumericGuardError(GCMError, ArithmeticError):
    """An activation produced a value outside the open unit interval."""


class DegenerateSessionError(GCMError, ArithmeticError):
    """Observed clicks have zero probability under the current model."""

    def __init__(self, message, session=None, position=None):
        super().__init__(message)
        self.session = session
        self.position = position


class MStepError(GCMError, ArithmeticError):
    """The M-step objective or gradient became non-finite."""

    def __init__(self, message, parameter=None, iteration=None):
        super().__init__(message)
        self.parameter = parameter
        self.iteration = iteration


class SchemaError(GCMError, ValueError):
    """Session data does not match the expected schema."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
