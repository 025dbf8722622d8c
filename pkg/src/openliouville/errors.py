"""Exception and warning classes shared by all modules.

Every error carries the module and operation where it was raised plus a
small JSON-serializable diagnostic payload, so the command line front end
can report failures in machine-readable form.
"""


class OpenLiouvilleError(Exception):
    """Base class for all errors raised by the package."""

    module = "core"

    def __init__(self, message, operation=None, module=None, **payload):
        super().__init__(message)
        self.message = message
        self.operation = operation
        if module is not None:
            self.module = module
        self.payload = payload

    def to_dict(self):
        return {
            "error": type(self).__name__,
            "module": self.module,
            "operation": self.operation,
            "message": self.message,
            "payload": _jsonable(self.payload),
        }


class InvalidInputError(OpenLiouvilleError, ValueError):
    """Input violates a documented precondition (shape, hermiticity, trace...)."""


class NumericalError(OpenLiouvilleError, ArithmeticError):
    """Base class for failures of a numerical procedure on valid input."""


class SingularResolventError(NumericalError):
    module = "projection"


class DegenerateSpectrumError(NumericalError):
    module = "spectral"


class StructuralError(NumericalError):
    """An identity that must hold by construction is violated upstream."""


class ConvergenceError(NumericalError):
    module = "modes"


class HermiticityViolationError(NumericalError):
    module = "modes"


class NearDefectivePoleError(NumericalError):
    module = "modes"


class StepTooLargeError(NumericalError):
    module = "dynamics"


class InsufficientDataError(NumericalError):
    module = "dynamics"


class ConfigError(OpenLiouvilleError, ValueError):
    module = "cli"


class NearDegenerateWarning(UserWarning):
    pass


class NonUniqueZeroModeWarning(UserWarning):
    pass


class PositivityWarning(UserWarning):
    pass


class ReliabilityWarning(UserWarning):
    pass


def _jsonable(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
