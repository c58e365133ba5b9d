"""Exception hierarchy shared by every polyprobe module."""


class PolyprobeError(Exception):
    """Base class for all toolkit errors."""


class InvalidSpecError(PolyprobeError, ValueError):
    """A polygon or dataset parameterization cannot be realized."""


class DegenerateInputError(PolyprobeError, ValueError):
    pass


class InvalidStateError(PolyprobeError, RuntimeError):
    pass


class ShapeError(PolyprobeError, ValueError):
    pass


class DomainError(PolyprobeError, ValueError):
    pass


class ContractError(PolyprobeError, ValueError):
    """A caller violated a documented precondition."""


class ConfigError(PolyprobeError, ValueError):
    pass


class SetupError(PolyprobeError, RuntimeError):
    pass


class DivergedError(PolyprobeError, RuntimeError):
    """Training produced a non-finite loss.

    ``last_valid_step`` is the last step whose losses were all finite
    (-1 if the very first step diverged).  ``curve`` holds the losses
    recorded up to that point when the trainer attaches them.
    """

    def __init__(self, message: str, last_valid_step: int, curve=None):
        super().__init__(message)
        self.last_valid_step = last_valid_step
        self.curve = curve


class UnderTrainedError(PolyprobeError, RuntimeError):
    def __init__(self, message: str, accuracy: float):
        super().__init__(message)
        self.accuracy = accuracy
