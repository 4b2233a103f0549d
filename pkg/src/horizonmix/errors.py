"""Exception hierarchy. CLI maps ConfigError to exit code 2, everything else to 3."""


class HorizonMixError(Exception):
    pass


class ShapeMismatchError(HorizonMixError, ValueError):
    pass


class ConfigError(HorizonMixError, ValueError):
    pass


class InvalidMaskError(HorizonMixError, ValueError):
    """Raised when a softmax slice or attention row has no valid entry."""


class CheckpointFormatError(HorizonMixError, ValueError):
    pass


class TrainingDivergedError(HorizonMixError, RuntimeError):
    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")
