"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, dimensions or identifiers."""


class SimulationFault(RuntimeError):
    """Numerical failure inside the plant or controller loop."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class TrainingFault(RuntimeError):
    """Non-finite loss or otherwise unusable training run."""

    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch
