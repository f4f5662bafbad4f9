"""Exception types shared across the package."""


class ContractError(ValueError):
    """A precondition or invariant of an operation was violated."""


class CubeFormatError(ValueError):
    """A cube container file could not be parsed; message names the field."""


class FeasibilityError(ValueError):
    """Sampler configuration would require a negative initial variance."""


class FitDivergedError(RuntimeError):
    """Loss or gradient became non-finite while fitting the generators."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class StepError(RuntimeError):
    """A reverse-diffusion step received non-finite inputs."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step
