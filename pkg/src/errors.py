class FedFWError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FedFWError):
    pass


class DimensionError(FedFWError, ValueError):
    pass


class InfeasiblePointError(FedFWError, ValueError):
    pass


class ContainmentError(ConfigError):
    """A per-client constraint set failed the sampled containment check."""


class NumericalError(FedFWError):
    def __init__(self, message: str, round_index: int | None = None) -> None:
        super().__init__(message)
        self.round_index = round_index


class StepSizeError(FedFWError, ValueError):
    pass


class EmptyDatasetError(FedFWError, ValueError):
    pass
