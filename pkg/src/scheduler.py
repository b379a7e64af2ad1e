import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import ConfigError, StepSizeError

CONVEX = "convex"
NONCONVEX = "nonconvex"
STOCHASTIC = "stochastic"
PARTIAL_CONVEX = "partial_convex"
PARTIAL_NONCONVEX = "partial_nonconvex"

REGIMES = (CONVEX, NONCONVEX, STOCHASTIC, PARTIAL_CONVEX, PARTIAL_NONCONVEX)


class StepValues(NamedTuple):
    eta: float
    lam: float
    rho: float | None


@dataclass(frozen=True)
class Schedule:
    """Step size, penalty and estimator weight as a function of the round index.

    `horizon` is the planned number of rounds T (fixed-step regimes), and
    `participation` is p for the partial-participation regimes.
    """

    regime: str
    lambda0: float
    horizon: int = 1
    participation: float = 1.0
    rho_override: float | None = None

    def __post_init__(self) -> None:
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown schedule regime {self.regime!r}; expected one of {list(REGIMES)}")
        if not (self.lambda0 > 0 and math.isfinite(self.lambda0)):
            raise ConfigError(f"lambda0 must be positive, got {self.lambda0!r}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not 0.0 < self.participation <= 1.0:
            raise ConfigError(f"participation must lie in (0, 1], got {self.participation!r}")
        if self.rho_override is not None and not 0.0 < self.rho_override <= 1.0:
            raise ConfigError(f"rho_override must lie in (0, 1], got {self.rho_override!r}")

    @property
    def is_fixed_step(self) -> bool:
        return self.regime in (NONCONVEX, PARTIAL_NONCONVEX)

    @property
    def is_convex(self) -> bool:
        return self.regime in (CONVEX, PARTIAL_CONVEX)

    def at(self, t: int) -> StepValues:
        return schedule_eval(self, t)


def schedule_eval(schedule: Schedule, t: int) -> StepValues:
    if t < 1:
        raise StepSizeError(f"round index must be >= 1, got {t}")
    lam0 = schedule.lambda0
    p = schedule.participation
    rho = None

    if schedule.regime == CONVEX:
        eta, lam = 2.0 / (t + 1), lam0 * math.sqrt(t + 1)
    elif schedule.regime == NONCONVEX:
        T = schedule.horizon
        eta, lam = T ** (-2.0 / 3.0), lam0 * T ** (1.0 / 3.0)
    elif schedule.regime == STOCHASTIC:
        eta, lam = 9.0 / (t + 8), lam0 * math.sqrt(t + 8)
        # rounding in 8 ** (2/3) must not push rho_1 above 1
        rho = min(1.0, 4.0 / (t + 7) ** (2.0 / 3.0))
    elif schedule.regime == PARTIAL_CONVEX:
        k = p * (t - 1) + 2
        eta, lam = 2.0 / k, lam0 * math.sqrt(k)
    else:
        k = p * schedule.horizon + 1
        eta, lam = k ** (-2.0 / 3.0), lam0 * k ** (1.0 / 3.0)

    if schedule.rho_override is not None:
        rho = schedule.rho_override
    if not 0.0 < eta <= 1.0:
        raise StepSizeError(f"step size {eta!r} at round {t} outside (0, 1]")
    return StepValues(eta=eta, lam=lam, rho=rho)
