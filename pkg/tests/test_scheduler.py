import math

import pytest

from src.errors import ConfigError, StepSizeError
from src.scheduler import (
    CONVEX,
    NONCONVEX,
    PARTIAL_CONVEX,
    PARTIAL_NONCONVEX,
    REGIMES,
    STOCHASTIC,
    Schedule,
    schedule_eval,
)


def test_convex_first_round_is_history_free():
    eta, lam, rho = schedule_eval(Schedule(CONVEX, lambda0=0.5), 1)
    assert eta == 1.0
    assert lam == pytest.approx(0.5 * math.sqrt(2.0))
    assert rho is None


def test_stochastic_first_round_replaces_estimator():
    eta, lam, rho = schedule_eval(Schedule(STOCHASTIC, lambda0=1.0), 1)
    assert eta == 1.0
    assert rho == pytest.approx(1.0)
    assert rho <= 1.0
    assert lam == pytest.approx(3.0)


def test_stochastic_rho_decays():
    s = Schedule(STOCHASTIC, lambda0=1.0)
    assert s.at(20).rho == pytest.approx(4.0 / 27.0 ** (2.0 / 3.0))
    assert s.at(100).rho < s.at(10).rho


def test_partial_convex_full_participation_matches_convex():
    convex = Schedule(CONVEX, lambda0=0.01)
    partial = Schedule(PARTIAL_CONVEX, lambda0=0.01, participation=1.0)
    for t in range(1, 200):
        assert schedule_eval(convex, t) == schedule_eval(partial, t)


def test_nonconvex_uses_horizon():
    eta, lam, _ = schedule_eval(Schedule(NONCONVEX, lambda0=2.0, horizon=1000), 37)
    assert eta == pytest.approx(0.01)
    assert lam == pytest.approx(20.0)


def test_partial_nonconvex():
    eta, lam, _ = schedule_eval(Schedule(PARTIAL_NONCONVEX, lambda0=1.0, horizon=1000, participation=0.5), 3)
    assert eta == pytest.approx(501.0 ** (-2.0 / 3.0))
    assert lam == pytest.approx(501.0 ** (1.0 / 3.0))


@pytest.mark.parametrize("regime", REGIMES)
def test_lambda_nondecreasing_and_eta_in_range(regime):
    s = Schedule(regime, lambda0=0.3, horizon=500, participation=0.4)
    values = [s.at(t) for t in range(1, 500)]
    assert all(0.0 < v.eta <= 1.0 for v in values)
    assert all(b.lam >= a.lam for a, b in zip(values, values[1:]))


def test_rho_override():
    s = Schedule(CONVEX, lambda0=1.0, rho_override=1.0)
    assert s.at(50).rho == 1.0


def test_invalid_schedules():
    with pytest.raises(StepSizeError):
        schedule_eval(Schedule(CONVEX, lambda0=1.0), 0)
    with pytest.raises(ConfigError):
        Schedule("cosine", lambda0=1.0)
    with pytest.raises(ConfigError):
        Schedule(CONVEX, lambda0=0.0)
    with pytest.raises(ConfigError):
        Schedule(PARTIAL_CONVEX, lambda0=1.0, participation=0.0)
