import math

import numpy as np
import pytest

from src.errors import DimensionError, NumericalError, StepSizeError
from src.feasible_sets import Box
from src.vectors import (
    STREAM_GRADIENT,
    STREAM_PARTICIPATION,
    FederationState,
    RngStream,
    as_vec,
    consensus_distance,
    consensus_distance_of,
    convex_combine,
    mean_model,
)


def test_as_vec_copies_and_validates():
    src = [1.0, 2.0]
    v = as_vec(src, dim=2)
    v[0] = 9.0
    assert src[0] == 1.0
    with pytest.raises(DimensionError):
        as_vec([1.0, 2.0], dim=3)
    with pytest.raises(NumericalError):
        as_vec([1.0, float("nan")])


def test_convex_combine_endpoints():
    a, b = np.array([1.0, 2.0]), np.array([3.0, -2.0])
    np.testing.assert_array_equal(convex_combine(a, b, 0.0), a)
    np.testing.assert_array_equal(convex_combine(a, b, 1.0), b)
    np.testing.assert_allclose(convex_combine(a, b, 0.25), [1.5, 1.0])


def test_convex_combine_rejects_bad_input():
    with pytest.raises(StepSizeError):
        convex_combine(np.zeros(2), np.ones(2), 1.5)
    with pytest.raises(DimensionError):
        convex_combine(np.zeros(2), np.ones(3), 0.5)


def test_consensus_distance_of_two_points():
    assert consensus_distance_of([np.array([0.0]), np.array([2.0])]) == pytest.approx(math.sqrt(2.0))
    assert consensus_distance_of([np.ones(3), np.ones(3)]) == 0.0
    np.testing.assert_allclose(mean_model([np.array([0.0, 1.0]), np.array([2.0, 3.0])]), [1.0, 2.0])


def test_consensus_distance_ignores_cached_average():
    box = Box(lo=np.array([-1.0]), hi=np.array([1.0]))
    state = FederationState.at_point(np.array([0.0]), [box, box])
    state.clients[0].x = np.array([1.0])
    state.clients[1].x = np.array([-1.0])
    state.x_bar = np.array([5.0])
    assert consensus_distance(state) == pytest.approx(math.sqrt(2.0))


def test_rng_stream_is_pure_function_of_key():
    a = RngStream(7, 2, 10, STREAM_GRADIENT).generator().random(4)
    b = RngStream(7, 2, 10, STREAM_GRADIENT).generator().random(4)
    c = RngStream(7, 2, 10, STREAM_PARTICIPATION).generator().random(4)
    d = RngStream(7, 2, 11, STREAM_GRADIENT).generator().random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_rng_stream_accepts_negative_seed():
    RngStream(-1, 0, 1).generator().random()


def test_federation_state_slots_are_independent():
    box = Box(lo=np.array([-1.0, -1.0]), hi=np.array([1.0, 1.0]))
    state = FederationState.at_point(np.array([0.5, 0.5]), [box] * 3)
    assert state.n == 3 and state.dim == 2
    state.clients[0].x[0] = -1.0
    assert state.clients[1].x[0] == 0.5
    np.testing.assert_array_equal(state.clients[2].y, np.zeros(2))
    clone = state.copy()
    clone.clients[1].x[1] = 0.0
    assert state.clients[1].x[1] == 0.5
    assert state.matrix().shape == (2, 3)


def test_check_finite_reports_round():
    box = Box(lo=np.array([-1.0]), hi=np.array([1.0]))
    state = FederationState.at_point(np.array([0.0]), [box, box], round_index=4)
    state.clients[1].x = np.array([np.inf])
    with pytest.raises(NumericalError) as info:
        state.check_finite()
    assert info.value.round_index == 4


def test_empty_federation_rejected():
    with pytest.raises(DimensionError):
        FederationState.at_point(np.zeros(1), [])
