import math

import numpy as np
import pytest

from src.errors import ConfigError, DimensionError
from src.feasible_sets import (
    Box,
    L1Ball,
    L2Ball,
    Simplex,
    build_set,
    diameter,
    is_extreme_point,
    lmo,
    membership,
)

SETS = [
    L1Ball(radius=2.0, dim=4),
    L2Ball(radius=1.5, dim=4),
    Box(lo=np.array([-1.0, 0.0, -2.0, 0.5]), hi=np.array([1.0, 3.0, 2.0, 1.0])),
    Simplex(scale=3.0, dim=4),
]


def test_l1_lmo_picks_largest_magnitude():
    s = lmo(L1Ball(1.0, 3), np.array([0.5, -2.0, 1.0]))
    np.testing.assert_array_equal(s, [0.0, 1.0, 0.0])


def test_l1_lmo_tie_goes_to_lowest_index():
    s = lmo(L1Ball(1.0, 2), np.array([1.0, -1.0]))
    np.testing.assert_array_equal(s, [-1.0, 0.0])


def test_l2_lmo_closed_form():
    np.testing.assert_allclose(lmo(L2Ball(1.0, 2), np.array([3.0, 4.0])), [-0.6, -0.8])


def test_box_lmo_per_coordinate():
    box = Box(lo=np.array([-1.0, -2.0, -3.0]), hi=np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(box.lmo(np.array([1.0, -1.0, 0.0])), [-1.0, 2.0, -3.0])


def test_simplex_lmo_argmin():
    np.testing.assert_array_equal(Simplex(2.0, 3).lmo(np.array([0.3, -1.0, -1.0])), [0.0, 2.0, 0.0])


@pytest.mark.parametrize(
    "feasible_set, expected",
    [
        (L1Ball(2.0, 3), [2.0, 0.0, 0.0]),
        (L2Ball(2.0, 3), [2.0, 0.0, 0.0]),
        (Box(lo=np.array([-1.0, -2.0, 0.0]), hi=np.array([1.0, 2.0, 1.0])), [-1.0, -2.0, 0.0]),
        (Simplex(2.0, 3), [2.0, 0.0, 0.0]),
    ],
)
def test_zero_direction_returns_canonical_vertex(feasible_set, expected):
    np.testing.assert_array_equal(feasible_set.lmo(np.zeros(3)), expected)
    np.testing.assert_array_equal(feasible_set.canonical_vertex(), expected)


@pytest.mark.parametrize("feasible_set", SETS, ids=lambda s: s.kind)
def test_lmo_beats_sampled_points(feasible_set):
    rng = np.random.default_rng(1)
    U = feasible_set.sample(rng, 20_000)
    for g in rng.standard_normal((200, feasible_set.dim)):
        s = feasible_set.lmo(g)
        assert float(np.dot(g, s)) <= float(np.min(U @ g)) + 1e-9
        assert is_extreme_point(feasible_set, s)
        assert membership(feasible_set, s)


@pytest.mark.parametrize("feasible_set", SETS, ids=lambda s: s.kind)
def test_samples_are_feasible(feasible_set):
    points = feasible_set.sample(np.random.default_rng(2), 1000)
    assert points.shape == (1000, feasible_set.dim)
    assert max(feasible_set.residual(p) for p in points) <= 1e-9


def test_membership_tolerance():
    ball = L1Ball(1.0, 2)
    assert ball.contains(np.array([0.5, 0.5 + 5e-10]))
    assert not ball.contains(np.array([0.5, 0.5 + 1e-6]))
    assert ball.residual(np.array([1.0, 1.0])) == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        ball.contains(np.zeros(3))


def test_simplex_residual_counts_negative_entries():
    simplex = Simplex(1.0, 2)
    assert simplex.residual(np.array([1.5, -0.5])) == pytest.approx(0.5)
    assert simplex.contains(np.array([0.25, 0.75]))


def test_diameters():
    assert diameter(L1Ball(3.0, 5)) == 6.0
    assert diameter(L2Ball(3.0, 5)) == 6.0
    assert diameter(Box(lo=np.zeros(2), hi=np.array([3.0, 4.0]))) == pytest.approx(5.0)
    assert diameter(Simplex(2.0, 4)) == pytest.approx(2.0 * math.sqrt(2.0))


def test_invalid_sets_rejected():
    with pytest.raises(ConfigError):
        Simplex(1.0, 1)
    with pytest.raises(ConfigError):
        L1Ball(0.0, 2)
    with pytest.raises(ConfigError):
        Box(lo=np.array([1.0]), hi=np.array([1.0]))


def test_build_set_broadcasts_box_bounds():
    box = build_set({"kind": "box", "lo": -1, "hi": 1}, 3)
    np.testing.assert_array_equal(box.lo, [-1.0, -1.0, -1.0])
    assert box == Box(lo=-np.ones(3), hi=np.ones(3))
    assert build_set({"kind": "simplex", "scale": 2}, 3) == Simplex(2.0, 3)


@pytest.mark.parametrize(
    "spec",
    [
        {"kind": "hexagon", "radius": 1},
        {"kind": "l1_ball"},
        {"kind": "l2_ball", "radius": 1, "center": 0},
        {"kind": "box", "lo": [0, 0], "hi": 1},
    ],
)
def test_build_set_rejects_bad_specs(spec):
    with pytest.raises(ConfigError):
        build_set(spec, 3)


def test_is_extreme_point_rejects_interior():
    assert not is_extreme_point(L1Ball(1.0, 2), np.array([0.5, 0.5]))
    assert not is_extreme_point(L2Ball(1.0, 2), np.array([0.5, 0.5]))
    assert is_extreme_point(Box(lo=np.zeros(2), hi=np.ones(2)), np.array([1.0, 0.0]))
