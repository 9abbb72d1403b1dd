import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fusiontrack.geometry import (Arena, LinkGeometry, Point2D, SpeakerPair, as_point,
                                  nearest_feasible_point, path_difference,
                                  path_difference_gradient, reflection_path_length)

coord = st.floats(-20, 20, allow_nan=False)
point = st.tuples(coord, coord)


def test_point_rejects_non_finite():
    with pytest.raises(ValueError):
        as_point((math.nan, 0.0))
    with pytest.raises(ValueError):
        as_point((0.0, math.inf))


def test_link_rejects_zero_baseline_and_bad_mode():
    with pytest.raises(ValueError):
        LinkGeometry((1, 1), (1, 1))
    with pytest.raises(ValueError):
        LinkGeometry((0, 0), (1, 1), "radar")


def test_speaker_pair_baseline():
    assert SpeakerPair((0, 0), (3, 4)).baseline == 5.0
    with pytest.raises(ValueError):
        SpeakerPair((1, 2), (1, 2))


def test_arena_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        Arena(1, 0, 0, 1)
    with pytest.raises(ValueError):
        Arena(0, 1, 0, math.nan)


def test_reflection_path_on_segment_equals_baseline():
    link = LinkGeometry((0, 0), (4, 0))
    assert reflection_path_length((1.3, 0.0), link) == pytest.approx(4.0, abs=1e-15)


def test_reflection_path_symmetric_example():
    link = LinkGeometry((0, 0), (4, 0))
    assert reflection_path_length((2, 2), link) == pytest.approx(2 * math.sqrt(8), rel=1e-15)


@given(point, point, point)
def test_reflection_path_matches_two_norms(p, tx, rx):
    if tx == rx:
        return
    link = LinkGeometry(tx, rx)
    expected = math.dist(p, tx) + math.dist(p, rx)
    got = reflection_path_length(p, link)
    assert got == pytest.approx(expected, rel=1e-12, abs=1e-12)
    assert got >= link.baseline - 1e-9


def test_path_difference_examples():
    pair = SpeakerPair((0, 0), (2, 0))
    assert path_difference((1.0, 3.7), pair) == 0.0
    assert path_difference((5.0, 0.0), pair) == pytest.approx(2.0)
    assert path_difference((3, 4), pair) == pytest.approx(5 - math.sqrt(17), abs=1e-12)
    assert 5 - math.sqrt(17) == pytest.approx(0.8769, abs=1e-4)


@given(point, point, point)
def test_path_difference_bounded_and_antisymmetric(p, s1, s2):
    if s1 == s2:
        return
    pair = SpeakerPair(s1, s2)
    swapped = SpeakerPair(s2, s1)
    d = path_difference(p, pair)
    assert abs(d) <= pair.baseline + 1e-9
    assert path_difference(p, swapped) == pytest.approx(-d, abs=1e-12)


def test_path_difference_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    pair = SpeakerPair((1, 0), (2.5, 0.5))
    for _ in range(50):
        p = rng.uniform(-3, 5, 2)
        h = 1e-6
        fd = [(path_difference(p + h * e, pair) - path_difference(p - h * e, pair)) / (2 * h)
              for e in np.eye(2)]
        assert np.allclose(path_difference_gradient(p, pair), fd, atol=1e-6)


def test_nearest_feasible_point_examples(unit_arena):
    assert nearest_feasible_point((0.3, 0.6), unit_arena) == Point2D(0.3, 0.6)
    assert nearest_feasible_point((-1, 0.5), unit_arena) == Point2D(0.0, 0.5)
    assert nearest_feasible_point((-1, -1), unit_arena) == Point2D(0.0, 0.0)


@given(point)
def test_nearest_feasible_point_idempotent(p):
    arena = Arena(-1, 2, 0, 3)
    once = nearest_feasible_point(p, arena)
    assert nearest_feasible_point(once, arena) == once
    assert arena.contains(once)


def test_nearest_feasible_point_batch(unit_arena):
    pts = np.array([[2.0, 0.5], [0.5, 0.5]])
    assert np.array_equal(nearest_feasible_point(pts, unit_arena), [[1.0, 0.5], [0.5, 0.5]])
