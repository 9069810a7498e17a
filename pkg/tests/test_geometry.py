import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from collective_intent.geometry import (GridPlanner, obstacles_distance, point_in_polygon, polygon_edges,
                                        segment_blocked, visible_mask)

SQUARE = ((0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0))


def test_point_in_polygon():
    assert point_in_polygon((1, 1), SQUARE)
    assert point_in_polygon((2, 1), SQUARE)          # on the edge
    assert not point_in_polygon((3, 1), SQUARE)


def test_distance():
    assert obstacles_distance((3, 1), [SQUARE]) == 1.0
    assert obstacles_distance((1, 1), [SQUARE]) == 0.0
    assert obstacles_distance((1, 1), []) == np.inf


coord = st.floats(-3, 5, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(coord, coord, coord, coord)
def test_vectorized_visibility_agrees_with_segment_test(ox, oy, tx, ty):
    if point_in_polygon((ox, oy), SQUARE):
        return
    got = visible_mask((ox, oy), np.array([[tx, ty]]), polygon_edges([SQUARE]))[0]
    if point_in_polygon((tx, ty), SQUARE) or segment_blocked((ox, oy), (tx, ty), [SQUARE]):
        # grazing a corner is the only case where the two tests may differ
        touches = any(abs((c[0] - ox) * (ty - oy) - (c[1] - oy) * (tx - ox)) < 1e-9 for c in SQUARE)
        assert not got or touches
    else:
        assert got


def test_planner_goes_around_and_keeps_clearance():
    wall = ((4.0, 0.0), (5.0, 0.0), (5.0, 8.0), (4.0, 8.0))
    pl = GridPlanner((0, 0, 10, 10), (wall,))
    path = pl.plan((1.0, 2.0), (8.0, 2.0))
    assert path is not None and path[-1] == (8.0, 2.0)
    dense = np.concatenate([np.linspace(a, b, 20) for a, b in zip(path[:-1], path[1:])])
    assert min(obstacles_distance(p, [wall]) for p in dense) > 0
    assert max(p[1] for p in path) > 8.0


def test_planner_reports_unreachable():
    ring = [((3, 3), (7, 3), (7, 3.5), (3, 3.5)), ((3, 6.5), (7, 6.5), (7, 7), (3, 7)),
            ((3, 3), (3.5, 3), (3.5, 7), (3, 7)), ((6.5, 3), (7, 3), (7, 7), (6.5, 7))]
    pl = GridPlanner((0, 0, 10, 10), tuple(tuple(map(tuple, r)) for r in ring))
    assert pl.plan((1.0, 1.0), (5.0, 5.0)) is None
