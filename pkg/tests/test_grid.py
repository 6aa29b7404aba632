import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from susylab.errors import MemoryCap
from susylab.grid import Grid


def test_interior_row_major():
    g = Grid.from_box([(0, 1), (0, 2)], [5, 6])
    assert g.shape == (3, 4)
    P = g.points()
    assert P.shape == (12, 2)
    # last axis varies fastest
    np.testing.assert_allclose(P[:4, 0], 0.25)
    np.testing.assert_allclose(P[:4, 1], [0.4, 0.8, 1.2, 1.6])


def test_validation():
    with pytest.raises(ValueError):
        Grid.from_box([(0, 1)], [2])
    with pytest.raises(ValueError):
        Grid.from_box([(1, 0)], [5])
    with pytest.raises(ValueError):
        Grid.from_box([(0, 1), (0, 1)], [5, 5, 5])
    with pytest.raises(MemoryCap):
        Grid.from_box([(0, 1)] * 3, [100] * 3).check_cap(10_000)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 10.0), st.floats(1e-3, 0.5))
def test_from_spacing_bound(width, spacing):
    g = Grid.from_spacing([(-width / 2, width / 2)], spacing)
    assert g.spacing[0] <= spacing * (1 + 1e-9) or g.axes[0].n == 3
    assert g.spacing[0] > 0


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.99, 0.99), st.floats(-0.99, 0.99))
def test_nearest_index(x, y):
    g = Grid.from_box([(-1, 1), (-1, 1)], [21, 41])
    i = g.nearest_index([x, y])
    d = np.linalg.norm(g.points() - [x, y], axis=1)
    assert d[i] <= d.min() + 1e-12
