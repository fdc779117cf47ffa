"""Grid primitives: snapping, exact translation, interval arithmetic."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twoweight.grid import (
    GridFunction,
    GridInterval,
    GridMeasure,
    cell_position,
    dot,
    from_atoms,
    indicator,
    interval_mass,
    joint_hull,
    norm_l2,
    reflect_translate,
)


def test_snapping_half_open():
    # position exactly on a cell boundary belongs to the cell on its right
    m = from_atoms([(Fraction(1, 2), 1.0), (Fraction(1), 2.0), (0.75, 4.0)], 1)
    assert m.cells == {1: 5.0, 2: 2.0}


def test_snapping_negative_scale():
    # scale -2: cells of width 4; position 9 lands in cell 2 = [8, 12)
    m = from_atoms([(9, 1.0), (Fraction(8), 1.0), (Fraction(-1), 1.0)], -2)
    assert m.cells == {2: 2.0, -1: 1.0}


def test_from_atoms_merges_and_drops_zero():
    m = from_atoms([(0.1, 1.5), (0.2, 0.0), (0.3, 2.5)], 0)
    assert m.cells == {0: 4.0}
    assert m.total == 4.0


def test_from_atoms_rejects_negative_with_index():
    with pytest.raises(ValueError, match="atom 1"):
        from_atoms([(0.0, 1.0), (1.0, -0.5)], 0)


def test_measure_rejects_negative():
    with pytest.raises(ValueError):
        GridMeasure(0, {3: -1e-12})


@given(
    st.lists(
        st.tuples(
            st.fractions(min_value=-100, max_value=100),
            st.floats(min_value=0.0, max_value=10.0, allow_nan=False),
        ),
        max_size=12,
    ),
    st.integers(min_value=-3, max_value=6),
)
@settings(max_examples=100, deadline=None)
def test_snapping_is_floor(atoms, scale):
    m = from_atoms(atoms, scale)
    expected = {}
    for pos, mass in atoms:
        if mass == 0.0:
            continue
        k = math.floor(pos * Fraction(2) ** scale)
        expected[k] = expected.get(k, 0.0) + mass
    assert set(m.cells) == set(expected)
    for k, v in expected.items():
        assert m.cells[k] == pytest.approx(v, rel=1e-15)


def test_interval_geometry():
    iv = GridInterval(4, 7, 2)
    assert iv.n_cells == 4
    assert iv.length == 1.0
    assert iv.center == 1.5
    assert iv.contains_cell(4) and iv.contains_cell(7) and not iv.contains_cell(8)
    assert iv.contains(GridInterval(5, 6, 2))
    assert not iv.contains(GridInterval(3, 6, 2))
    assert iv.intersects(GridInterval(7, 9, 2))
    assert not iv.intersects(GridInterval(8, 9, 2))
    with pytest.raises(ValueError):
        GridInterval(3, 2, 0)


def test_interval_geometry_negative_scale():
    iv = GridInterval(-2, 1, -3)
    assert iv.length == 4 * 8.0
    assert iv.center == 0.0


def test_cell_position():
    assert cell_position(0, 0) == 0.5
    assert cell_position(-1, 1) == -0.25


def test_interval_mass_exactness():
    m = GridMeasure(0, {0: 1.0, 5: 2.0, 9: 4.0})
    assert interval_mass(m, GridInterval(0, 9, 0)) == 7.0
    assert interval_mass(m, GridInterval(1, 4, 0)) == 0.0
    assert interval_mass(m, GridInterval(5, 5, 0)) == 2.0
    with pytest.raises(ValueError):
        interval_mass(m, GridInterval(0, 1, 3))


def test_reflect_translate_exact():
    m = GridMeasure(2, {0: 1.0, 5: 2.0})
    t = reflect_translate(m, Fraction(5, 4), 1)  # j = 5
    assert t.cells == {-5: 1.0, 0: 2.0}
    r = reflect_translate(m, 0, -1)
    assert r.cells == {-1: 1.0, -6: 2.0}
    # reflecting twice about the same point is the identity
    rr = reflect_translate(r, 0, -1)
    assert rr.cells == m.cells


def test_reflect_translate_requires_grid_point():
    m = GridMeasure(0, {0: 1.0})
    with pytest.raises(ValueError, match="not a grid point"):
        reflect_translate(m, Fraction(1, 3), 1)
    with pytest.raises(ValueError):
        reflect_translate(m, 0.25, 1)
    with pytest.raises(ValueError):
        reflect_translate(m, 0, 2)


@given(
    st.dictionaries(st.integers(-50, 50), st.floats(0.01, 5.0), max_size=10),
    st.integers(-30, 30),
    st.sampled_from([1, -1]),
)
@settings(max_examples=100, deadline=None)
def test_reflect_translate_preserves_masses(cells, j, orientation):
    m = GridMeasure(0, cells)
    t = reflect_translate(m, Fraction(j), orientation)
    assert sorted(t.cells.values()) == sorted(m.cells.values())
    assert t.total == pytest.approx(m.total)


def test_joint_hull():
    a = GridMeasure(0, {2: 1.0})
    b = GridMeasure(0, {7: 1.0, -1: 0.5})
    assert joint_hull(a, b) == GridInterval(-1, 7, 0)
    assert joint_hull(a, GridMeasure(0, {})) == GridInterval(2, 2, 0)


def test_function_algebra_and_norms():
    mu = GridMeasure(0, {0: 2.0, 1: 3.0, 2: 1.0})
    f = GridFunction(0, {0: 1.0, 1: -2.0})
    g = GridFunction(0, {1: 4.0, 2: 5.0})
    assert dot(f, g, mu) == 3.0 * (-2.0) * 4.0
    assert norm_l2(f, mu) == math.sqrt(2.0 + 12.0)
    assert (f + g).values == {0: 1.0, 1: 2.0, 2: 5.0}
    assert (f - f).values == {}
    assert f.scaled(-3.0)[1] == 6.0
    # zero values are pruned on construction
    assert GridFunction(0, {4: 0.0}).values == {}


def test_indicator_and_values_at():
    ind = indicator(GridInterval(2, 4, 0))
    assert ind.values == {2: 1.0, 3: 1.0, 4: 1.0}
    np.testing.assert_array_equal(ind.values_at(np.array([1, 2, 5])), [0.0, 1.0, 0.0])
