import math
from fractions import Fraction

import numpy as np
import pytest

from holistic2d.grid import (
    STENCILS,
    GridField,
    MacroGrid,
    StencilId,
    apply_stencil,
    apply_stencil_field,
    field_at,
    stencil_of_cube,
    stencil_of_power,
    stencil_weights,
)

DIFFERENCE_STENCILS = [s for s in StencilId]


def quadratic_field(m=10):
    grid = MacroGrid.periodic(m)
    return grid, grid.sample(lambda x, y: x ** 2 + y ** 2)


def test_grid_validation():
    with pytest.raises(ValueError):
        MacroGrid(0.0, 4, 4)
    with pytest.raises(ValueError):
        MacroGrid(1.0, 1, 4)
    with pytest.raises(ValueError):
        MacroGrid.odd_periodic(4).zeros().with_values(np.zeros((4, 4)))


def test_odd_periodic_geometry():
    g = MacroGrid.odd_periodic(8)
    assert g.shape == (7, 7)
    assert g.h == pytest.approx(math.pi / 8)
    X, _ = g.coords()
    assert X[0, 0] == pytest.approx(g.h)
    assert X[-1, 0] == pytest.approx(math.pi - g.h)


def test_periodic_wrap():
    g = MacroGrid.periodic(4)
    u = GridField(g, np.arange(16.0).reshape(4, 4))
    assert field_at(u, 5, 0) == u.values[1, 0]
    assert field_at(u, -1, -1) == u.values[3, 3]


def test_odd_symmetry_lines_are_zero():
    g = MacroGrid.odd_periodic(6)
    u = g.sample(lambda x, y: 1.0 + x * y)
    for j in range(-3, 9):
        assert field_at(u, 0, j) == 0.0
        assert field_at(u, 6, j) == 0.0
        assert field_at(u, j, 12) == 0.0


def test_odd_mirror_past_pi():
    g = MacroGrid.odd_periodic(6)
    u = g.sample(lambda x, y: 1.0 + x + 2 * y)
    # one step past pi mirrors the point one step before, with a sign flip
    assert field_at(u, 7, 2) == -field_at(u, 5, 2)
    assert field_at(u, 2, -1) == -field_at(u, 2, 1)


def test_odd_map_twice_returns_value():
    g = MacroGrid.odd_periodic(5)
    u = g.sample(lambda x, y: np.cos(x) + y)
    for i in range(1, 5):
        for j in range(1, 5):
            # reflect about x = 0 and about y = pi: two sign flips
            assert field_at(u, -i, 10 - j) == field_at(u, i, j)
            assert field_at(u, i + 10, j - 10) == field_at(u, i, j)


def test_extend_matches_field_at():
    g = MacroGrid.odd_periodic(5)
    u = g.sample(lambda x, y: np.sin(x) * (1 + y))
    full = u.full()
    for i in range(full.shape[0]):
        for j in range(full.shape[1]):
            assert full[i, j] == field_at(u, i, j)


@pytest.mark.parametrize("s", DIFFERENCE_STENCILS)
def test_stencil_weights_sum_to_zero(s):
    assert sum(stencil_weights(s).values()) == 0


def test_delta2_of_quadratic():
    grid, u = quadratic_field()
    assert apply_stencil(u, StencilId.DELTA2, 5, 5) == pytest.approx(4 * grid.h ** 2, rel=1e-12)


def test_delta4_of_quadratic():
    _, u = quadratic_field()
    assert abs(apply_stencil(u, StencilId.DELTA4, 5, 5)) < 1e-12


def test_delta4_printed_weights():
    # the printed formula, offset by offset
    brute = {(2, 0): 1, (-2, 0): 1, (0, 2): 1, (0, -2): 1,
             (1, 0): -4, (-1, 0): -4, (0, 1): -4, (0, -1): -4, (0, 0): 12}
    assert stencil_weights(StencilId.DELTA4) == {k: Fraction(v) for k, v in brute.items()}


def test_delta2_printed_weights():
    brute = {(1, 0): 1, (-1, 0): 1, (0, 1): 1, (0, -1): 1, (0, 0): -4}
    assert stencil_weights(StencilId.DELTA2) == {k: Fraction(v) for k, v in brute.items()}


def test_delta6_is_sum_of_axis_sixth_differences():
    w = stencil_weights(StencilId.DELTA6)
    one_d = [1, -6, 15, -20, 15, -6, 1]
    expect = {}
    for k, c in zip(range(-3, 4), one_d):
        expect[(k, 0)] = expect.get((k, 0), 0) + c
        expect[(0, k)] = expect.get((0, k), 0) + c
    assert w == {k: Fraction(v) for k, v in expect.items()}


def test_mean_difference_weights():
    assert stencil_weights(StencilId.MU_DELTA_X) == {(1, 0): Fraction(1, 2), (-1, 0): Fraction(-1, 2)}
    assert stencil_weights(StencilId.MU_DELTA3_Y) == {
        (0, 2): Fraction(1, 2), (0, 1): Fraction(-1), (0, -1): Fraction(1), (0, -2): Fraction(-1, 2)}


def test_fourth_order_laplacian_is_exact_for_quartics():
    g = MacroGrid.periodic(16)
    u = g.sample(lambda x, y: x ** 4 + y ** 4)
    X, Y = g.coords()
    val = apply_stencil(u, StencilId.LAPLACIAN4, 8, 8) / g.h ** 2
    assert val == pytest.approx(12 * X[8, 8] ** 2 + 12 * Y[8, 8] ** 2, rel=1e-10)


@pytest.mark.parametrize("k,l", [(1, 1), (2, 1), (3, 3)])
def test_delta2_discrete_eigenvector(k, l):
    g = MacroGrid.odd_periodic(12)
    u = g.sample(lambda x, y: np.sin(k * x) * np.sin(l * y))
    lam = -4 * (math.sin(k * g.h / 2) ** 2 + math.sin(l * g.h / 2) ** 2)
    out = apply_stencil_field(u, StencilId.DELTA2)
    np.testing.assert_allclose(out.values, lam * u.values, atol=1e-13)


def test_cube_then_difference():
    g = MacroGrid.periodic(8)
    u = g.sample(lambda x, y: x + 0 * y)
    h = g.h
    # x^3 second difference at x: 6 x h^2
    assert stencil_of_cube(u, StencilId.DELTA2X, 0 + 4, 0) == pytest.approx(6 * 4 * h * h ** 2)
    assert stencil_of_cube(u, StencilId.DELTA2X, 1, 0) == pytest.approx(6 * h ** 3)
    c = GridField(g, np.full(g.shape, 0.7))
    assert stencil_of_cube(c, StencilId.DELTA4, 3, 3) == pytest.approx(0.0, abs=1e-14)


def test_cube_matches_brute_force():
    rng = np.random.default_rng(3)
    g = MacroGrid.periodic(5)
    u = GridField(g, rng.standard_normal(g.shape))
    cube = GridField(g, u.values ** 3)
    for s in (StencilId.DELTA2, StencilId.DELTA4, StencilId.DELTA2X_DELTA2Y):
        for i in range(5):
            for j in range(5):
                assert stencil_of_cube(u, s, i, j) == pytest.approx(apply_stencil(cube, s, i, j), abs=1e-12)
    assert stencil_of_power(u, StencilId.DELTA2, 2, 2, 2) == pytest.approx(
        apply_stencil(GridField(g, u.values ** 2), StencilId.DELTA2, 2, 2))


@pytest.mark.parametrize("s", DIFFERENCE_STENCILS)
def test_vectorised_matches_pointwise(s):
    rng = np.random.default_rng(7)
    g = MacroGrid.odd_periodic(7)
    u = GridField(g, rng.standard_normal(g.shape))
    vec = apply_stencil_field(u, s)
    for a in range(g.shape[0]):
        for b in range(g.shape[1]):
            assert vec.values[a, b] == pytest.approx(apply_stencil(u, s, a + 1, b + 1), abs=1e-12)


def test_every_stencil_registered():
    assert set(STENCILS) == set(StencilId)
