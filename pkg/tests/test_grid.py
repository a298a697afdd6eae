# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

import math
from typing import List, Optional, Tuple

import numpy as np
import pytest

from pyshape_cone.exception import (
    GridMismatch,
    NonFiniteValues,
    NonpositiveRange,
    TooFewPoints,
    UsageError,
)
from pyshape_cone.grid import FunctionGrid, Grid, l2_inner, l2_norm, make_grid


def test_points_and_spacing(line_grid: Grid) -> None:
    assert line_grid.size == 37
    assert line_grid.dims == 1
    assert line_grid.spacing[0] == pytest.approx(0.05)
    assert line_grid.points[0][0] == pytest.approx(-0.9)
    assert line_grid.points[0][-1] == pytest.approx(0.9)


def test_trapezoid_weights() -> None:
    grid = make_grid([(0.0, 1.0)], [11])
    assert grid.weights[0] == pytest.approx(0.05)
    assert grid.weights[5] == pytest.approx(0.1)
    assert grid.weights.sum() == pytest.approx(1.0)


def test_uniform_weights() -> None:
    grid = make_grid([(0.0, 1.0)], [4], rule="uniform")
    np.testing.assert_allclose(grid.weights, 0.25)


def test_trapezoid_norm_of_identity() -> None:
    grid = make_grid([(0.0, 1.0)], [11])
    f = FunctionGrid.from_function(grid, lambda z: z[:, 0])
    assert l2_norm(f) == pytest.approx(math.sqrt(0.335))


def test_row_major_coordinates() -> None:
    grid = make_grid([(0.0, 1.0), (0.0, 2.0)], [2, 3])
    np.testing.assert_allclose(
        grid.coords,
        [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]],
    )
    np.testing.assert_array_equal(grid.index_array(), [[0, 1, 2], [3, 4, 5]])


def test_product_weights(square_grid: Grid) -> None:
    assert square_grid.weights.sum() == pytest.approx(1.0)
    assert square_grid.weights[0] == pytest.approx(0.125**2)
    assert square_grid.weights[6] == pytest.approx(0.25**2)


def test_matrix_norm_is_frobenius() -> None:
    grid = make_grid([(0.0, 1.0)], [2], rule="uniform")
    values = np.array([[[1.0, 2.0], [2.0, 0.0]], [[0.0, 0.0], [0.0, 3.0]]])
    f = FunctionGrid(grid, values)
    assert f.is_matrix
    assert f.dq == 2
    assert l2_norm(f) == pytest.approx(math.sqrt(0.5 * 9.0 + 0.5 * 9.0))


def test_arithmetic(square_grid: Grid) -> None:
    f = FunctionGrid.from_function(square_grid, lambda z: z[:, 0] + z[:, 1])
    g = FunctionGrid.zeros(square_grid)
    np.testing.assert_allclose((f - f).values, g.values)
    np.testing.assert_allclose((2 * f).values, (f + f).values)
    np.testing.assert_allclose((-f).values, -f.values)
    assert l2_inner(f, g) == 0.0
    assert f.sup_norm() == pytest.approx(2.0)


def test_values_are_read_only(line_grid: Grid) -> None:
    f = FunctionGrid.zeros(line_grid)
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_empty_range() -> None:
    with pytest.raises(NonpositiveRange):
        make_grid([(1.0, 1.0)], [5])


def test_too_few_points() -> None:
    with pytest.raises(TooFewPoints):
        make_grid([(0.0, 1.0)], [1])


def test_unknown_rule() -> None:
    with pytest.raises(UsageError):
        make_grid([(0.0, 1.0)], [3], rule="simpson")


def test_grid_mismatch(line_grid: Grid, square_grid: Grid) -> None:
    with pytest.raises(GridMismatch):
        FunctionGrid.zeros(line_grid) + FunctionGrid.zeros(square_grid)
    with pytest.raises(GridMismatch):
        FunctionGrid(line_grid, np.zeros(3))


def test_non_finite_values(line_grid: Grid) -> None:
    values = np.zeros(line_grid.size)
    values[3] = np.nan
    with pytest.raises(NonFiniteValues):
        FunctionGrid(line_grid, values)


@pytest.mark.parametrize("dq", [None, 2])
def test_inner_product_is_bilinear(
    dq: Optional[int], square_grid: Grid, rng: np.random.Generator
) -> None:
    shape = (square_grid.size,) if dq is None else (square_grid.size, dq, dq)
    for _ in range(50):
        f, g, h = (
            FunctionGrid(square_grid, rng.standard_normal(shape)) for _ in range(3)
        )
        a, b = rng.normal(scale=5.0, size=2)
        combined = l2_inner(f * a + g * b, h)
        expected = a * l2_inner(f, h) + b * l2_inner(g, h)
        assert combined == pytest.approx(expected, abs=1e-10)
        assert l2_inner(f, g) == pytest.approx(l2_inner(g, f), abs=1e-12)


@pytest.mark.parametrize("dq", [None, 3])
def test_cauchy_schwarz(
    dq: Optional[int], line_grid: Grid, rng: np.random.Generator
) -> None:
    shape = (line_grid.size,) if dq is None else (line_grid.size, dq, dq)
    for _ in range(50):
        f = FunctionGrid(line_grid, rng.standard_normal(shape))
        g = FunctionGrid(line_grid, rng.standard_normal(shape))
        assert abs(l2_inner(f, g)) <= l2_norm(f) * l2_norm(g) + 1e-12
        # equality for parallel functions
        assert l2_inner(f, f * 3.0) == pytest.approx(l2_norm(f) * l2_norm(f * 3.0))


@pytest.mark.parametrize(
    "bounds", [[(-0.9, 0.9)], [(0.0, 1.0), (0.0, 2.0)], [(-1.0, 0.5), (1.0, 3.0)]]
)
def test_trapezoid_integrates_linear_functions(
    bounds: List[Tuple[float, float]], rng: np.random.Generator
) -> None:
    grid = make_grid(bounds, [7] * len(bounds))
    one = FunctionGrid.from_function(grid, lambda z: np.ones(len(z)))
    volume = float(np.prod([hi - lo for lo, hi in bounds]))
    midpoint = np.array([(lo + hi) / 2.0 for lo, hi in bounds])
    for _ in range(10):
        intercept = rng.standard_normal()
        slope = rng.standard_normal(len(bounds))
        f = FunctionGrid(grid, intercept + grid.coords @ slope)
        expected = volume * (intercept + midpoint @ slope)
        assert l2_inner(f, one) == pytest.approx(expected, abs=1e-12)
