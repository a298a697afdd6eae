# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

from typing import Tuple

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pyshape_cone.cones import diff_matrix
from pyshape_cone.exception import NonpositiveWeight, UsageError
from pyshape_cone.grid import FloatArray
from pyshape_cone.isotonic import IsotonicProblem, isotonic_lines, pava
from pyshape_cone.qp import QPProblem, QPStatus, solve

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)


def test_pools_violators() -> None:
    fitted = pava(IsotonicProblem(np.array([3.0, 1.0, 2.0])))
    np.testing.assert_allclose(fitted, [2.0, 2.0, 2.0])


def test_weighted_pool() -> None:
    fitted = pava(IsotonicProblem(np.array([2.0, 0.0]), np.array([1.0, 3.0])))
    np.testing.assert_allclose(fitted, [0.5, 0.5])


def test_decreasing() -> None:
    fitted = pava(IsotonicProblem(np.array([1.0, 3.0, 0.0]), increasing=False))
    np.testing.assert_allclose(fitted, [2.0, 2.0, 0.0])


def test_monotone_input_is_kept() -> None:
    values = np.array([-1.0, 0.0, 0.0, 4.0])
    np.testing.assert_allclose(pava(IsotonicProblem(values)), values)


def test_lines() -> None:
    values = np.array([[3.0, 1.0, 2.0], [0.0, 1.0, 2.0]])
    fitted = isotonic_lines(values, np.ones_like(values))
    np.testing.assert_allclose(fitted, [[2.0, 2.0, 2.0], [0.0, 1.0, 2.0]])


def test_nonpositive_weight() -> None:
    with pytest.raises(NonpositiveWeight):
        pava(IsotonicProblem(np.array([1.0, 2.0]), np.array([1.0, 0.0])))


def test_empty() -> None:
    with pytest.raises(UsageError):
        pava(IsotonicProblem(np.zeros(0)))


@given(arrays(np.float64, st.integers(1, 40), elements=finite))
def test_fit_is_monotone_and_keeps_mean(values: FloatArray) -> None:
    fitted = pava(IsotonicProblem(values))
    assert np.all(np.diff(fitted) >= -1e-9)
    assert fitted.sum() == pytest.approx(values.sum(), abs=1e-6)


@given(arrays(np.float64, st.integers(1, 40), elements=finite))
def test_fit_is_idempotent(values: FloatArray) -> None:
    fitted = pava(IsotonicProblem(values))
    np.testing.assert_allclose(pava(IsotonicProblem(fitted)), fitted, atol=1e-9)


@settings(max_examples=1000, deadline=None)
@given(
    st.integers(2, 50).flatmap(
        lambda k: st.tuples(
            arrays(np.float64, k, elements=st.floats(-10.0, 10.0)),
            arrays(np.float64, k, elements=st.floats(0.1, 10.0)),
        )
    ),
    st.booleans(),
)
def test_fit_solves_the_weighted_qp(
    problem: Tuple[FloatArray, FloatArray], increasing: bool
) -> None:
    values, weights = problem
    fitted = pava(IsotonicProblem(values, weights, increasing))
    rows = diff_matrix(values.size) * (1.0 if increasing else -1.0)
    qp = QPProblem(2.0 * np.diag(weights), -2.0 * weights * values, rows)
    solution = solve(qp)
    assert solution.status is QPStatus.SOLVED
    np.testing.assert_allclose(fitted, solution.x, atol=1e-6)


def test_scipy_result_keeps_weighted_mean(rng: np.random.Generator) -> None:
    values = rng.standard_normal(20)
    weights = rng.uniform(0.5, 2.0, 20)
    fitted = pava(IsotonicProblem(values, weights, increasing=False))
    assert np.all(np.diff(fitted) <= 1e-12)
    assert weights @ fitted == pytest.approx(weights @ values)
