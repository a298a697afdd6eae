# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import isotonic_regression

from .exception import NonpositiveWeight, UsageError
from .grid import FloatArray


@dataclass(frozen=True, eq=False)
class IsotonicProblem:
    """Weighted least squares under a monotone ordering.

    :param values: Values ``v`` to be fitted.
    :param weights: (optional) Positive weights. Defaults to ones.
    :param increasing: (optional) ``True`` for nondecreasing fits.
    """

    values: FloatArray
    weights: Optional[FloatArray] = None
    increasing: bool = True


def pava(problem: IsotonicProblem) -> FloatArray:
    """Pool adjacent violators.

    Returns the unique minimizer of ``sum_j w_j (h_j - v_j)^2`` over monotone
    ``h``; pooled blocks carry their weighted means.

    :raises: NonpositiveWeight
    """
    values = np.asarray(problem.values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise UsageError("Isotonic regression needs at least one value.")
    weights = None
    if problem.weights is not None:
        weights = np.asarray(problem.weights, dtype=np.float64).reshape(-1)
        if weights.shape != values.shape:
            raise UsageError("Isotonic values and weights differ in length.")
        if not np.all(weights > 0):
            raise NonpositiveWeight("Isotonic weights must be positive.")
    result = isotonic_regression(values, weights=weights, increasing=problem.increasing)
    fitted: FloatArray = np.asarray(result.x, dtype=np.float64)
    return fitted


def isotonic_lines(
    values: FloatArray, weights: FloatArray, increasing: bool = True
) -> FloatArray:
    """Run :func:`pava` on every row of a 2-D array with matching weights."""
    fitted = np.empty_like(values, dtype=np.float64)
    for row in range(values.shape[0]):
        fitted[row] = pava(IsotonicProblem(values[row], weights[row], increasing))
    return fitted
