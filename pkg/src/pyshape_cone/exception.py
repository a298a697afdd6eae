# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.


class ShapeTestError(Exception):
    """Base class of every error raised by pyshape_cone."""


class UsageError(ShapeTestError, ValueError):
    """pyshape_cone usage error."""


class NonpositiveRange(UsageError):
    """A grid dimension has ``lo >= hi``."""


class TooFewPoints(UsageError):
    """A grid dimension has fewer than two points."""


class GridMismatch(UsageError):
    """Function grids live on different grids or have different shapes."""


class NonFiniteValues(UsageError):
    """An array holds NaN or infinite entries."""


class TooSmall(UsageError):
    """A difference operator was requested for fewer than two points."""


class IncompatibleCone(UsageError):
    """The cone cannot be placed on the given grid or value shape."""


class UnsupportedIntersection(UsageError):
    """The members of an intersection cannot share one quadratic program."""


class NonpositiveWeight(UsageError):
    """An isotonic regression weight is zero or negative."""


class DegenerateColumn(UsageError):
    """A covariate column cannot carry a knot sequence."""


class OutOfRange(UsageError):
    """An evaluation point lies outside the knot span."""


class EmptyData(UsageError):
    """A dataset holds no observations."""


class LengthMismatch(UsageError):
    """A vector does not match the number of observations."""


class DimensionMismatch(UsageError):
    """Matrix dimensions are inconsistent."""


class NumericalError(ShapeTestError, ArithmeticError):
    """A numerical routine could not produce a usable result."""


class SolverFailure(NumericalError):
    """The quadratic program solver did not converge."""


class DegenerateTau(NumericalError):
    """The bootstrap norm quantile is zero, so the tuning parameter is undefined."""
