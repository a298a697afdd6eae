# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from typing_extensions import Self

from .exception import (
    GridMismatch,
    NonFiniteValues,
    NonpositiveRange,
    TooFewPoints,
    UsageError,
)

FloatArray = npt.NDArray[np.float64]

QUADRATURE_RULES = ("trapezoid", "uniform")


def _rule_weights(lo: float, hi: float, count: int, rule: str) -> FloatArray:
    if rule == "uniform":
        return np.full(count, (hi - lo) / count)
    delta = (hi - lo) / (count - 1)
    weights = np.full(count, delta)
    weights[0] = weights[-1] = delta / 2.0
    return weights


@dataclass(frozen=True)
class Grid:
    """A rectangular, equispaced evaluation lattice with quadrature weights.

    Points are enumerated in row-major order, the last dimension varying
    fastest, and every per-point weight is the product of the per-dimension
    weights.

    :param bounds: Per-dimension ``(lo, hi)`` pairs.
    :param counts: Per-dimension point counts ``N_j + 1``.
    :param rule: (optional) ``"trapezoid"`` (default) or ``"uniform"``.
    :type bounds: tuple
    :type counts: tuple
    :type rule: str

    Usage::

      from pyshape_cone import make_grid

      grid = make_grid([(-0.9, 0.9)], [37])
      grid.points[0][1] - grid.points[0][0]  # 0.05

    """

    bounds: Tuple[Tuple[float, float], ...]
    counts: Tuple[int, ...]
    rule: str = "trapezoid"
    points: Tuple[FloatArray, ...] = field(init=False, repr=False, compare=False)
    axis_weights: Tuple[FloatArray, ...] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        if len(self.bounds) == 0 or len(self.bounds) != len(self.counts):
            raise UsageError("Give one (lo, hi) pair and one count per dimension.")
        if self.rule not in QUADRATURE_RULES:
            raise UsageError(f"Unknown quadrature rule {self.rule!r}.")
        points = []
        weights = []
        for (lo, hi), count in zip(self.bounds, self.counts):
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
                raise NonpositiveRange(f"Grid range ({lo}, {hi}) is empty.")
            if count < 2:
                raise TooFewPoints(f"Grid dimension needs 2 points, got {count}.")
            points.append(np.linspace(lo, hi, count))
            weights.append(_rule_weights(lo, hi, count, self.rule))
        object.__setattr__(self, "points", tuple(points))
        object.__setattr__(self, "axis_weights", tuple(weights))

    @property
    def dims(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(
            (hi - lo) / (n - 1) for (lo, hi), n in zip(self.bounds, self.counts)
        )

    @cached_property
    def weights(self) -> FloatArray:
        """Per-point quadrature weights in row-major order."""
        weights = self.axis_weights[0]
        for axis in self.axis_weights[1:]:
            weights = np.multiply.outer(weights, axis).reshape(-1)
        return weights

    @cached_property
    def coords(self) -> FloatArray:
        """Point coordinates as a ``(size, dims)`` array."""
        mesh = np.meshgrid(*self.points, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def index_array(self) -> npt.NDArray[np.intp]:
        """Flat point indices laid out with shape ``counts``."""
        return np.arange(self.size).reshape(self.counts)


def make_grid(
    bounds: Sequence[Tuple[float, float]],
    counts: Sequence[int],
    rule: str = "trapezoid",
) -> Grid:
    """Build an equispaced grid.

    :raises: NonpositiveRange, TooFewPoints
    """
    return Grid(
        tuple((float(lo), float(hi)) for lo, hi in bounds),
        tuple(int(c) for c in counts),
        rule,
    )


@dataclass(frozen=True, eq=False)
class FunctionGrid:
    """Scalar or square-matrix values attached to the points of a grid.

    ``values`` has shape ``(grid.size,)`` for scalar functions and
    ``(grid.size, d_q, d_q)`` for matrix-valued ones, so each point owns a
    row-major ``d_q * d_q`` block.
    """

    grid: Grid
    values: FloatArray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        k = self.grid.size
        if values.ndim == 1:
            ok = values.shape == (k,)
        elif values.ndim == 3:
            ok = values.shape[0] == k and values.shape[1] == values.shape[2]
        else:
            ok = False
        if not ok:
            raise GridMismatch(
                f"Values of shape {values.shape} do not fit a grid of {k} points."
            )
        if not np.all(np.isfinite(values)):
            raise NonFiniteValues("Function grid values must be finite.")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid, dq: Optional[int] = None) -> Self:
        shape = (grid.size,) if dq is None else (grid.size, dq, dq)
        return cls(grid, np.zeros(shape))

    @classmethod
    def from_function(
        cls, grid: Grid, func: Callable[[FloatArray], FloatArray]
    ) -> Self:
        """Evaluate ``func`` on the ``(size, dims)`` coordinate array."""
        return cls(grid, np.asarray(func(grid.coords), dtype=np.float64))

    @property
    def dq(self) -> Optional[int]:
        return None if self.values.ndim == 1 else int(self.values.shape[1])

    @property
    def is_matrix(self) -> bool:
        return self.values.ndim == 3

    @property
    def flat(self) -> FloatArray:
        return self.values.reshape(-1)

    def like(self, values: FloatArray) -> "FunctionGrid":
        return FunctionGrid(self.grid, np.asarray(values).reshape(self.values.shape))

    def sup_norm(self) -> float:
        if self.values.size == 0:
            return 0.0
        return float(np.max(np.abs(self.values)))

    def _check(self, other: "FunctionGrid") -> None:
        if self.grid != other.grid or self.values.shape != other.values.shape:
            raise GridMismatch("Function grids differ in grid or value shape.")

    def __add__(self, other: "FunctionGrid") -> "FunctionGrid":
        self._check(other)
        return FunctionGrid(self.grid, self.values + other.values)

    def __sub__(self, other: "FunctionGrid") -> "FunctionGrid":
        self._check(other)
        return FunctionGrid(self.grid, self.values - other.values)

    def __neg__(self) -> "FunctionGrid":
        return FunctionGrid(self.grid, -self.values)

    def __mul__(self, scale: Union[float, int]) -> "FunctionGrid":
        return FunctionGrid(self.grid, float(scale) * self.values)

    __rmul__ = __mul__


def _pointwise_products(f: FunctionGrid, g: FunctionGrid) -> FloatArray:
    if f.is_matrix:
        # tr(f^T g) is the entrywise product summed over the block
        return np.einsum("kij,kij->k", f.values, g.values)
    return f.values * g.values


def l2_inner(f: FunctionGrid, g: FunctionGrid) -> float:
    """Quadrature inner product ``sum_j w_j <f(z_j), g(z_j)>``.

    :raises: GridMismatch
    """
    f._check(g)  # pylint: disable=protected-access
    return float(np.dot(f.grid.weights, _pointwise_products(f, g)))


def l2_norm(f: FunctionGrid) -> float:
    """Quadrature L2 norm; Frobenius norm per point for matrix values."""
    return math.sqrt(max(l2_inner(f, f), 0.0))
