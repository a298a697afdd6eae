# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""B-spline sieve regression and its score bootstrap.

Tensor-product basis columns are ordered lexicographically with the last
dimension varying fastest, the same convention as grid points.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy import linalg
from scipy.interpolate import BSpline

from .exception import (
    DegenerateColumn,
    DimensionMismatch,
    EmptyData,
    LengthMismatch,
    NonFiniteValues,
    OutOfRange,
    TooSmall,
    UsageError,
)
from .grid import FloatArray, FunctionGrid, Grid

logger = logging.getLogger(__name__)

WEIGHT_LAWS = ("normal", "rademacher", "mammen")
SLUTSKY_FORMS = ("budget_share", "levels")

RANGE_SLACK = 1e-12
RANK_CUTOFF = 1e-10

_SQRT5 = math.sqrt(5.0)


def knots_from_quantiles(
    z_column: npt.ArrayLike, interior: int, order: int
) -> FloatArray:
    """Clamped knot vector with interior knots at equispaced empirical quantiles.

    The ``j``-th interior knot is the order statistic with (1-based) index
    ``ceil(j * n / (interior + 1))``; the end knots are the column extremes
    repeated ``order`` times.

    :raises: DegenerateColumn, TooSmall
    """
    values = np.sort(np.asarray(z_column, dtype=np.float64).reshape(-1))
    n = values.size
    if interior < 0 or n <= interior:
        raise TooSmall(f"{interior} interior knots need more than {n} observations.")
    if order < 1:
        raise UsageError(f"Spline order must be at least 1, got {order}.")
    lo, hi = float(values[0]), float(values[-1])
    if not lo < hi:
        raise DegenerateColumn("Cannot place knots on a constant column.")
    index = [-(-j * n // (interior + 1)) - 1 for j in range(1, interior + 1)]
    inner = values[index]
    if inner.size and not (inner[0] > lo and inner[-1] < hi):
        raise DegenerateColumn("Interior knots fall on the ends of the data range.")
    return np.concatenate([np.full(order, lo), inner, np.full(order, hi)])


@dataclass(frozen=True, eq=False)
class SieveBasis:
    """Tensor product of clamped univariate B-spline bases.

    :param knots: One clamped knot vector per dimension.
    :param orders: Spline order per dimension (4 cubic, 3 quadratic).
    """

    knots: Tuple[FloatArray, ...]
    orders: Tuple[int, ...]
    _splines: Tuple[BSpline, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.knots) == 0 or len(self.knots) != len(self.orders):
            raise DimensionMismatch("Give one knot vector and one order per dimension.")
        splines = []
        for knots, order in zip(self.knots, self.orders):
            size = len(knots) - order
            if size < 1:
                raise TooSmall("Knot vector too short for the spline order.")
            splines.append(BSpline(np.asarray(knots), np.eye(size), order - 1))
        object.__setattr__(self, "_splines", tuple(splines))

    @classmethod
    def from_data(
        cls,
        Z: npt.ArrayLike,
        interior: Union[int, Sequence[int]],
        order: Union[int, Sequence[int]] = 4,
    ) -> "SieveBasis":
        """Place knots at the quantiles of every column of ``Z``.

        Usage::

          basis = SieveBasis.from_data(Z, interior=3, order=4)
          basis.size  # 7 in one dimension

        """
        Z = _as_matrix(Z)
        dims = Z.shape[1]
        interiors = [interior] * dims if isinstance(interior, int) else list(interior)
        orders = [order] * dims if isinstance(order, int) else list(order)
        if len(interiors) != dims or len(orders) != dims:
            raise DimensionMismatch("Knot settings do not match the covariates.")
        knots = tuple(
            knots_from_quantiles(Z[:, j], interiors[j], orders[j]) for j in range(dims)
        )
        return cls(knots, tuple(orders))

    @property
    def dims(self) -> int:
        return len(self.orders)

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(len(t) - o for t, o in zip(self.knots, self.orders))

    @property
    def size(self) -> int:
        """Sieve dimension ``k_n``."""
        return int(np.prod(self.sizes))

    @property
    def lower(self) -> FloatArray:
        return np.array([t[0] for t in self.knots])

    @property
    def upper(self) -> FloatArray:
        return np.array([t[-1] for t in self.knots])

    def _clip(self, points: npt.ArrayLike) -> FloatArray:
        points = _as_matrix(points)
        if points.shape[1] != self.dims:
            raise DimensionMismatch(
                f"Points have {points.shape[1]} coordinates, the basis {self.dims}."
            )
        lo, hi = self.lower, self.upper
        if np.any(points < lo - RANGE_SLACK) or np.any(points > hi + RANGE_SLACK):
            raise OutOfRange("Evaluation points lie outside the knot span.")
        return np.clip(points, lo, hi)

    def evaluate(
        self, points: npt.ArrayLike, derivative: Optional[int] = None
    ) -> FloatArray:
        """Basis matrix of shape ``(n, k_n)`` at ``(n, d)`` points.

        :param derivative: (optional) Differentiate once along this dimension.
        :raises: OutOfRange, DimensionMismatch
        """
        points = self._clip(points)
        if derivative is not None and not 0 <= derivative < self.dims:
            raise DimensionMismatch(f"No dimension {derivative} to differentiate.")
        out = np.ones((points.shape[0], 1))
        for dim, spline in enumerate(self._splines):
            if dim == derivative:
                if self.orders[dim] < 2:
                    raise TooSmall("Differentiation needs a spline order of 2+.")
                spline = spline.derivative()
            values = spline(points[:, dim])
            out = np.einsum("ni,nj->nij", out, values).reshape(points.shape[0], -1)
        return out


def eval_basis(basis: SieveBasis, z: npt.ArrayLike) -> FloatArray:
    """Basis vector ``h(z)`` at a single point."""
    return basis.evaluate(np.reshape(z, (1, -1)))[0]


def eval_basis_derivative(basis: SieveBasis, z: npt.ArrayLike, dim: int) -> FloatArray:
    """``d h(z) / d z_dim`` at a single point."""
    return basis.evaluate(np.reshape(z, (1, -1)), derivative=dim)[0]


@dataclass(frozen=True)
class BasisSpec:
    """How to build a sieve basis from data: interior knots and order."""

    interior: int = 3
    order: int = 4

    def build(self, Z: npt.ArrayLike) -> SieveBasis:
        return SieveBasis.from_data(Z, self.interior, self.order)


def _as_matrix(values: npt.ArrayLike) -> FloatArray:
    array = np.asarray(values, dtype=np.float64)
    return array.reshape(-1, 1) if array.ndim == 1 else array


@dataclass(frozen=True, eq=False)
class Dataset:
    """Responses ``Y`` on covariates ``Z`` and optional linear covariates ``X``.

    ``Y`` is a vector, or an ``(n, m)`` matrix for a system of ``m``
    equations sharing the covariates.
    """

    Y: FloatArray
    Z: FloatArray
    X: Optional[FloatArray] = None

    def __post_init__(self) -> None:
        Y = np.array(self.Y, dtype=np.float64)
        Z = _as_matrix(np.array(self.Z, dtype=np.float64))
        X = None if self.X is None else _as_matrix(np.array(self.X, dtype=np.float64))
        if Y.shape[0] == 0:
            raise EmptyData("The dataset has no observations.")
        for name, array in (("Z", Z), ("X", X)):
            if array is not None and array.shape[0] != Y.shape[0]:
                raise LengthMismatch(
                    f"{name} has {array.shape[0]} rows, Y has {Y.shape[0]}."
                )
        for array in (Y, Z, X):
            if array is not None and not np.all(np.isfinite(array)):
                raise NonFiniteValues("Dataset entries must be finite.")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return int(self.Y.shape[0])

    @property
    def equations(self) -> int:
        return 1 if self.Y.ndim == 1 else int(self.Y.shape[1])

    def equation(self, j: int) -> "Dataset":
        """The single-equation dataset of response column ``j``."""
        if self.Y.ndim == 1:
            if j != 0:
                raise DimensionMismatch("This dataset has a single equation.")
            return self
        return Dataset(self.Y[:, j], self.Z, self.X)


@dataclass(frozen=True, eq=False)
class SieveFit:
    """Least-squares fit of one equation on ``[h(Z), X]``.

    ``beta`` holds the spline coefficients and ``linear`` the coefficients of
    the linear covariates. ``gram_pinv`` is the pseudo-inverse of
    ``design' design / n`` over the full design.
    """

    basis: SieveBasis
    beta: FloatArray
    linear: FloatArray
    design: FloatArray
    gram_pinv: FloatArray
    residuals: FloatArray
    rank: int

    @property
    def n(self) -> int:
        return int(self.residuals.shape[0])

    @property
    def k_n(self) -> int:
        return self.basis.size

    @property
    def r_n(self) -> float:
        return math.sqrt(self.n / self.k_n)

    @property
    def c_n(self) -> float:
        return 1.0 / math.log(self.n)

    def score_coefficients(self, W: FloatArray) -> FloatArray:
        """Spline coefficients ``r_n [Gram^- (1/n) sum_i W_i d_i u_i]`` per row of W.

        :param W: ``(B, n)`` weights.
        :return: ``(B, k_n)`` coefficients.
        """
        W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        if W.shape[1] != self.n:
            raise LengthMismatch(f"Got {W.shape[1]} weights for {self.n} observations.")
        scores = (W * self.residuals[None, :]) @ self.design / self.n
        return self.r_n * (scores @ self.gram_pinv)[:, : self.k_n]


def fit(dataset: Dataset, basis: SieveBasis) -> SieveFit:
    """Minimum-norm least squares of ``Y`` on the sieve (plus linear covariates).

    Singular values of the Gram matrix below ``1e-10`` times the largest one
    are dropped.

    :raises: EmptyData, DimensionMismatch
    """
    if dataset.equations != 1:
        raise DimensionMismatch("Fit one equation at a time; see Dataset.equation.")
    if dataset.Z.shape[1] != basis.dims:
        raise DimensionMismatch(
            f"Covariates have {dataset.Z.shape[1]} columns, the basis {basis.dims}."
        )
    design = basis.evaluate(dataset.Z)
    if dataset.X is not None:
        design = np.hstack([design, dataset.X])
    n = dataset.n
    U, s, Vt = linalg.svd(design, full_matrices=False, lapack_driver="gesvd")
    keep = s**2 > RANK_CUTOFF * s[0] ** 2 if s.size else np.zeros(0, dtype=bool)
    rank = int(keep.sum())
    if rank < design.shape[1]:
        logger.warning(
            "Sieve design is rank deficient (%d of %d columns)", rank, design.shape[1]
        )
    Uk, sk, Vk = U[:, keep], s[keep], Vt[keep].T
    coef = Vk @ ((Uk.T @ dataset.Y) / sk)
    gram_pinv = n * (Vk / sk**2) @ Vk.T
    residuals = dataset.Y - design @ coef
    logger.debug("Sieve fit: n=%d, k_n=%d, rank=%d", n, basis.size, rank)
    return SieveFit(
        basis=basis,
        beta=coef[: basis.size],
        linear=coef[basis.size :],
        design=design,
        gram_pinv=gram_pinv,
        residuals=residuals,
        rank=rank,
    )


def _check_grid(basis: SieveBasis, grid: Grid) -> None:
    if grid.dims != basis.dims:
        raise DimensionMismatch(
            f"Grid has {grid.dims} dimensions, the basis {basis.dims}."
        )


def eval_fit(
    sieve_fit: SieveFit, grid: Grid, derivative: Optional[int] = None
) -> FunctionGrid:
    """``theta_hat(z_j) = h(z_j)' beta`` at every grid point.

    :raises: OutOfRange, DimensionMismatch
    """
    _check_grid(sieve_fit.basis, grid)
    H = sieve_fit.basis.evaluate(grid.coords, derivative)
    return FunctionGrid(grid, H @ sieve_fit.beta)


def bootstrap_draw(sieve_fit: SieveFit, W: npt.ArrayLike, grid: Grid) -> FunctionGrid:
    """One score-bootstrap draw of ``r_n (theta_hat - theta)`` on the grid.

    :raises: LengthMismatch
    """
    return FunctionGrid(grid, bootstrap_draws(sieve_fit, np.atleast_2d(W), grid)[0])


def bootstrap_draws(sieve_fit: SieveFit, W: FloatArray, grid: Grid) -> FloatArray:
    """All draws at once: a ``(B, grid.size)`` array for ``(B, n)`` weights."""
    _check_grid(sieve_fit.basis, grid)
    coefficients = sieve_fit.score_coefficients(W)
    return coefficients @ sieve_fit.basis.evaluate(grid.coords).T


@dataclass(frozen=True)
class BootstrapConfig:
    """Bootstrap settings.

    :param B: Number of draws.
    :param weight_law: (optional) ``"normal"``, ``"rademacher"`` or ``"mammen"``.
    :param seed: (optional) Seed for :func:`numpy.random.default_rng`.
    """

    B: int = 200
    weight_law: str = "normal"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.B < 2:
            raise TooSmall(f"The bootstrap needs B >= 2 draws, got {self.B}.")
        if self.weight_law not in WEIGHT_LAWS:
            raise UsageError(f"Unknown bootstrap weight law {self.weight_law!r}.")

    def weights(self, n: int) -> FloatArray:
        """The ``(B, n)`` multiplier weights of this configuration."""
        rng = np.random.default_rng(self.seed)
        return draw_weights(rng, n, self.B, self.weight_law)


def draw_weights(
    rng: np.random.Generator, n: int, B: int, law: str = "normal"
) -> FloatArray:
    """``(B, n)`` i.i.d. mean-zero, unit-variance multiplier weights."""
    if law == "normal":
        return rng.standard_normal((B, n))
    if law == "rademacher":
        return rng.choice(np.array([1.0, -1.0]), size=(B, n))
    if law == "mammen":
        values = np.array([-(_SQRT5 - 1.0) / 2.0, (_SQRT5 + 1.0) / 2.0])
        low = (_SQRT5 + 1.0) / (2.0 * _SQRT5)
        return rng.choice(values, size=(B, n), p=[low, 1.0 - low])
    raise UsageError(f"Unknown bootstrap weight law {law!r}.")


@dataclass(frozen=True, eq=False)
class _DemandPieces:
    """Levels, price Jacobian and income derivative of a demand system."""

    levels: FloatArray
    prices: FloatArray
    income: FloatArray


def _check_system(
    fits: Sequence[SieveFit], grid: Grid, gamma: Optional[npt.ArrayLike]
) -> None:
    dq = len(fits)
    if dq == 0:
        raise DimensionMismatch("A demand system needs at least one equation.")
    basis = fits[0].basis
    if any(f.basis is not basis for f in fits[1:]):
        raise DimensionMismatch("All demand equations must share one basis.")
    if basis.dims != dq + 1:
        raise DimensionMismatch(
            f"{dq} goods need {dq + 1} covariates (prices, then income)."
        )
    _check_grid(basis, grid)
    if gamma is not None:
        shape = np.shape(gamma)
        if len(shape) != 2 or shape[1] != dq or shape[0] != fits[0].linear.size:
            raise DimensionMismatch(
                f"Gamma of shape {shape} does not match {dq} equations with "
                f"{fits[0].linear.size} linear covariates."
            )


def _pieces(basis: SieveBasis, grid: Grid, coef: FloatArray) -> _DemandPieces:
    """Evaluate ``coef`` of shape ``(..., dq, k_n)``."""
    dq = basis.dims - 1
    levels = coef @ basis.evaluate(grid.coords).T
    prices = np.stack(
        [coef @ basis.evaluate(grid.coords, j).T for j in range(dq)], axis=-1
    )
    income = coef @ basis.evaluate(grid.coords, dq).T
    # to point-major: levels (..., k, dq), prices (..., k, dq, dq)
    return _DemandPieces(
        np.swapaxes(levels, -1, -2),
        np.moveaxis(prices, -3, -2),
        np.swapaxes(income, -1, -2),
    )


def _outer(a: FloatArray, b: FloatArray) -> FloatArray:
    return a[..., :, None] * b[..., None, :]


def _diag(a: FloatArray) -> FloatArray:
    return a[..., :, None] * np.eye(a.shape[-1])


def slutsky_matrix(
    fits: Sequence[SieveFit],
    gamma: Optional[npt.ArrayLike],
    grid: Grid,
    form: str = "budget_share",
) -> FunctionGrid:
    """Plug-in Slutsky matrix of a fitted demand system on a grid of ``(p, y)``.

    Grid dimensions are the ``d_q`` prices followed by income. The
    ``"levels"`` form is ``D_p g + (D_y g) g'``; ``"budget_share"`` adds
    ``g g' - diag(g)``. The demographic coefficients ``gamma`` shift demand
    additively and do not enter the matrix; they are only checked against the
    fits.

    :raises: DimensionMismatch, OutOfRange
    """
    if form not in SLUTSKY_FORMS:
        raise UsageError(f"Unknown Slutsky form {form!r}.")
    _check_system(fits, grid, gamma)
    coef = np.stack([f.beta for f in fits])
    g = _pieces(fits[0].basis, grid, coef)
    theta = g.prices + _outer(g.income, g.levels)
    if form == "budget_share":
        theta = theta + _outer(g.levels, g.levels) - _diag(g.levels)
    return FunctionGrid(grid, theta)


def slutsky_bootstrap_draws(
    fits: Sequence[SieveFit], W: FloatArray, grid: Grid, form: str = "budget_share"
) -> FloatArray:
    """Linearized bootstrap draws of the Slutsky matrix, ``(B, k, dq, dq)``.

    Each equation gets its score-bootstrap draw with the same weights, and the
    draws pass through the derivative of the Slutsky map at the fitted demand.
    """
    if form not in SLUTSKY_FORMS:
        raise UsageError(f"Unknown Slutsky form {form!r}.")
    _check_system(fits, grid, None)
    basis = fits[0].basis
    g = _pieces(basis, grid, np.stack([f.beta for f in fits]))
    # (B, dq, k_n)
    coef = np.stack([f.score_coefficients(W) for f in fits], axis=1)
    h = _pieces(basis, grid, coef)
    draws = h.prices + _outer(h.income, g.levels) + _outer(g.income, h.levels)
    if form == "budget_share":
        draws = (
            draws + _outer(h.levels, g.levels) + _outer(g.levels, h.levels)
        ) - _diag(h.levels)
    return draws
