# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""Shape hypotheses as closed convex cones, and projections onto them.

Every projection minimizes the quadrature-weighted distance
``sum_j w_j ||h_j - f_j||^2`` over the discretized cone, so it agrees with
the norm the test statistic is measured in.

Constraint rows of grid-based cones are ordered dimension-major, then by
grid line, then by point along the line.
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import scipy.sparse

from .exception import (
    IncompatibleCone,
    SolverFailure,
    TooSmall,
    UnsupportedIntersection,
)
from .grid import FloatArray, FunctionGrid, Grid, l2_norm
from .isotonic import isotonic_lines
from .qp import Matrix, QPProblem, QPSolver, QPStatus

logger = logging.getLogger(__name__)

IndexArray = npt.NDArray[np.intp]


class Direction(Enum):
    INCREASING = 1
    DECREASING = -1
    FREE = 0


class PlanKind(Enum):
    LINEAR_CONSTRAINTS = "linear_constraints"
    CLOSED_FORM_NONNEG = "closed_form_nonneg"
    CLOSED_FORM_SLUTSKY = "closed_form_slutsky"
    KUOSMANEN_QP = "kuosmanen_qp"


def diff_matrix(k: int) -> FloatArray:
    """First-difference operator ``D_k`` of shape ``(k - 1, k)``.

    :raises: TooSmall
    """
    if k < 2:
        raise TooSmall(f"A difference matrix needs k >= 2, got {k}.")
    D = np.zeros((k - 1, k))
    rows = np.arange(k - 1)
    D[rows, rows] = -1.0
    D[rows, rows + 1] = 1.0
    return D


def _difference_rows(size: int, low: IndexArray, high: IndexArray) -> FloatArray:
    A = np.zeros((low.size, size))
    rows = np.arange(low.size)
    A[rows, low] = -1.0
    A[rows, high] = 1.0
    return A


def _line_indices(grid: Grid, dim: int) -> IndexArray:
    """Flat point indices of every grid line along ``dim``, one line per row."""
    idx = np.moveaxis(grid.index_array(), dim, -1)
    return idx.reshape(-1, grid.counts[dim])


@dataclass(frozen=True)
class ConeSpec:
    """A shape hypothesis. Subclasses describe how to project onto it."""

    kind = PlanKind.LINEAR_CONSTRAINTS

    @property
    def label(self) -> str:
        return type(self).__name__.lower()

    @property
    def linear(self) -> bool:
        return self.kind is PlanKind.LINEAR_CONSTRAINTS

    def check_grid(self, grid: Grid) -> None:
        """Raise `IncompatibleCone` unless the cone can live on ``grid``."""

    def rows(self, grid: Grid) -> FloatArray:
        """Constraint matrix ``A`` of the discretized cone ``{h: Ah >= 0}``."""
        raise UnsupportedIntersection(f"{self.label} has no linear constraint form.")


@dataclass(frozen=True)
class Monotone(ConeSpec):
    """Monotone in every dimension whose direction is not `Direction.FREE`."""

    directions: Tuple[Direction, ...] = (Direction.INCREASING,)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "directions", tuple(Direction(d) for d in self.directions)
        )

    @classmethod
    def increasing(cls, dims: int = 1) -> "Monotone":
        return cls((Direction.INCREASING,) * dims)

    @classmethod
    def decreasing(cls, dims: int = 1) -> "Monotone":
        return cls((Direction.DECREASING,) * dims)

    @property
    def label(self) -> str:
        signs = {Direction.INCREASING: "+", Direction.DECREASING: "-"}
        return "monotone(" + ",".join(signs.get(d, "0") for d in self.directions) + ")"

    @property
    def constrained_dims(self) -> Tuple[int, ...]:
        return tuple(
            i for i, d in enumerate(self.directions) if d is not Direction.FREE
        )

    def check_grid(self, grid: Grid) -> None:
        if len(self.directions) != grid.dims:
            raise IncompatibleCone(
                f"{self.label} needs {len(self.directions)} dimensions, "
                f"the grid has {grid.dims}."
            )

    def rows(self, grid: Grid) -> FloatArray:
        blocks = [np.zeros((0, grid.size))]
        for dim in self.constrained_dims:
            lines = _line_indices(grid, dim)
            block = _difference_rows(
                grid.size, lines[:, :-1].reshape(-1), lines[:, 1:].reshape(-1)
            )
            blocks.append(self.directions[dim].value * block)
        return np.vstack(blocks)


@dataclass(frozen=True)
class Convex1D(ConeSpec):
    """Univariate convexity, ``D_{k-1} D_k h >= 0``."""

    sign = 1.0

    def check_grid(self, grid: Grid) -> None:
        if grid.dims != 1 or grid.counts[0] < 3:
            raise IncompatibleCone(f"{self.label} needs a 1-D grid of 3+ points.")

    def rows(self, grid: Grid) -> FloatArray:
        k = grid.counts[0]
        return self.sign * (diff_matrix(k - 1) @ diff_matrix(k))


@dataclass(frozen=True)
class Concave1D(Convex1D):
    """Univariate concavity, ``-D_{k-1} D_k h >= 0``."""

    sign = -1.0


@dataclass(frozen=True)
class Supermodular(ConeSpec):
    """Nonnegative mixed second differences for every pair of dimensions."""

    def check_grid(self, grid: Grid) -> None:
        if grid.dims < 2:
            raise IncompatibleCone("Supermodularity needs at least 2 dimensions.")

    def rows(self, grid: Grid) -> FloatArray:
        blocks = [np.zeros((0, grid.size))]
        for p, q in itertools.combinations(range(grid.dims), 2):
            i00 = _corner(grid, p, q, 0, 0)
            i11 = _corner(grid, p, q, 1, 1)
            block = _difference_rows(grid.size, _corner(grid, p, q, 1, 0), i11)
            block -= _difference_rows(grid.size, i00, _corner(grid, p, q, 0, 1))
            blocks.append(block)
        return np.vstack(blocks)


def _corner(grid: Grid, p: int, q: int, dp: int, dq: int) -> IndexArray:
    """Flat indices of the cell corners offset by ``(dp, dq)`` in dims ``p, q``."""
    sl = [slice(None)] * grid.dims
    sl[p] = slice(dp, grid.counts[p] - 1 + dp)
    sl[q] = slice(dq, grid.counts[q] - 1 + dq)
    return grid.index_array()[tuple(sl)].reshape(-1)


@dataclass(frozen=True)
class PointwiseNonnegative(ConeSpec):
    """Nonnegativity as the bound rows ``h_j >= 0``; joins intersections."""

    def rows(self, grid: Grid) -> FloatArray:
        return np.eye(grid.size)


@dataclass(frozen=True)
class Nonnegative(ConeSpec):
    """Nonnegativity, projected in closed form by ``max(f, 0)``."""

    kind = PlanKind.CLOSED_FORM_NONNEG


@dataclass(frozen=True)
class Slutsky(ConeSpec):
    """Negative semidefinite (and by default symmetric) matrix functions.

    With ``symmetric=False`` only the symmetric part is required to be
    negative semidefinite.
    """

    kind = PlanKind.CLOSED_FORM_SLUTSKY

    dq: int = 2
    symmetric: bool = True

    @property
    def label(self) -> str:
        return f"slutsky(dq={self.dq}{'' if self.symmetric else ',nsd-only'})"


@dataclass(frozen=True)
class ConcaveMultivariate(ConeSpec):
    """Concavity on a grid of any dimension via the min-of-affine representation.

    :param increasing: (optional) Also require nonnegative slopes, which gives
        the joint monotone and concave cone.
    """

    kind = PlanKind.KUOSMANEN_QP
    concave = True

    increasing: bool = False

    @property
    def label(self) -> str:
        base = "concave" if self.concave else "convex"
        return f"{base}-multivariate{'(increasing)' if self.increasing else ''}"


@dataclass(frozen=True)
class ConvexMultivariate(ConcaveMultivariate):
    """Convexity via the max-of-affine representation."""

    concave = False


@dataclass(frozen=True)
class Intersection(ConeSpec):
    """Intersection of linear-constraint cones; constraint rows are stacked."""

    members: Tuple[ConeSpec, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not self.members:
            raise UnsupportedIntersection("An intersection needs members.")
        for member in self.members:
            if isinstance(member, Intersection):
                raise UnsupportedIntersection("Intersections must be flattened.")
            if not member.linear:
                raise UnsupportedIntersection(
                    f"{member.label} cannot be intersected; use "
                    "PointwiseNonnegative for nonnegativity."
                )

    @property
    def label(self) -> str:
        return "+".join(m.label for m in self.members)

    def check_grid(self, grid: Grid) -> None:
        for member in self.members:
            member.check_grid(grid)

    def rows(self, grid: Grid) -> FloatArray:
        return np.vstack([m.rows(grid) for m in self.members])


def intersect(cones: Sequence[ConeSpec]) -> Intersection:
    """Intersect two or more linear-constraint cones.

    :raises: UnsupportedIntersection
    """
    if len(cones) < 2:
        raise UnsupportedIntersection("An intersection needs at least 2 cones.")
    members = []
    for cone in cones:
        members.extend(cone.members if isinstance(cone, Intersection) else [cone])
    return Intersection(tuple(members))


@dataclass(frozen=True, eq=False)
class ProjectionPlan:
    """How to project onto a cone on a particular grid.

    For quadratic-program kinds, ``P`` and ``G`` are the solver matrices and
    ``S`` maps the decision vector to grid values (the identity for
    `PlanKind.LINEAR_CONSTRAINTS`). ``A`` is the constraint matrix in grid
    values, ``C`` the constraint matrix of the affine representation.
    """

    kind: PlanKind
    grid: Grid
    A: Optional[FloatArray] = None
    S: Optional[FloatArray] = None
    C: Optional[Matrix] = None
    P: Optional[FloatArray] = None
    concave: bool = True

    @property
    def G(self) -> Optional[Matrix]:
        return self.A if self.kind is PlanKind.LINEAR_CONSTRAINTS else self.C

    @property
    def relative_weights(self) -> FloatArray:
        return self.grid.weights / self.grid.weights.mean()

    def violation(self, values: FloatArray) -> float:
        """Largest violation of ``A h >= 0`` (0 when the rows are satisfied)."""
        if self.A is None or self.A.shape[0] == 0:
            return 0.0
        return max(0.0, -float((self.A @ values).min()))


def _frozen(array: FloatArray) -> FloatArray:
    array.setflags(write=False)
    return array


def _affine_selector(grid: Grid) -> FloatArray:
    k, d = grid.size, grid.dims
    S = np.zeros((k, k * (d + 1)))
    for i in range(k):
        S[i, i * (d + 1)] = 1.0
        S[i, i * (d + 1) + 1 : (i + 1) * (d + 1)] = grid.coords[i]
    return S


def _affine_constraints(grid: Grid, concave: bool, increasing: bool) -> Matrix:
    """Rows ``(a_j + b_j'z_i) - (a_i + b_i'z_i) >= 0`` for every ``i != j``.

    Each row touches two pieces, so the matrix is stored sparse.
    """
    k, d = grid.size, grid.dims
    width = d + 1
    first, second = np.nonzero(~np.eye(k, dtype=bool))
    n_pairs = first.size
    lifted = np.hstack([np.ones((k, 1)), grid.coords])
    sign = 1.0 if concave else -1.0
    offsets = np.arange(width)[None, :]
    row = np.repeat(np.arange(n_pairs), width)
    rows = [row, row]
    cols = [
        (second[:, None] * width + offsets).ravel(),
        (first[:, None] * width + offsets).ravel(),
    ]
    data = [sign * lifted[first].ravel(), -sign * lifted[first].ravel()]
    n_rows = n_pairs
    if increasing:
        slope_cols = np.arange(k)[:, None] * width + 1 + np.arange(d)[None, :]
        rows.append(n_pairs + np.arange(k * d))
        cols.append(slope_cols.ravel())
        data.append(np.ones(k * d))
        n_rows += k * d
    C = scipy.sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_rows, k * width),
    )
    return C.tocsr()


@lru_cache(maxsize=64)
def build_plan(cone: ConeSpec, grid: Grid) -> ProjectionPlan:
    """Build (and cache) the projection plan of ``cone`` on ``grid``.

    :raises: IncompatibleCone, UnsupportedIntersection
    """
    cone.check_grid(grid)
    if cone.kind is PlanKind.LINEAR_CONSTRAINTS:
        A = _frozen(np.asarray(cone.rows(grid), dtype=np.float64))
        weights = grid.weights / grid.weights.mean()
        P = _frozen(np.diag(2.0 * weights))
        return ProjectionPlan(cone.kind, grid, A=A, P=P)
    if isinstance(cone, ConcaveMultivariate):
        S = _frozen(_affine_selector(grid))
        C = _affine_constraints(grid, cone.concave, cone.increasing)
        weights = grid.weights / grid.weights.mean()
        P = _frozen(2.0 * S.T @ (weights[:, None] * S))
        return ProjectionPlan(cone.kind, grid, S=S, C=C, P=P, concave=cone.concave)
    return ProjectionPlan(cone.kind, grid)


def _check_values(cone: ConeSpec, f: FunctionGrid) -> None:
    if isinstance(cone, Slutsky):
        if f.dq != cone.dq:
            raise IncompatibleCone(f"{cone.label} needs {cone.dq}x{cone.dq} values.")
    elif f.is_matrix:
        raise IncompatibleCone(f"{cone.label} needs scalar values.")


def project_nsd(values: FloatArray, symmetric: bool = True) -> FloatArray:
    """Pointwise projection of ``(k, d, d)`` matrices onto the NSD cone.

    The symmetric part ``U S U'`` is replaced by ``U min(S, 0) U'``; without
    symmetry enforcement the antisymmetric part is kept.
    """
    sym = 0.5 * (values + np.swapaxes(values, 1, 2))
    eigenvalues, U = np.linalg.eigh(sym)
    clipped = (U * np.minimum(eigenvalues, 0.0)[:, None, :]) @ np.swapaxes(U, 1, 2)
    clipped = 0.5 * (clipped + np.swapaxes(clipped, 1, 2))
    if symmetric:
        return clipped
    return values - sym + clipped


@dataclass(frozen=True, eq=False)
class AffinePieces:
    """``z -> min_j a_j + z'b_j`` (concave) or ``max_j`` (convex)."""

    intercepts: FloatArray
    slopes: FloatArray
    concave: bool = True

    def __call__(self, points: FloatArray) -> FloatArray:
        return evaluate_affine(self, points)


def evaluate_affine(pieces: AffinePieces, points: FloatArray) -> FloatArray:
    """Evaluate the affine representation at ``(n, d)`` points."""
    planes = pieces.intercepts[None, :] + np.atleast_2d(points) @ pieces.slopes.T
    return planes.min(axis=1) if pieces.concave else planes.max(axis=1)


def _solve(plan: ProjectionPlan, f: FunctionGrid, solver: QPSolver) -> FloatArray:
    assert plan.P is not None and plan.G is not None
    target = plan.relative_weights * f.values
    if plan.S is not None:
        target = plan.S.T @ target
    solution = solver.solve(QPProblem(plan.P, -2.0 * target, plan.G))
    if solution.status is not QPStatus.SOLVED:
        raise SolverFailure(
            f"Projection QP stopped with status {solution.status.value} "
            f"after {solution.iterations} iterations."
        )
    return solution.x


def affine_representation(
    cone: ConcaveMultivariate, f: FunctionGrid, solver: Optional[QPSolver] = None
) -> AffinePieces:
    """Fit the affine pieces whose envelope is the projection of ``f``.

    :raises: SolverFailure
    """
    _check_values(cone, f)
    plan = build_plan(cone, f.grid)
    x = _solve(plan, f, solver or QPSolver()).reshape(f.grid.size, f.grid.dims + 1)
    return AffinePieces(x[:, 0].copy(), x[:, 1:].copy(), plan.concave)


def _single_direction(cone: ConeSpec) -> Optional[int]:
    if isinstance(cone, Monotone) and len(cone.constrained_dims) == 1:
        return cone.constrained_dims[0]
    return None


def _project_lines(cone: Monotone, dim: int, f: FunctionGrid) -> FloatArray:
    grid = f.grid
    values = np.moveaxis(f.values.reshape(grid.counts), dim, -1)
    weights = np.moveaxis(grid.weights.reshape(grid.counts), dim, -1)
    shape = values.shape
    fitted = isotonic_lines(
        values.reshape(-1, shape[-1]),
        weights.reshape(-1, shape[-1]),
        cone.directions[dim] is Direction.INCREASING,
    )
    return np.moveaxis(fitted.reshape(shape), -1, dim).reshape(-1)


def project(
    cone: ConeSpec,
    f: FunctionGrid,
    solver: Optional[QPSolver] = None,
    use_pava: bool = True,
) -> FunctionGrid:
    """Weighted L2 projection of ``f`` onto the discretized cone.

    Monotone cones constrained along a single dimension are projected line by
    line with PAVA unless ``use_pava`` is off; other linear cones and the
    multivariate concave/convex cones go through the QP solver, nonnegativity
    and Slutsky cones use their closed forms.

    :param cone: The cone.
    :param f: Function values on a grid.
    :param solver: (optional) QP solver handle; a fresh one is made if omitted.
    :param use_pava: (optional) Allow the PAVA fast path.
    :return: The projection, on the same grid.
    :rtype: `FunctionGrid`
    :raises: IncompatibleCone, SolverFailure
    """
    _check_values(cone, f)
    plan = build_plan(cone, f.grid)
    if plan.kind is PlanKind.CLOSED_FORM_NONNEG:
        return f.like(np.maximum(f.values, 0.0))
    if plan.kind is PlanKind.CLOSED_FORM_SLUTSKY:
        assert isinstance(cone, Slutsky)
        return f.like(project_nsd(f.values, cone.symmetric))
    if plan.kind is PlanKind.KUOSMANEN_QP:
        assert isinstance(cone, ConcaveMultivariate)
        pieces = affine_representation(cone, f, solver)
        return f.like(pieces(f.grid.coords))

    dim = _single_direction(cone)
    if use_pava and dim is not None:
        assert isinstance(cone, Monotone)
        return f.like(_project_lines(cone, dim, f))
    assert plan.A is not None
    if plan.A.shape[0] == 0:
        return f
    return f.like(_solve(plan, f, solver or QPSolver()))


def distance(
    cone: ConeSpec, f: FunctionGrid, solver: Optional[QPSolver] = None
) -> float:
    """``||f - Pi f||`` in the grid's quadrature norm."""
    return l2_norm(f - project(cone, f, solver))

