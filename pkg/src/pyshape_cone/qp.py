# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""ADMM solver for ``min 1/2 x'Px + q'x  s.t.  Gx >= 0``.

The iteration follows the operator splitting used by OSQP: the constraint
``Gx = z`` with ``z >= 0`` is relaxed, the ``x`` step solves one linear system
with the matrix ``P + sigma I + rho G'G`` and the ``z`` step is a clipping.
Problems are equilibrated once (Ruiz) before iterating. ``P`` and the linear
system are dense; ``G`` is kept sparse for the matrix-vector products. The
origin is feasible for every problem of this form, so no infeasibility
detection is carried out.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
import scipy.linalg
import scipy.sparse

from .exception import DimensionMismatch
from .grid import FloatArray

logger = logging.getLogger(__name__)

SCALING_MIN = 1e-4
SCALING_MAX = 1e4
RHO_MIN = 1e-6
RHO_MAX = 1e6
RANK_RCOND = 1e-10

BoolArray = npt.NDArray[np.bool_]
IntArray = npt.NDArray[np.intp]
# dense array or scipy.sparse.csr_matrix
Matrix = Union[FloatArray, Any]


class QPStatus(Enum):
    SOLVED = "solved"
    MAX_ITERATIONS = "max_iterations"
    NUMERICAL_FAILURE = "numerical_failure"


def _rows(G: Matrix, rows: IntArray) -> FloatArray:
    if scipy.sparse.issparse(G):
        dense: FloatArray = G[rows].toarray()
        return dense
    return np.asarray(G[rows])


def _abs_max(G: Any, axis: int, size: int) -> FloatArray:
    """Columnwise (``axis=0``) or rowwise absolute maxima of a sparse matrix."""
    coo = G.tocoo()
    out = np.zeros(size)
    np.maximum.at(out, coo.col if axis == 0 else coo.row, np.abs(coo.data))
    return out


@dataclass(frozen=True, eq=False)
class QPProblem:
    """``min 1/2 x'Px + q'x  s.t.  Gx >= 0`` with ``P`` symmetric PSD.

    :param P: ``(k, k)`` symmetric positive semidefinite matrix.
    :param q: Linear cost, length ``k``.
    :param G: (optional) ``(m, k)`` constraint matrix, dense or
        ``scipy.sparse``; ``m`` may be zero.
    """

    P: FloatArray
    q: FloatArray
    G: Matrix = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self) -> None:
        P = np.asarray(self.P, dtype=np.float64)
        q = np.asarray(self.q, dtype=np.float64).reshape(-1)
        k = q.size
        G = self.G
        if scipy.sparse.issparse(G):
            if not (isinstance(G, scipy.sparse.csr_matrix) and G.dtype == np.float64):
                G = scipy.sparse.csr_matrix(G, dtype=np.float64)
        else:
            G = np.asarray(G, dtype=np.float64)
            if G.size == 0:
                G = np.zeros((0, k))
        if P.shape != (k, k) or G.ndim != 2 or G.shape[1] != k:
            raise DimensionMismatch(
                f"QP dimensions disagree: P {P.shape}, q {q.shape}, G {G.shape}."
            )
        if not np.allclose(P, P.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(P).max())):
            raise DimensionMismatch("QP matrix P must be symmetric.")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "G", G)

    @property
    def n(self) -> int:
        return int(self.q.size)

    @property
    def m(self) -> int:
        return int(self.G.shape[0])

    def objective(self, x: FloatArray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass(frozen=True)
class QPSettings:
    """Solver settings.

    :param rho: Initial ADMM penalty.
    :param sigma: Proximal regularization of the ``x`` step.
    :param alpha: Over-relaxation factor.
    :param eps_abs: Absolute residual tolerance.
    :param eps_rel: Relative residual tolerance.
    :param max_iter: Iteration cap.
    :param scaling_iter: Ruiz equilibration passes.
    :param check_every: Residuals are evaluated every ``check_every`` iterations.
    :param adaptive_rho: Rebalance ``rho`` from the residual ratio at every
        check. Off, the penalty stays at ``rho`` throughout.
    :param adaptive_rho_tolerance: Refactor only when the new penalty differs
        from the current one by more than this factor.
    :param polish: Refine solutions on their active set.
    :param polish_after: Also try to polish iterates once both residuals fall
        below this tolerance, stopping early when the polish is accepted.
        Further attempts wait for the residuals to drop tenfold.
    :param polish_rounds: Active-set corrections per polish.
    """

    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    max_iter: int = 20000
    scaling_iter: int = 1
    check_every: int = 25
    adaptive_rho: bool = True
    adaptive_rho_tolerance: float = 5.0
    polish: bool = True
    polish_after: float = 1e-3
    polish_rounds: int = 10


@dataclass(frozen=True, eq=False)
class QPSolution:
    """Primal point, constraint multipliers and solver diagnostics.

    ``y`` holds the multipliers ``mu >= 0`` of ``Gx >= 0`` so that
    ``Px + q - G'mu = 0`` at optimality.
    """

    x: FloatArray
    y: FloatArray
    iterations: int
    primal_residual: float
    dual_residual: float
    status: QPStatus
    polished: bool = False


class _Workspace:
    """Scaled problem data and the factorized ``x`` step matrices."""

    def __init__(self, problem: QPProblem, settings: QPSettings):
        self.P = problem.P
        self.G = problem.G
        self.sigma = settings.sigma
        P = problem.P.copy()
        G = scipy.sparse.csr_matrix(problem.G, dtype=np.float64, copy=True)
        d = np.ones(problem.n)
        e = np.ones(problem.m)
        for _ in range(settings.scaling_iter):
            col = np.abs(P).max(axis=0)
            if problem.m:
                col = np.maximum(col, _abs_max(G, 0, problem.n))
            d_step = _inverse_sqrt(col)
            e_step = _inverse_sqrt(_abs_max(G, 1, problem.m)) if problem.m else e
            P = d_step[:, None] * P * d_step[None, :]
            G = (scipy.sparse.diags(e_step) @ G @ scipy.sparse.diags(d_step)).tocsr()
            d *= d_step
            e *= e_step
        cost = float(np.mean(np.abs(P).max(axis=0))) if problem.n else 1.0
        self.c = 1.0 / min(max(cost, SCALING_MIN), SCALING_MAX)
        self.Ps = self.c * P
        self.Gs = G
        self.GtG = np.asarray((G.T @ G).toarray())
        self.D = d
        self.E = e
        self._factors: Dict[float, Any] = {}

    def factor(self, rho: float) -> Any:
        """Cholesky factor of ``P + sigma I + rho G'G``, cached per ``rho``."""
        if rho not in self._factors:
            if len(self._factors) >= 8:
                self._factors.clear()
            kkt = self.Ps + self.sigma * np.eye(self.Ps.shape[0]) + rho * self.GtG
            self._factors[rho] = scipy.linalg.cho_factor(kkt)
        return self._factors[rho]

    def matches(self, problem: QPProblem) -> bool:
        return problem.P is self.P and problem.G is self.G


def _inverse_sqrt(norms: FloatArray) -> FloatArray:
    norms = np.where(norms < SCALING_MIN, 1.0, norms)
    return np.clip(1.0 / np.sqrt(norms), SCALING_MIN, SCALING_MAX)


def _inf_norm(*vectors: FloatArray) -> float:
    return max(float(np.abs(v).max(initial=0.0)) for v in vectors)


class QPSolver:
    """ADMM solver instance.

    An instance keeps the equilibration and the factorizations of the last
    ``(P, G)`` pair it saw, so repeated solves that only change ``q`` reuse
    them. Instances are not thread-safe; use one per thread.

    :param settings: (optional) Solver settings. Defaults to `QPSettings()`.

    Usage::

      import numpy as np
      from pyshape_cone.qp import QPProblem, QPSolver

      problem = QPProblem(2 * np.eye(3), -2 * np.array([3.0, 1.0, 2.0]), A)
      QPSolver().solve(problem).x

    """

    def __init__(self, settings: Optional[QPSettings] = None):
        self.settings = settings or QPSettings()
        self._workspace: Optional[_Workspace] = None

    def _setup(self, problem: QPProblem) -> _Workspace:
        if self._workspace is None or not self._workspace.matches(problem):
            self._workspace = _Workspace(problem, self.settings)
        return self._workspace

    def solve(self, problem: QPProblem) -> QPSolution:
        """Solve a problem, polishing the result when enabled.

        :return: The solution; ``status`` tells whether it converged.
        :rtype: `QPSolution`
        """
        if problem.m == 0:
            solution = self._solve_unconstrained(problem)
        else:
            solution = self._iterate(problem)
        logger.debug(
            "QP %dx%d: %s after %d iterations (res %.2e/%.2e, polished=%s)",
            problem.m,
            problem.n,
            solution.status.value,
            solution.iterations,
            solution.primal_residual,
            solution.dual_residual,
            solution.polished,
        )
        if (
            self.settings.polish
            and not solution.polished
            and solution.status is not QPStatus.NUMERICAL_FAILURE
        ):
            solution = self.polish(problem, solution)
        return solution

    def _solve_unconstrained(self, problem: QPProblem) -> QPSolution:
        x = scipy.linalg.lstsq(problem.P, -problem.q)[0]
        dual = float(np.abs(problem.P @ x + problem.q).max(initial=0.0))
        return QPSolution(x, np.zeros(0), 0, 0.0, dual, QPStatus.SOLVED)

    def _iterate(self, problem: QPProblem) -> QPSolution:
        s = self.settings
        ws = self._setup(problem)
        qs = ws.c * ws.D * problem.q
        x = np.zeros(problem.n)
        z = np.zeros(problem.m)
        y = np.zeros(problem.m)
        rho = s.rho
        factor = ws.factor(rho)
        status = QPStatus.MAX_ITERATIONS
        residuals = (np.inf, np.inf)
        next_polish = s.polish_after
        iteration = 0
        for iteration in range(1, s.max_iter + 1):
            rhs = s.sigma * x - qs + ws.Gs.T @ (rho * z - y)
            x_tilde = scipy.linalg.cho_solve(factor, rhs)
            z_tilde = ws.Gs @ x_tilde
            x = s.alpha * x_tilde + (1.0 - s.alpha) * x
            z_relaxed = s.alpha * z_tilde + (1.0 - s.alpha) * z
            z_next = np.maximum(z_relaxed + y / rho, 0.0)
            y = y + rho * (z_relaxed - z_next)
            z = z_next

            if iteration % s.check_every and iteration != s.max_iter:
                continue
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
                status = QPStatus.NUMERICAL_FAILURE
                break
            converged, residuals = self._converged(ws, qs, x, z, y)
            if converged:
                status = QPStatus.SOLVED
                break
            if s.polish and max(residuals) <= next_polish:
                next_polish = 0.1 * max(residuals)
                candidate = QPSolution(
                    ws.D * x, -ws.E * y / ws.c, iteration, *residuals, status
                )
                polished = self.polish(problem, candidate)
                if polished.polished:
                    return polished
            if s.adaptive_rho:
                estimate = self._rho_estimate(ws, qs, x, z, y, rho)
                tolerance = s.adaptive_rho_tolerance
                if estimate > tolerance * rho or estimate * tolerance < rho:
                    rho = estimate
                    factor = ws.factor(rho)

        x_out = ws.D * x
        mu = -ws.E * y / ws.c
        return QPSolution(x_out, mu, iteration, residuals[0], residuals[1], status)

    def _converged(
        self,
        ws: _Workspace,
        qs: FloatArray,
        x: FloatArray,
        z: FloatArray,
        y: FloatArray,
    ) -> Tuple[bool, Tuple[float, float]]:
        s = self.settings
        Gx = ws.Gs @ x / ws.E
        z_unscaled = z / ws.E
        primal = float(np.abs(Gx - z_unscaled).max())
        Px = ws.Ps @ x / (ws.c * ws.D)
        Gy = ws.Gs.T @ y / (ws.c * ws.D)
        q = qs / (ws.c * ws.D)
        dual = float(np.abs(Px + q + Gy).max())
        eps_primal = s.eps_abs + s.eps_rel * _inf_norm(Gx, z_unscaled)
        eps_dual = s.eps_abs + s.eps_rel * _inf_norm(Px, Gy, q)
        return primal <= eps_primal and dual <= eps_dual, (primal, dual)

    @staticmethod
    def _rho_estimate(
        ws: _Workspace,
        qs: FloatArray,
        x: FloatArray,
        z: FloatArray,
        y: FloatArray,
        rho: float,
    ) -> float:
        """``rho * sqrt(primal / dual)`` on normalized scaled residuals."""
        Gx = ws.Gs @ x
        Px = ws.Ps @ x
        Gy = ws.Gs.T @ y
        primal = _inf_norm(Gx - z) / max(_inf_norm(Gx, z), 1e-30)
        dual = _inf_norm(Px + qs + Gy) / max(_inf_norm(Px, Gy, qs), 1e-30)
        if primal <= 0.0 or dual <= 0.0:
            return rho
        return float(np.clip(rho * np.sqrt(primal / dual), RHO_MIN, RHO_MAX))

    def _active_set(self, problem: QPProblem, solution: QPSolution) -> BoolArray:
        s = self.settings
        slack = problem.G @ solution.x
        threshold = 10.0 * (
            s.eps_abs
            + s.eps_rel * max(1.0, float(np.abs(slack).max()))
            + solution.primal_residual
        )
        active: BoolArray = (slack <= threshold) | (solution.y > slack)
        return active

    @staticmethod
    def _kkt(problem: QPProblem, rows: IntArray) -> Tuple[FloatArray, FloatArray]:
        """Minimize over ``G_a x = 0`` in the null space of ``G_a``.

        Returns the minimizer and the least-norm multipliers of the rows.
        """
        if rows.size == 0:
            x = scipy.linalg.lstsq(problem.P, -problem.q)[0]
            return x, np.zeros(0)
        G_active = _rows(problem.G, rows)
        n_active = G_active.shape[0]
        U, sv, Vt = scipy.linalg.svd(
            G_active, full_matrices=n_active < problem.n, lapack_driver="gesvd"
        )
        rank = int(np.sum(sv > RANK_RCOND * sv.max())) if sv.max() > 0 else 0
        N = Vt[rank:].T
        if N.shape[1]:
            H = N.T @ problem.P @ N
            x = N @ scipy.linalg.lstsq(H, -N.T @ problem.q)[0]
        else:
            x = np.zeros(problem.n)
        gradient = problem.P @ x + problem.q
        mu = U[:, :rank] @ ((Vt[:rank] @ gradient) / sv[:rank])
        return x, mu

    def polish(self, problem: QPProblem, solution: QPSolution) -> QPSolution:
        """Refine an iterate on its active set.

        Constraints whose slack is below ``10 * (eps + primal residual)`` (or
        below their multiplier) start as equalities, and the
        equality-constrained problem is solved directly. Rows whose
        multipliers come out negative are released and violated rows are
        added, for at most ``polish_rounds`` rounds. The refined point
        replaces the input only if it is feasible, stationary and has
        nonnegative multipliers (and, for a converged input, its objective is
        no worse); otherwise the input is returned unchanged. An accepted
        polish of an unconverged iterate marks the solution as solved.
        """
        if problem.m == 0 or solution.status is QPStatus.NUMERICAL_FAILURE:
            return solution
        s = self.settings
        active = self._active_set(problem, solution)
        if not np.any(active):
            return solution

        rows = np.flatnonzero(active)
        for _ in range(max(1, s.polish_rounds)):
            rows = np.flatnonzero(active)
            x, mu_active = self._kkt(problem, rows)
            slack = problem.G @ x
            scale = max(1.0, float(np.abs(x).max(initial=0.0)))
            mu_scale = 1.0 + float(np.abs(mu_active).max(initial=0.0))
            violated = slack < -1e-10 * scale
            negative = np.zeros(problem.m, dtype=bool)
            negative[rows] = mu_active < -1e-6 * mu_scale
            if not (violated.any() or negative.any()):
                break
            active = (active & ~negative) | violated
        else:
            logger.debug("QP polish found no consistent active set")
            return solution

        mu = np.zeros(problem.m)
        mu[rows] = np.maximum(mu_active, 0.0)
        gradient = problem.P @ x + problem.q - problem.G.T @ mu
        size = (
            1.0
            + float(np.abs(problem.P).max()) * scale
            + float(np.abs(problem.q).max(initial=0.0))
            + float(np.abs(_rows(problem.G, rows)).max(initial=0.0)) * mu_scale
        )
        stationary = float(np.abs(gradient).max()) <= 1e-8 * size
        objective_in = problem.objective(solution.x)
        objective_tol = 10.0 * (s.eps_abs + s.eps_rel * abs(objective_in)) * mu_scale
        improves = solution.status is not QPStatus.SOLVED or (
            problem.objective(x) <= objective_in + objective_tol
        )
        if not (stationary and improves):
            logger.debug(
                "QP polish rejected (stationary=%s, improves=%s)", stationary, improves
            )
            return solution

        primal = max(0.0, -float(slack.min()))
        dual = float(np.abs(gradient).max())
        return QPSolution(
            x, mu, solution.iterations, primal, dual, QPStatus.SOLVED, True
        )


def solve(problem: QPProblem, settings: Optional[QPSettings] = None) -> QPSolution:
    """Solve ``problem`` with a fresh `QPSolver`."""
    return QPSolver(settings).solve(problem)


def polish(
    problem: QPProblem, solution: QPSolution, settings: Optional[QPSettings] = None
) -> QPSolution:
    """Polish ``solution`` of ``problem``; see `QPSolver.polish`."""
    return QPSolver(settings).polish(problem, solution)
