# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""The projection test: statistic, bootstrap critical value and decision.

Empirical quantiles everywhere are the ``ceil(m * q)``-th order statistic of
``m`` numbers. With a fixed ``kappa_override`` the statistic and every
bootstrap value scale with the responses; the data-driven kappa does not,
since it is itself inversely proportional to that scale.
"""

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from .cones import ConeSpec, project
from .exception import DegenerateTau, TooSmall, UsageError
from .grid import FloatArray, FunctionGrid, Grid, l2_norm
from .qp import QPSettings, QPSolver
from .sieve import (
    BootstrapConfig,
    Dataset,
    SieveBasis,
    bootstrap_draws,
    eval_fit,
    fit,
    slutsky_bootstrap_draws,
    slutsky_matrix,
)

logger = logging.getLogger(__name__)

QUANTILE_SLACK = 1e-12

Draws = Union[Sequence[FunctionGrid], FloatArray]


def default_gamma(n: int) -> float:
    """``0.01 / log n``."""
    return 0.01 / math.log(n)


_GAMMA_RULE = re.compile(r"^\s*(?P<c>[0-9.eE+-]+)\s*/\s*log\s*\(?\s*n\s*\)?\s*$")


def gamma_rule(rule: str, n: int) -> float:
    """Evaluate a named ``gamma_n`` choice at sample size ``n``.

    Accepts ``"1/n"``, ``"n^-1/2"``, ``"n^-3/4"``, ``"<c>/log n"`` (for
    example ``"0.01/log n"``) and plain constants such as ``"0.01"``.

    :raises: UsageError
    """
    text = rule.strip().replace(" ", "")
    if text == "1/n":
        return 1.0 / n
    if text in ("n^-1/2", "n^(-1/2)"):
        return float(n**-0.5)
    if text in ("n^-3/4", "n^(-3/4)"):
        return float(n**-0.75)
    match = _GAMMA_RULE.match(rule)
    try:
        if match:
            return float(match.group("c")) / math.log(n)
        return float(text)
    except ValueError:
        raise UsageError(f"Cannot read gamma rule {rule!r}.") from None


def order_statistic(values: npt.ArrayLike, level: float) -> float:
    """The ``ceil(m * level)``-th smallest of ``m`` values."""
    ordered = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if ordered.size == 0:
        raise TooSmall("An empirical quantile needs at least one value.")
    rank = math.ceil(ordered.size * level - QUANTILE_SLACK)
    return float(ordered[min(max(rank, 1), ordered.size) - 1])


@dataclass(frozen=True)
class TestConfig:
    """Settings of one test.

    :param cone: The shape hypothesis.
    :param grid: Grid the norms are evaluated on.
    :param alpha: (optional) Significance level.
    :param gamma_n: (optional) Quantile level of the tuning step; ``None``
        means ``0.01 / log n``.
    :param B: (optional) Bootstrap draws.
    :param kappa_override: (optional) Use this kappa instead of the
        data-driven one.
    :param seed: (optional) Seed of the bootstrap weights.
    :param weight_law: (optional) Bootstrap weight law.
    :param workers: (optional) Threads for the bootstrap projections.
    :param qp: (optional) Settings of the projection QP solver.

    ``bootstrap`` is the `BootstrapConfig` made of ``B``, ``weight_law`` and
    ``seed``.
    """

    __test__: ClassVar[bool] = False

    cone: ConeSpec
    grid: Grid
    alpha: float = 0.05
    gamma_n: Optional[float] = None
    B: int = 200
    kappa_override: Optional[float] = None
    seed: int = 0
    weight_law: str = "normal"
    workers: int = 1
    qp: QPSettings = field(default_factory=QPSettings)
    bootstrap: BootstrapConfig = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise UsageError(f"alpha must lie in (0, 1), got {self.alpha}.")
        if self.gamma_n is not None and not 0.0 < self.gamma_n < 1.0:
            raise UsageError(f"gamma_n must lie in (0, 1), got {self.gamma_n}.")
        if self.kappa_override is not None and not self.kappa_override >= 0.0:
            raise UsageError("kappa_override must be nonnegative.")
        if self.workers < 1:
            raise UsageError("workers must be at least 1.")
        bootstrap = BootstrapConfig(self.B, self.weight_law, self.seed)
        object.__setattr__(self, "bootstrap", bootstrap)

    def gamma_for(self, n: int) -> float:
        return default_gamma(n) if self.gamma_n is None else self.gamma_n


@dataclass(frozen=True, eq=False)
class TestReport:
    """Outcome of a test.

    ``reject`` holds exactly when ``statistic > critical_value``. When the
    bootstrap norms are all zero, ``flags`` contains ``"degenerate_tau"`` and
    kappa falls back to zero.
    """

    __test__: ClassVar[bool] = False

    statistic: float
    tau_hat: float
    kappa_hat: float
    critical_value: float
    p_value: float
    reject: bool
    r_n: float
    c_n: float
    k_n: int
    n: int
    seed: int
    shape: str
    alpha: float
    gamma: float
    B: int
    flags: Tuple[str, ...] = ()
    psi_values: FloatArray = field(default_factory=lambda: np.zeros(0), repr=False)

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready mapping with a stable key order."""
        return {
            "statistic": self.statistic,
            "tau_hat": self.tau_hat,
            "kappa_hat": self.kappa_hat,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "reject": self.reject,
            "r_n": self.r_n,
            "c_n": self.c_n,
            "k_n": self.k_n,
            "n": self.n,
            "seed": self.seed,
            "shape": self.shape,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "B": self.B,
            "flags": list(self.flags),
            "psi_values": [float(v) for v in self.psi_values],
        }

    def summary(self) -> str:
        verdict = "reject" if self.reject else "do not reject"
        return (
            f"{self.shape}: statistic {self.statistic:.4f}, critical value "
            f"{self.critical_value:.4f} at alpha {self.alpha:g}, "
            f"p = {self.p_value:.3f} ({verdict})"
        )


def test_statistic(
    theta_hat: FunctionGrid,
    cone: ConeSpec,
    r_n: float,
    solver: Optional[QPSolver] = None,
) -> float:
    """``r_n * ||theta_hat - Pi theta_hat||``.

    :raises: UsageError
    """
    if not r_n > 0.0:
        raise UsageError(f"r_n must be positive, got {r_n}.")
    return r_n * l2_norm(theta_hat - project(cone, theta_hat, solver))


def psi_hat(
    h: FunctionGrid,
    a: float,
    pi_theta: FunctionGrid,
    cone: ConeSpec,
    solver: Optional[QPSolver] = None,
) -> float:
    """``||h + a Pi theta - Pi(h + a Pi theta)||`` with one projection.

    :raises: GridMismatch
    """
    if not a >= 0.0:
        raise UsageError(f"psi_hat needs a >= 0, got {a}.")
    shifted = h + a * pi_theta
    return l2_norm(shifted - project(cone, shifted, solver))


def tau_hat(draw_norms: npt.ArrayLike, gamma_n: float) -> float:
    """The ``(1 - gamma_n)`` empirical quantile of the draw norms.

    :raises: DegenerateTau
    """
    if not 0.0 < gamma_n < 1.0:
        raise UsageError(f"gamma_n must lie in (0, 1), got {gamma_n}.")
    tau = order_statistic(draw_norms, 1.0 - gamma_n)
    if tau <= 0.0:
        raise DegenerateTau("The selected bootstrap norm is zero.")
    return tau


def kappa_hat(r_n: float, c_n: float, tau: float) -> float:
    """``r_n * c_n / tau``."""
    if not (r_n > 0.0 and c_n > 0.0 and tau > 0.0):
        raise UsageError("kappa_hat needs positive r_n, c_n and tau.")
    return r_n * c_n / tau


def _psi_chunk(
    draws: Sequence[FunctionGrid],
    pi_theta: FunctionGrid,
    kappa: float,
    cone: ConeSpec,
    settings: QPSettings,
) -> List[float]:
    solver = QPSolver(settings)
    return [psi_hat(h, kappa, pi_theta, cone, solver) for h in draws]


def critical_value(
    draws: Sequence[FunctionGrid],
    pi_theta: FunctionGrid,
    kappa: float,
    cone: ConeSpec,
    alpha: float,
    workers: int = 1,
    settings: Optional[QPSettings] = None,
) -> Tuple[float, FloatArray]:
    """Bootstrap critical value and the ``psi_hat`` value of every draw.

    With ``workers > 1`` the draws are split into contiguous chunks solved on
    separate threads, each with its own QP solver; values keep draw order.

    :return: ``(c_hat, psi_values)``
    """
    if not kappa >= 0.0:
        raise UsageError(f"kappa must be nonnegative, got {kappa}.")
    settings = settings or QPSettings()
    if workers <= 1 or len(draws) < 2:
        values = _psi_chunk(draws, pi_theta, kappa, cone, settings)
    else:
        bounds = np.linspace(0, len(draws), min(workers, len(draws)) + 1).astype(int)
        chunks = [draws[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=len(chunks)) as executor:
            results = executor.map(
                lambda chunk: _psi_chunk(chunk, pi_theta, kappa, cone, settings),
                chunks,
            )
            values = [v for chunk_values in results for v in chunk_values]
    psi_values = np.asarray(values, dtype=np.float64)
    return order_statistic(psi_values, 1.0 - alpha), psi_values


def _as_draws(theta_hat: FunctionGrid, draws: Draws) -> List[FunctionGrid]:
    if isinstance(draws, np.ndarray):
        return [theta_hat.like(row) for row in draws]
    return list(draws)


def test_from_estimate(
    theta_hat: FunctionGrid,
    draws: Draws,
    r_n: float,
    c_n: float,
    config: TestConfig,
    n: int,
    k_n: int = 0,
) -> TestReport:
    """Run the test on a given estimate and set of bootstrap draws.

    ``draws`` approximate the law of ``r_n (theta_hat - theta)`` on the
    estimate's grid, as `FunctionGrid` objects or as a ``(B, ...)`` array.

    :raises: GridMismatch, SolverFailure
    """
    draw_grids = _as_draws(theta_hat, draws)
    if len(draw_grids) < 2:
        raise TooSmall("The bootstrap needs at least 2 draws.")
    solver = QPSolver(config.qp)
    pi_theta = project(config.cone, theta_hat, solver)
    statistic = r_n * l2_norm(theta_hat - pi_theta)
    gamma = config.gamma_for(n)

    flags: List[str] = []
    try:
        tau = tau_hat([l2_norm(d) for d in draw_grids], gamma)
        kappa = kappa_hat(r_n, c_n, tau)
    except DegenerateTau:
        logger.warning("All bootstrap norms vanish; falling back to kappa = 0")
        flags.append("degenerate_tau")
        tau, kappa = 0.0, 0.0
    if config.kappa_override is not None:
        kappa = config.kappa_override
        flags.append("kappa_override")

    c_hat, psi_values = critical_value(
        draw_grids,
        pi_theta,
        kappa,
        config.cone,
        config.alpha,
        config.workers,
        config.qp,
    )
    report = TestReport(
        statistic=statistic,
        tau_hat=tau,
        kappa_hat=kappa,
        critical_value=c_hat,
        p_value=float(np.mean(psi_values >= statistic)),
        reject=statistic > c_hat,
        r_n=r_n,
        c_n=c_n,
        k_n=k_n,
        n=n,
        seed=config.seed,
        shape=config.cone.label,
        alpha=config.alpha,
        gamma=gamma,
        B=len(draw_grids),
        flags=tuple(flags),
        psi_values=psi_values,
    )
    logger.info(report.summary())
    return report


def run_test(dataset: Dataset, basis: SieveBasis, config: TestConfig) -> TestReport:
    """Fit the sieve, draw the score bootstrap and run the test.

    Usage::

      from pyshape_cone import Monotone, SieveBasis, TestConfig, make_grid
      from pyshape_cone.testing import run_test

      grid = make_grid([(-0.9, 0.9)], [37])
      basis = SieveBasis.from_data(Z, interior=3, order=4)
      report = run_test(dataset, basis, TestConfig(Monotone(), grid, seed=1))
      report.reject

    """
    sieve_fit = fit(dataset, basis)
    theta_hat = eval_fit(sieve_fit, config.grid)
    W = config.bootstrap.weights(dataset.n)
    draws = bootstrap_draws(sieve_fit, W, config.grid)
    return test_from_estimate(
        theta_hat,
        draws,
        sieve_fit.r_n,
        sieve_fit.c_n,
        config,
        n=dataset.n,
        k_n=sieve_fit.k_n,
    )


def run_slutsky_test(
    dataset: Dataset,
    basis: SieveBasis,
    config: TestConfig,
    form: str = "budget_share",
) -> TestReport:
    """Test the Slutsky restriction on a demand system.

    ``dataset.Y`` holds one column per good, ``dataset.Z`` the prices then
    income, and ``dataset.X`` the optional demographics entering linearly.
    """
    fits = [fit(dataset.equation(j), basis) for j in range(dataset.equations)]
    theta_hat = slutsky_matrix(fits, None, config.grid, form)
    W = config.bootstrap.weights(dataset.n)
    draws = slutsky_bootstrap_draws(fits, W, config.grid, form)
    return test_from_estimate(
        theta_hat,
        draws,
        fits[0].r_n,
        fits[0].c_n,
        config,
        n=dataset.n,
        k_n=basis.size,
    )
