# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""Monte Carlo designs and the study harness.

Replication ``r`` of a study seeds ``numpy.random.SeedSequence(base_seed + r)``
and spawns two children: one generates the data, the other seeds the
bootstrap weights. Results are therefore independent of execution order.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, ClassVar, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import norm
from typing_extensions import Self

from .cones import ConcaveMultivariate, ConeSpec, Monotone, Slutsky
from .exception import ShapeTestError, UsageError
from .grid import FloatArray, Grid, make_grid
from .sieve import BasisSpec, Dataset
from .testing import TestConfig, TestReport, run_slutsky_test, run_test

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Design:
    """A data generating process with its evaluation grid and hypothesis."""

    NULLS: ClassVar[Dict[str, Tuple[float, float, float]]] = {}
    name: ClassVar[str] = "design"

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    n: int = 500

    def __post_init__(self) -> None:
        if self.n < 1:
            raise UsageError(f"A design needs n >= 1, got {self.n}.")
        if not all(math.isfinite(v) for v in (self.a, self.b, self.c)):
            raise UsageError("Design parameters must be finite.")

    @classmethod
    def null(cls, label: str, n: int = 500) -> Self:
        """One of the named null designs ``D1``, ``D2`` or ``D3``."""
        try:
            a, b, c = cls.NULLS[label.upper()]
        except KeyError:
            raise UsageError(f"{cls.name} has no design {label!r}.") from None
        return cls(a, b, c, n)

    @property
    def label(self) -> str:
        return f"{self.name}(a={self.a:g},b={self.b:g},c={self.c:g})"

    def generate(self, rng: np.random.Generator) -> Dataset:
        raise NotImplementedError

    def default_grid(self) -> Grid:
        raise NotImplementedError

    def default_cone(self) -> ConeSpec:
        raise NotImplementedError

    def run(
        self, dataset: Dataset, basis_spec: BasisSpec, config: TestConfig
    ) -> TestReport:
        return run_test(dataset, basis_spec.build(dataset.Z), config)


@dataclass(frozen=True)
class MC1(Design):
    """``theta(z) = a z - b phi(c z)`` with ``Z = -1 + 2 Phi(Z*)``.

    Usage::

      MC1.null("D3").theta(np.zeros(1))  # -2 phi(0)
      MC1.alternative(10.0)

    """

    NULLS = {"D1": (0.0, 0.0, 0.0), "D2": (0.1, 0.5, 0.5), "D3": (0.5, 2.0, 1.0)}
    name = "mc1"

    @classmethod
    def alternative(cls, delta: float, n: int = 500) -> "MC1":
        return cls(0.0, 0.2 * delta, 5.0 + 0.1 * delta, n)

    def theta(self, z: FloatArray) -> FloatArray:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        return self.a * z - self.b * norm.pdf(self.c * z)

    def generate(self, rng: np.random.Generator) -> Dataset:
        draws = rng.standard_normal((self.n, 2))
        Z = -1.0 + 2.0 * norm.cdf(draws[:, 0])
        return Dataset(self.theta(Z) + draws[:, 1], Z)

    def default_grid(self) -> Grid:
        return make_grid([(-0.9, 0.9)], [37])

    def default_cone(self) -> ConeSpec:
        return Monotone.increasing(1)


@dataclass(frozen=True)
class MC2(Design):
    """``theta(z) = a M_b(z1, z2) + c log(1 + s (z1 + z2))`` on ``[0, 1]^2``.

    ``M_b`` is the power mean of order ``b`` (the geometric mean when
    ``b = 0``). With ``log_scale`` the log term uses ``s = 5``, the hypothesis
    is concavity and the grid is coarser; otherwise ``s = 1`` and the
    hypothesis is monotonicity.
    """

    NULLS = {"D1": (0.0, 0.0, 0.0), "D2": (0.2, 1.0, 0.0), "D3": (0.5, 0.0, 0.5)}
    name = "mc2"

    log_scale: bool = False

    @classmethod
    def null(cls, label: str, n: int = 500, log_scale: bool = False) -> Self:
        design = super().null(label, n)
        return cls(design.a, design.b, design.c, n, log_scale)

    @classmethod
    def alternative(cls, delta: float, n: int = 500, log_scale: bool = False) -> "MC2":
        step = 0.2 if log_scale else 0.05
        return cls(-step * delta, 0.0, -step * delta, n, log_scale)

    @property
    def label(self) -> str:
        return super().label + ("[log5]" if self.log_scale else "")

    def theta(self, z: FloatArray) -> FloatArray:
        z = np.asarray(z, dtype=np.float64).reshape(-1, 2)
        z1, z2 = z[:, 0], z[:, 1]
        if self.b == 0.0:
            mean = np.sqrt(z1 * z2)
        else:
            mean = (0.5 * z1**self.b + 0.5 * z2**self.b) ** (1.0 / self.b)
        scale = 5.0 if self.log_scale else 1.0
        return self.a * mean + self.c * np.log1p(scale * (z1 + z2))

    def generate(self, rng: np.random.Generator) -> Dataset:
        draws = rng.standard_normal((self.n, 3))
        Z = norm.cdf(draws[:, :2])
        return Dataset(self.theta(Z) + draws[:, 2], Z)

    def default_grid(self) -> Grid:
        count = 9 if self.log_scale else 17
        return make_grid([(0.1, 0.9), (0.1, 0.9)], [count, count])

    def default_cone(self) -> ConeSpec:
        if self.log_scale:
            return ConcaveMultivariate()
        return Monotone.increasing(2)


@dataclass(frozen=True)
class SlutskyDesign(Design):
    """Two-good demand ``Q = g(P, Y) + Gamma' Z + U`` with ``Gamma = (1, 1)'``.

    Under the null
    ``g_j = a p_j^(1/(b-1)) y / (p_1^(b/(b-1)) + p_2^(b/(b-1))) + c``;
    setting ``delta`` switches to the alternative
    ``g = (exp((p_1 - 1.5) delta / 10), exp(-(p_2 - 1.5) delta / 10))``.
    Prices are ``1 + Phi(P*)``, income and the demographic ``Phi`` of
    standard normals, and the errors independent standard normals.
    """

    NULLS = {"D1": (0.0, 0.5, 0.5), "D2": (0.5, 0.0, 0.0), "D3": (1.0, 0.5, 0.0)}
    name = "slutsky"
    form: ClassVar[str] = "levels"

    delta: Optional[float] = None
    full_grid: bool = False

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.delta is None and self.b == 1.0:
            raise UsageError("The demand design needs b != 1.")

    @classmethod
    def null(
        cls, label: str, n: int = 1000, full_grid: bool = False
    ) -> Self:
        design = super().null(label, n)
        return cls(design.a, design.b, design.c, n, full_grid=full_grid)

    @classmethod
    def alternative(
        cls, delta: float, n: int = 1000, full_grid: bool = False
    ) -> "SlutskyDesign":
        return cls(n=n, delta=delta, full_grid=full_grid)

    @property
    def label(self) -> str:
        if self.delta is not None:
            return f"{self.name}(delta={self.delta:g})"
        return super().label

    def demand(self, points: FloatArray) -> FloatArray:
        """``g(p_1, p_2, y)`` as an ``(m, 2)`` array."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        p, y = points[:, :2], points[:, 2]
        if self.delta is not None:
            shift = 0.1 * self.delta * (p - 1.5)
            return np.exp(np.stack([shift[:, 0], -shift[:, 1]], axis=1))
        power = self.b / (self.b - 1.0)
        denominator = (p**power).sum(axis=1)
        share = p ** (1.0 / (self.b - 1.0)) * (y / denominator)[:, None]
        return self.a * share + self.c

    def generate(self, rng: np.random.Generator) -> Dataset:
        draws = rng.standard_normal((self.n, 6))
        prices = 1.0 + norm.cdf(draws[:, :2])
        income = norm.cdf(draws[:, 2])
        demographic = norm.cdf(draws[:, 3])
        Z = np.column_stack([prices, income])
        Q = self.demand(Z) + demographic[:, None] + draws[:, 4:6]
        return Dataset(Q, Z, demographic[:, None])

    def default_grid(self) -> Grid:
        count = 17 if self.full_grid else 9
        return make_grid([(1.1, 1.9), (1.1, 1.9), (0.1, 0.9)], [count] * 3)

    def default_cone(self) -> ConeSpec:
        return Slutsky(dq=2)

    def run(
        self, dataset: Dataset, basis_spec: BasisSpec, config: TestConfig
    ) -> TestReport:
        basis = basis_spec.build(dataset.Z)
        return run_slutsky_test(dataset, basis, config, self.form)


@dataclass(frozen=True)
class StudyResult:
    """Aggregate of a Monte Carlo study.

    ``rejection_rate`` and the means are over the replications that
    completed; ``failures`` counts those that raised.
    """

    design: str
    n: int
    k_n: int
    gamma: float
    reps: int
    rejections: int
    failures: int
    mean_statistic: float
    mean_critical_value: float
    wall_time: float
    seed: int

    @property
    def completed(self) -> int:
        return self.reps - self.failures

    @property
    def rejection_rate(self) -> float:
        return self.rejections / self.completed if self.completed else float("nan")

    @property
    def mc_std_error(self) -> float:
        """Binomial standard error of ``rejection_rate``."""
        p = self.rejection_rate
        return math.sqrt(p * (1.0 - p) / self.completed) if self.completed else math.nan

    def to_row(self) -> Dict[str, Any]:
        return {
            "design": self.design,
            "n": self.n,
            "k_n": self.k_n,
            "gamma": self.gamma,
            "rejection_rate": self.rejection_rate,
            "reps": self.reps,
            "seed": self.seed,
        }


Outcome = Optional[Tuple[bool, float, float, int]]


def replication_seeds(base_seed: int, r: int) -> Tuple[np.random.Generator, int]:
    """Data generator and bootstrap seed of replication ``r``."""
    data, bootstrap = np.random.SeedSequence(base_seed + r).spawn(2)
    return np.random.default_rng(data), int(bootstrap.generate_state(1)[0])


def _replicate(
    design: Design, basis_spec: BasisSpec, config: TestConfig, base_seed: int, r: int
) -> Outcome:
    rng, seed = replication_seeds(base_seed, r)
    try:
        dataset = design.generate(rng)
        report = design.run(dataset, basis_spec, replace(config, seed=seed))
    except (ShapeTestError, np.linalg.LinAlgError) as e:
        logger.warning("Replication %d of %s failed: %s", r, design.label, e)
        return None
    return report.reject, report.statistic, report.critical_value, report.k_n


def run_study(
    design: Design,
    basis_spec: BasisSpec,
    config: Optional[TestConfig],
    R: int,
    base_seed: int,
    workers: int = 1,
) -> StudyResult:
    """Run ``R`` replications of the test on fresh data from ``design``.

    :param config: Test settings; ``None`` uses the design's grid and cone
        with default settings. The seed of the config is replaced per
        replication.
    :param workers: (optional) Processes to spread the replications over.
    :raises: UsageError
    """
    if R < 1:
        raise UsageError(f"A study needs R >= 1 replications, got {R}.")
    if config is None:
        config = TestConfig(design.default_cone(), design.default_grid())
    start = time.perf_counter()
    args = [(design, basis_spec, config, base_seed, r) for r in range(R)]
    outcomes: List[Outcome]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(_replicate, *zip(*args)))
    else:
        outcomes = [_replicate(*a) for a in args]
    done = [o for o in outcomes if o is not None]
    result = StudyResult(
        design=design.label,
        n=design.n,
        k_n=done[0][3] if done else 0,
        gamma=config.gamma_for(design.n),
        reps=R,
        rejections=sum(1 for o in done if o[0]),
        failures=R - len(done),
        mean_statistic=float(np.mean([o[1] for o in done])) if done else math.nan,
        mean_critical_value=float(np.mean([o[2] for o in done])) if done else math.nan,
        wall_time=time.perf_counter() - start,
        seed=base_seed,
    )
    logger.info(
        "%s: rejection rate %.4f over %d replications (%d failed)",
        result.design,
        result.rejection_rate,
        result.completed,
        result.failures,
    )
    return result
