# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

import math

import numpy as np
import pytest
from mock import patch

from pyshape_cone.cones import ConcaveMultivariate, Monotone, Slutsky
from pyshape_cone.exception import SolverFailure, UsageError
from pyshape_cone.grid import make_grid
from pyshape_cone.mc import MC1, MC2, SlutskyDesign, replication_seeds, run_study
from pyshape_cone.sieve import BasisSpec
from pyshape_cone.testing import TestConfig


def test_mc1_null_values() -> None:
    design = MC1.null("D3")
    assert (design.a, design.b, design.c) == (0.5, 2.0, 1.0)
    assert design.theta(np.zeros(1))[0] == pytest.approx(-0.797885, abs=1e-6)
    np.testing.assert_allclose(MC1.null("d1").theta(np.linspace(-1, 1, 5)), 0.0)


def test_mc1_alternative() -> None:
    design = MC1.alternative(10.0, n=200)
    assert (design.a, design.b, design.c) == (0.0, 2.0, 6.0)
    assert design.n == 200


def test_mc1_generate(rng: np.random.Generator) -> None:
    dataset = MC1.null("D1", n=300).generate(rng)
    assert dataset.n == 300
    assert np.all(np.abs(dataset.Z) < 1.0)
    assert abs(dataset.Y.mean()) < 0.2
    grid = MC1().default_grid()
    assert grid.size == 37
    assert MC1().default_cone() == Monotone.increasing(1)


def test_mc2_power_mean() -> None:
    z = np.array([[0.25, 0.64]])
    geometric = MC2(1.0, 0.0, 0.0)
    assert geometric.theta(z)[0] == pytest.approx(0.4)
    arithmetic = MC2(1.0, 1.0, 0.0)
    assert arithmetic.theta(z)[0] == pytest.approx(0.445)
    logged = MC2(0.0, 0.0, 1.0)
    assert logged.theta(z)[0] == pytest.approx(math.log(1.89))
    assert MC2(0.0, 0.0, 1.0, log_scale=True).theta(z)[0] == pytest.approx(
        math.log(1 + 5 * 0.89)
    )


def test_mc2_variants() -> None:
    design = MC2.null("D2")
    assert (design.a, design.b, design.c) == (0.2, 1.0, 0.0)
    assert design.default_grid().size == 17 * 17
    assert design.default_cone() == Monotone.increasing(2)
    log_design = MC2.null("D3", log_scale=True)
    assert log_design.default_grid().size == 81
    assert log_design.default_cone() == ConcaveMultivariate()
    assert log_design.label.endswith("[log5]")
    alternative = MC2.alternative(4.0)
    assert (alternative.a, alternative.b, alternative.c) == (-0.2, 0.0, -0.2)


def test_slutsky_demand() -> None:
    points = np.array([[1.5, 1.5, 0.5]])
    d2 = SlutskyDesign.null("D2")
    np.testing.assert_allclose(d2.demand(points), [[0.5 * 0.5 / 3.0] * 2])
    d1 = SlutskyDesign.null("D1")
    np.testing.assert_allclose(d1.demand(points), [[0.5, 0.5]])
    alternative = SlutskyDesign.alternative(5.0)
    np.testing.assert_allclose(alternative.demand(points), [[1.0, 1.0]])
    assert alternative.label == "slutsky(delta=5)"


def test_slutsky_generate(rng: np.random.Generator) -> None:
    design = SlutskyDesign.null("D3", n=200)
    dataset = design.generate(rng)
    assert dataset.Y.shape == (200, 2)
    assert dataset.Z.shape == (200, 3)
    assert dataset.X is not None and dataset.X.shape == (200, 1)
    assert np.all((dataset.Z[:, :2] > 1.0) & (dataset.Z[:, :2] < 2.0))
    assert design.default_grid().size == 9**3
    assert SlutskyDesign.null("D3", full_grid=True).default_grid().size == 17**3
    assert design.default_cone() == Slutsky(dq=2)


def test_design_validation() -> None:
    with pytest.raises(UsageError):
        MC1.null("D4")
    with pytest.raises(UsageError):
        MC1(n=0)
    with pytest.raises(UsageError):
        SlutskyDesign(1.0, 1.0, 0.0)


def test_replication_seeds() -> None:
    rng, seed = replication_seeds(7, 3)
    again_rng, again_seed = replication_seeds(7, 3)
    assert seed == again_seed
    assert rng.standard_normal() == again_rng.standard_normal()
    assert replication_seeds(7, 4)[1] != seed


def test_study_is_deterministic() -> None:
    design = MC1.null("D1", n=200)
    config = TestConfig(design.default_cone(), design.default_grid(), B=20)
    first = run_study(design, BasisSpec(), config, R=3, base_seed=1)
    second = run_study(design, BasisSpec(), config, R=3, base_seed=1)
    assert first.to_row() == second.to_row()
    assert first.completed == 3
    assert 0.0 <= first.rejection_rate <= 1.0
    assert first.k_n == 7


@pytest.mark.parametrize(
    "error", [SolverFailure("stalled"), np.linalg.LinAlgError("singular matrix")]
)
def test_failed_replications_are_counted(error: Exception) -> None:
    design = MC1.null("D1", n=100)
    config = TestConfig(design.default_cone(), design.default_grid(), B=20)
    with patch.object(MC1, "run", side_effect=error):
        result = run_study(design, BasisSpec(), config, R=2, base_seed=0)
    assert result.failures == 2
    assert result.completed == 0
    assert math.isnan(result.rejection_rate)


def test_mc2_study() -> None:
    design = MC2.null("D3", n=300)
    grid = make_grid([(0.1, 0.9), (0.1, 0.9)], [5, 5])
    config = TestConfig(Monotone.increasing(2), grid, B=20)
    result = run_study(design, BasisSpec(interior=0, order=3), config, 1, 2)
    assert result.completed == 1
    assert result.k_n == 9


def test_slutsky_study() -> None:
    design = SlutskyDesign.null("D1", n=300)
    config = TestConfig(design.default_cone(), design.default_grid(), B=20)
    result = run_study(design, BasisSpec(interior=0, order=3), config, 1, 4)
    assert result.completed == 1
    assert result.k_n == 27


@pytest.mark.slow
def test_size_under_least_favorable_null() -> None:
    result = run_study(MC1.null("D1"), BasisSpec(), None, R=500, base_seed=1)
    assert abs(result.rejection_rate - 0.053) <= 0.025


@pytest.mark.slow
def test_interior_null_under_rejects() -> None:
    result = run_study(MC1.null("D3"), BasisSpec(), None, R=500, base_seed=1)
    assert result.rejection_rate <= 0.02


@pytest.mark.slow
def test_power_grows_with_delta() -> None:
    rates = []
    errors = []
    for delta in (0.0, 2.0, 5.0, 10.0):
        result = run_study(
            MC1.alternative(delta), BasisSpec(), None, R=300, base_seed=1
        )
        rates.append(result.rejection_rate)
        errors.append(result.mc_std_error)
    assert rates[-1] >= 0.93
    for (low, low_err), (high, high_err) in zip(
        zip(rates, errors), zip(rates[1:], errors[1:])
    ):
        assert high >= low - 2 * max(low_err, high_err)


@pytest.mark.slow
def test_tuning_insensitivity() -> None:
    design = MC1.null("D1")
    rates = []
    for gamma in (1.0 / design.n, 0.01 / math.log(design.n), 0.01):
        config = TestConfig(Monotone(), design.default_grid(), gamma_n=gamma)
        rates.append(
            run_study(design, BasisSpec(), config, R=500, base_seed=1).rejection_rate
        )
    assert max(rates) - min(rates) <= 0.01
