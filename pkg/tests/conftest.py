# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

from typing import List

import numpy as np
import pytest

from pyshape_cone.grid import Grid, make_grid
from pyshape_cone.qp import QPSolver

# pylint: disable=redefined-outer-name


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow tests"
    )


def pytest_collection_modifyitems(
    config: pytest.Config, items: List[pytest.Item]
) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def line_grid() -> Grid:
    """The MC1 evaluation grid."""
    return make_grid([(-0.9, 0.9)], [37])


@pytest.fixture
def square_grid() -> Grid:
    return make_grid([(0.0, 1.0), (0.0, 1.0)], [5, 5])


@pytest.fixture
def solver() -> QPSolver:
    return QPSolver()
