# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

import io
import json
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd
import pytest
from mock import patch

from pyshape_cone.cli import (
    AFFINE_GRID_COUNT,
    EXIT_INPUT,
    EXIT_NUMERICAL,
    EXIT_OK,
    main,
    parse_shape,
)
from pyshape_cone.cones import Concave1D, ConvexMultivariate, Intersection, Monotone
from pyshape_cone.exception import SolverFailure, UsageError

# pylint: disable=redefined-outer-name


@pytest.fixture
def monotone_csv(tmp_path: Path, rng: np.random.Generator) -> Path:
    Z = rng.uniform(-1.0, 1.0, 300)
    path = tmp_path / "data.csv"
    frame = pd.DataFrame({"y": 2.0 * Z + 0.01 * rng.standard_normal(300), "z1": Z})
    frame.to_csv(path, index=False)
    return path


def _values_csv(tmp_path: Path, values: List[float]) -> Path:
    path = tmp_path / "values.csv"
    pd.DataFrame({"value": values}).to_csv(path, index=False)
    return path


def test_parse_shape() -> None:
    assert parse_shape("monotone", 1) == Monotone.increasing(1)
    assert parse_shape("concave", 1) == Concave1D()
    assert parse_shape("convex", 2) == ConvexMultivariate()
    joined = parse_shape("monotone+convex", 1)
    assert isinstance(joined, Intersection)
    assert len(joined.members) == 2
    with pytest.raises(UsageError):
        parse_shape("wiggly", 1)


def test_test_command(monotone_csv: Path, tmp_path: Path) -> None:
    output = tmp_path / "report.json"
    code = main(
        [
            "test",
            str(monotone_csv),
            "--shape",
            "monotone",
            "--B",
            "50",
            "--seed",
            "1",
            "--grid-lo",
            "-0.9",
            "--grid-hi",
            "0.9",
            "--grid-n",
            "37",
            "-o",
            str(output),
        ]
    )
    assert code == EXIT_OK
    report = json.loads(output.read_text(encoding="utf-8"))
    assert report["reject"] is False
    assert report["B"] == 50
    assert report["alpha"] == 0.05
    assert report["k_n"] == 7
    assert list(report)[:6] == [
        "statistic",
        "tau_hat",
        "kappa_hat",
        "critical_value",
        "p_value",
        "reject",
    ]


def test_test_command_is_deterministic(
    monotone_csv: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    args = ["test", str(monotone_csv), "--B", "30", "--seed", "4", "--grid-n", "15"]
    assert main(args) == EXIT_OK
    first = capsys.readouterr().out
    assert main(args) == EXIT_OK
    assert capsys.readouterr().out == first


def test_missing_column(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = tmp_path / "bad.csv"
    pd.DataFrame({"y": [1.0, 2.0], "x": [0.0, 1.0]}).to_csv(path, index=False)
    assert main(["test", str(path)]) == EXIT_INPUT
    assert "z1" in capsys.readouterr().err


def test_missing_file(tmp_path: Path) -> None:
    assert main(["test", str(tmp_path / "nothing.csv")]) == EXIT_INPUT


def test_solver_failure_exit(monotone_csv: Path) -> None:
    with patch("pyshape_cone.cli.run_test", side_effect=SolverFailure("stalled")):
        assert main(["test", str(monotone_csv), "--B", "10"]) == EXIT_NUMERICAL


@pytest.mark.parametrize(
    ("shape", "count"), [("concave", AFFINE_GRID_COUNT), ("monotone", 21)]
)
def test_default_grid_count(
    shape: str, count: int, tmp_path: Path, rng: np.random.Generator
) -> None:
    Z = rng.uniform(0.0, 1.0, (200, 2))
    path = tmp_path / "data.csv"
    frame = pd.DataFrame({"y": Z.sum(axis=1), "z1": Z[:, 0], "z2": Z[:, 1]})
    frame.to_csv(path, index=False)
    with patch(
        "pyshape_cone.cli.run_test", side_effect=SolverFailure("stalled")
    ) as run:
        assert main(["test", str(path), "--shape", shape]) == EXIT_NUMERICAL
    config = run.call_args[0][2]
    assert config.grid.counts == (count, count)


def test_project_monotone(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = _values_csv(tmp_path, [3.0, 1.0, 2.0])
    args = ["project", str(path), "--shape", "monotone", "--quadrature", "uniform"]
    assert main(args) == EXIT_OK
    captured = capsys.readouterr()
    out = pd.read_csv(io.StringIO(captured.out))
    np.testing.assert_allclose(out["value"], [2.0, 2.0, 2.0])
    np.testing.assert_allclose(out["z1"], [0.0, 0.5, 1.0])
    distance = float(captured.err.strip().split("=")[1])
    assert distance == pytest.approx(np.sqrt(2.0 / 3.0))


def test_project_nonneg(tmp_path: Path) -> None:
    path = _values_csv(tmp_path, [-1.0, 0.5])
    output = tmp_path / "out.csv"
    assert main(["project", str(path), "--shape", "nonneg", "-o", str(output)]) == 0
    np.testing.assert_allclose(pd.read_csv(output)["value"], [0.0, 0.5])


def test_project_round_trip(tmp_path: Path) -> None:
    path = _values_csv(tmp_path, [0.3, -0.2, 0.8, 0.1, 0.5])
    once = tmp_path / "once.csv"
    twice = tmp_path / "twice.csv"
    assert main(["project", str(path), "--shape", "monotone", "-o", str(once)]) == 0
    assert main(["project", str(once), "--shape", "monotone", "-o", str(twice)]) == 0
    np.testing.assert_allclose(
        pd.read_csv(twice)["value"], pd.read_csv(once)["value"], atol=1e-6
    )


def test_project_matrices(tmp_path: Path) -> None:
    path = tmp_path / "matrices.csv"
    pd.DataFrame(
        {"m11": [1.0, -1.0], "m12": [0.0, 0.0], "m21": [0.0, 0.0], "m22": [-1.0, -2.0]}
    ).to_csv(path, index=False)
    output = tmp_path / "out.csv"
    assert main(["project", str(path), "-o", str(output)]) == 0
    out = pd.read_csv(output)
    np.testing.assert_allclose(out["m11"], [0.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(out["m22"], [-1.0, -2.0], atol=1e-12)


def test_project_grid_mismatch(tmp_path: Path) -> None:
    path = _values_csv(tmp_path, [1.0, 2.0, 3.0])
    assert main(["project", str(path), "--grid-n", "4"]) == EXIT_INPUT


def test_simulate(tmp_path: Path) -> None:
    output = tmp_path / "study.csv"
    args = [
        "simulate",
        "--design",
        "mc1",
        "--delta",
        "1",
        "10",
        "--n",
        "200",
        "--reps",
        "2",
        "--B",
        "20",
        "--seed",
        "1",
        "-o",
        str(output),
    ]
    assert main(args) == EXIT_OK
    frame = pd.read_csv(output)
    assert list(frame.columns) == [
        "design",
        "n",
        "k_n",
        "gamma",
        "rejection_rate",
        "reps",
        "seed",
    ]
    assert len(frame) == 2
    assert frame["rejection_rate"].between(0.0, 1.0).all()
    first = output.read_bytes()
    assert main(args) == EXIT_OK
    assert output.read_bytes() == first


def test_simulate_bad_reps() -> None:
    assert main(["simulate", "--reps", "0"]) == EXIT_INPUT
