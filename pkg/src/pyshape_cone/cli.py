# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""Command line front end: ``pyshape-cone {test,simulate,project}``.

Exit codes are 0 on completion (whatever the decision), 2 for malformed
input and 3 for numerical failures.
"""

import argparse
import json
import logging
import sys
from typing import Callable, Dict, List, Optional, Sequence, TextIO

import numpy as np
import pandas as pd

from .cones import (
    ConcaveMultivariate,
    Concave1D,
    ConeSpec,
    Convex1D,
    ConvexMultivariate,
    Monotone,
    Nonnegative,
    PlanKind,
    PointwiseNonnegative,
    Slutsky,
    Supermodular,
    intersect,
    project,
)
from .exception import NumericalError, UsageError
from .grid import QUADRATURE_RULES, FloatArray, FunctionGrid, Grid, l2_norm, make_grid
from .mc import MC1, MC2, Design, SlutskyDesign, run_study
from .qp import QPSolver
from .sieve import WEIGHT_LAWS, BasisSpec, Dataset
from .testing import TestConfig, gamma_rule, run_test

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

DEFAULT_GRID_COUNT = 21
# per dimension for shapes whose projection has a constraint per pair of points
AFFINE_GRID_COUNT = 9

ShapeFactory = Callable[[int], ConeSpec]

SHAPES: Dict[str, ShapeFactory] = {
    "monotone": Monotone.increasing,
    "increasing": Monotone.increasing,
    "decreasing": Monotone.decreasing,
    "convex": lambda dims: Convex1D() if dims == 1 else ConvexMultivariate(),
    "concave": lambda dims: Concave1D() if dims == 1 else ConcaveMultivariate(),
    "monotone-concave": lambda dims: ConcaveMultivariate(increasing=True),
    "monotone-convex": lambda dims: ConvexMultivariate(increasing=True),
    "supermodular": lambda dims: Supermodular(),
    "nonneg": lambda dims: Nonnegative(),
    "pointwise-nonneg": lambda dims: PointwiseNonnegative(),
}


def parse_shape(name: str, dims: int) -> ConeSpec:
    """Build a cone from a shape name; ``a+b`` intersects linear shapes.

    :raises: UsageError
    """
    parts = [p.strip().lower() for p in name.split("+")]
    unknown = [p for p in parts if p not in SHAPES]
    if unknown:
        raise UsageError(
            f"Unknown shape {unknown[0]!r}; choose from {', '.join(SHAPES)}."
        )
    cones = [SHAPES[p](dims) for p in parts]
    return cones[0] if len(cones) == 1 else intersect(cones)


def _read_csv(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, encoding="utf-8")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise UsageError(f"Cannot read {path}: {e}") from e


def _numeric(frame: pd.DataFrame, columns: Sequence[str]) -> FloatArray:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise UsageError(f"Input is missing column {missing[0]!r}.")
    try:
        return frame[list(columns)].to_numpy(dtype=np.float64)
    except ValueError as e:
        raise UsageError(f"Non-numeric entries in {', '.join(columns)}: {e}") from e


def _covariate_columns(frame: pd.DataFrame) -> List[str]:
    columns = []
    while f"z{len(columns) + 1}" in frame.columns:
        columns.append(f"z{len(columns) + 1}")
    if not columns:
        raise UsageError("Input is missing column 'z1'.")
    return columns


def _per_dim(values: Optional[Sequence[float]], dims: int, name: str) -> List[float]:
    if values is None:
        return []
    if len(values) == 1:
        return list(values) * dims
    if len(values) != dims:
        raise UsageError(f"--{name} needs 1 or {dims} values, got {len(values)}.")
    return list(values)


def grid_from_args(
    args: argparse.Namespace,
    dims: int,
    Z: Optional[FloatArray] = None,
    default_count: int = DEFAULT_GRID_COUNT,
) -> Grid:
    """Grid from ``--grid-lo/--grid-hi/--grid-n``.

    Missing bounds default to the 5% and 95% quantiles of the covariates
    (or ``[0, 1]`` without data) and missing counts to ``default_count``
    points per dimension.
    """
    lo = _per_dim(args.grid_lo, dims, "grid-lo")
    hi = _per_dim(args.grid_hi, dims, "grid-hi")
    counts = _per_dim(args.grid_n, dims, "grid-n")
    if not lo:
        lo = list(np.quantile(Z, 0.05, axis=0)) if Z is not None else [0.0] * dims
    if not hi:
        hi = list(np.quantile(Z, 0.95, axis=0)) if Z is not None else [1.0] * dims
    if not counts:
        counts = [default_count] * dims
    return make_grid(list(zip(lo, hi)), [int(c) for c in counts], args.quadrature)


def _default_count(cone: ConeSpec) -> int:
    if cone.kind is PlanKind.KUOSMANEN_QP:
        return AFFINE_GRID_COUNT
    return DEFAULT_GRID_COUNT


def _write(text: str, path: Optional[str], stdout: TextIO) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fp:
            fp.write(text)
    else:
        stdout.write(text)


def cmd_test(args: argparse.Namespace) -> int:
    frame = _read_csv(args.input)
    columns = _covariate_columns(frame)
    Y = _numeric(frame, ["y"])[:, 0]
    Z = _numeric(frame, columns)
    dataset = Dataset(Y, Z)
    cone = parse_shape(args.shape, len(columns))
    grid = grid_from_args(args, len(columns), Z, _default_count(cone))
    config = TestConfig(
        cone=cone,
        grid=grid,
        alpha=args.alpha,
        gamma_n=None if args.gamma is None else gamma_rule(args.gamma, dataset.n),
        B=args.B,
        kappa_override=args.kappa,
        seed=args.seed,
        weight_law=args.weights,
        workers=args.workers,
    )
    basis = BasisSpec(args.knots, args.order).build(Z)
    report = run_test(dataset, basis, config)
    _write(json.dumps(report.to_dict(), indent=2) + "\n", args.output, sys.stdout)
    print(report.summary(), file=sys.stderr)
    return EXIT_OK


def _designs(args: argparse.Namespace, n: int) -> List[Design]:
    if args.design == "slutsky":
        if args.delta:
            return [
                SlutskyDesign.alternative(d, n, args.full_grid) for d in args.delta
            ]
        return [SlutskyDesign.null(args.null, n, args.full_grid)]
    if args.design in ("mc2", "mc2-log"):
        log_scale = args.design == "mc2-log"
        if args.delta:
            return [MC2.alternative(d, n, log_scale) for d in args.delta]
        return [MC2.null(args.null, n, log_scale)]
    if args.delta:
        return [MC1.alternative(d, n) for d in args.delta]
    return [MC1.null(args.null, n)]


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be at least 1.")
    rows = []
    basis_spec = BasisSpec(args.knots, args.order)
    for n in args.n:
        for design in _designs(args, n):
            for rule in args.gamma or [None]:
                config = TestConfig(
                    cone=design.default_cone(),
                    grid=design.default_grid(),
                    alpha=args.alpha,
                    gamma_n=None if rule is None else gamma_rule(rule, n),
                    B=args.B,
                    weight_law=args.weights,
                )
                result = run_study(
                    design, basis_spec, config, args.reps, args.seed, args.workers
                )
                print(
                    f"{result.design} n={n}: rejection rate "
                    f"{result.rejection_rate:.4f} ({result.failures} failed)",
                    file=sys.stderr,
                )
                rows.append(result.to_row())
    _write(pd.DataFrame(rows).to_csv(index=False), args.output, sys.stdout)
    return EXIT_OK


def _matrix_columns(frame: pd.DataFrame) -> int:
    dq = 0
    while f"m{dq + 1}{dq + 1}" in frame.columns:
        dq += 1
    return dq


def cmd_project(args: argparse.Namespace) -> int:
    frame = _read_csv(args.input)
    dq = _matrix_columns(frame)
    dims = len(args.grid_n) if args.grid_n else 1
    if args.grid_n is None:
        args.grid_n = [len(frame)]
    grid = grid_from_args(args, dims)
    if dq:
        names = [f"m{i}{j}" for i in range(1, dq + 1) for j in range(1, dq + 1)]
        values = _numeric(frame, names).reshape(-1, dq, dq)
        cone: ConeSpec = Slutsky(dq=dq)
    else:
        names = ["value"]
        values = _numeric(frame, names)[:, 0]
        cone = parse_shape(args.shape, dims)
    f = FunctionGrid(grid, values)
    projected = project(cone, f, QPSolver())
    distance = l2_norm(f - projected)

    out = pd.DataFrame(grid.coords, columns=[f"z{j + 1}" for j in range(dims)])
    flat = projected.values.reshape(grid.size, -1)
    for j, name in enumerate(names):
        out[name] = flat[:, j]
    _write(out.to_csv(index=False), args.output, sys.stdout)
    print(f"distance={distance:.12g}", file=sys.stderr)
    return EXIT_OK


def _add_grid_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--grid-lo", type=float, nargs="+", help="lower bound(s)")
    parser.add_argument("--grid-hi", type=float, nargs="+", help="upper bound(s)")
    parser.add_argument("--grid-n", type=int, nargs="+", help="point count(s)")
    parser.add_argument("--quadrature", choices=QUADRATURE_RULES, default="trapezoid")


def _add_estimation_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--knots", type=int, default=3, help="interior knots")
    parser.add_argument("--order", type=int, default=4, help="4 cubic, 3 quadratic")
    parser.add_argument("--B", type=int, default=200, help="bootstrap draws")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--weights", choices=WEIGHT_LAWS, default="normal")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--output", "-o", help="write here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pyshape-cone",
        description="Projection tests of shape restrictions forming convex cones.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    test = sub.add_parser("test", help="test a shape on a y,z1..zd CSV")
    test.add_argument("input")
    test.add_argument("--shape", default="monotone", help=", ".join(SHAPES))
    test.add_argument("--gamma", help="gamma_n rule, default 0.01/log n")
    test.add_argument("--kappa", type=float, help="fixed kappa instead of kappa_hat")
    _add_estimation_flags(test)
    _add_grid_flags(test)
    test.set_defaults(func=cmd_test)

    simulate = sub.add_parser("simulate", help="Monte Carlo size and power")
    simulate.add_argument(
        "--design", choices=["mc1", "mc2", "mc2-log", "slutsky"], default="mc1"
    )
    simulate.add_argument("--null", default="D1", help="D1, D2 or D3")
    simulate.add_argument("--delta", type=float, nargs="+", help="alternatives")
    simulate.add_argument("--n", type=int, nargs="+", default=[500])
    simulate.add_argument("--reps", type=int, default=500)
    simulate.add_argument("--gamma", nargs="+", help="gamma_n rules to compare")
    simulate.add_argument("--full-grid", action="store_true")
    _add_estimation_flags(simulate)
    simulate.set_defaults(func=cmd_simulate)

    proj = sub.add_parser("project", help="project grid values onto a shape")
    proj.add_argument("input")
    proj.add_argument("--shape", default="monotone", help=", ".join(SHAPES))
    proj.add_argument("--output", "-o", help="write here instead of stdout")
    _add_grid_flags(proj)
    proj.set_defaults(func=cmd_project)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        code: int = args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return code


if __name__ == "__main__":
    sys.exit(main())
