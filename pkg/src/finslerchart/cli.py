"""Command-line front end: load a config, verify, report.

Exit status: 0 when every check passes at its configured tolerance, 1 when
any check fails, 2 for configuration or expression problems.  Machine mode
emits one line per check record, ordered by (point, check name), so runs
with the same config and seed are byte-identical and diff-friendly.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .connections import DEFAULT_TOLERANCES, _closed_form, point_data, \
    verify_points
from .expr import ExpressionError, FieldSet, Num, ValidationError, load_config
from .metric import DegenerateMetricError
from .nlconn import connection_for

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG_ERROR = 0, 1, 2


def build_arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="finslerchart",
        description="Verify pseudo-Finsler connection identities over a chart config.")
    ap.add_argument("--config", required=True, help="TOML configuration file")
    ap.add_argument("--points", type=int, default=0, metavar="K",
                    help="additionally sample K random chart points (seeded)")
    ap.add_argument("--seed", type=int, default=0,
                    help="seed for random points and random tensors")
    ap.add_argument("--tol", action="append", default=[], metavar="CHECK=VALUE",
                    help="override a check tolerance; repeatable")
    ap.add_argument("--random-tensors", action="store_true",
                    help="fill missing S/T tables with seeded constant skew entries")
    ap.add_argument("--dump-coeffs", action="store_true",
                    help="dump every connection coefficient block per point")
    ap.add_argument("--machine", action="store_true",
                    help="line-oriented machine-readable output")
    ap.add_argument("--perturb", type=float, default=0.0, metavar="EPS",
                    help="corrupt one closed-form coefficient by EPS before the "
                         "compatibility checks (negative-control mode)")
    ap.add_argument("--expected-q", type=int, default=None, metavar="Q",
                    help="require exactly Q negative metric eigenvalues")
    return ap


def parse_tolerances(pairs: list[str]) -> dict[str, float]:
    out: dict[str, float] = {}
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep:
            raise ValidationError(f"--tol expects CHECK=VALUE, got {pair!r}")
        if name not in DEFAULT_TOLERANCES:
            known = ", ".join(sorted(DEFAULT_TOLERANCES))
            raise ValidationError(f"--tol: unknown check {name!r} (known: {known})")
        try:
            out[name] = float(value)
        except ValueError:
            raise ValidationError(f"--tol {name}: {value!r} is not a number")
    return out


def sample_points(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """x uniform in [-1, 1]^{2n}; y uniform on the unit sphere scaled by a
    uniform [0.5, 2] radius, keeping points clear of the zero section."""
    m = 2 * n
    x = rng.uniform(-1.0, 1.0, size=(count, m))
    y = rng.normal(size=(count, m))
    y /= np.linalg.norm(y, axis=1, keepdims=True)
    y *= rng.uniform(0.5, 2.0, size=(count, 1))
    return np.hstack([x, y])


def random_skew_table(n: int, rng: np.random.Generator) -> dict[tuple[int, int, int], Num]:
    """Constant skew (1,2)-tensor entries, uniform in [-1, 1], i < j only."""
    m = 2 * n
    return {(k, i, j): Num(float(rng.uniform(-1.0, 1.0)))
            for k in range(1, m + 1)
            for i in range(1, m + 1)
            for j in range(i + 1, m + 1)}


def _frame_indices(m: int):
    for k in range(m):
        for i in range(m):
            for j in range(m):
                yield k, i, j


def dump_coefficients(fs: FieldSet, nc, points: np.ndarray, machine: bool,
                      out) -> None:
    blocks = (("C", 1, "vertical"), ("F", 1, "horizontal"),
              ("Ftilde", 3, "horizontal"))
    data = point_data(fs, nc, points)
    for idx, pd in enumerate(data):
        coeffs = {a: _closed_form(pd, a) for a in (1, 3)}
        if machine:
            for name, a, attr in blocks:
                arr = getattr(coeffs[a], attr)
                for k, i, j in _frame_indices(pd.m):
                    print(f"coeff point={idx} block={name} k={k + 1} i={i + 1} "
                          f"j={j + 1} value={arr[k, i, j]:.16e}", file=out)
        else:
            print(f"-- point {idx}: {pd.coords.tolist()}", file=out)
            for name, a, attr in blocks:
                arr = getattr(coeffs[a], attr)
                print(f"{name} =\n{np.array2string(arr, precision=10)}", file=out)


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    out = sys.stdout

    try:
        tolerances = parse_tolerances(args.tol)
        loaded = load_config(args.config)
    except (ValidationError, ExpressionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    fs = loaded.fieldset
    rng = np.random.default_rng(args.seed)
    if args.random_tensors:
        if not fs.s_coeffs:
            fs.s_coeffs = random_skew_table(fs.n, rng)
        if not fs.t_coeffs:
            fs.t_coeffs = random_skew_table(fs.n, rng)

    pieces = []
    if loaded.points is not None:
        pieces.append(loaded.points)
    if args.points > 0:
        pieces.append(sample_points(fs.n, args.points, rng))
    if not pieces:
        print("error: no evaluation points (config has no 'points' and "
              "--points not given)", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    points = np.vstack(pieces)

    try:
        nc = connection_for(fs)
        report = verify_points(fs, nc, points, tolerances=tolerances,
                               expected_q=args.expected_q, perturb=args.perturb)
    except (ValidationError, ExpressionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    if args.machine:
        print(report.render_machine(), file=out)
    else:
        print(f"config: {args.config}  n={fs.n}  points={points.shape[0]}  "
              f"connection={nc.source}", file=out)
        print(report.render_human(), file=out)

    if args.dump_coeffs:
        try:
            dump_coefficients(fs, nc, points, args.machine, out)
        except DegenerateMetricError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CHECK_FAILED

    return EXIT_OK if report.all_passed else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
