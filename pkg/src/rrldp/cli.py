"""Command-line front end.

Subcommands: inspect (matrix + privacy level of a mechanism), optimize
(variance-optimal parameters and region diagnostics), simulate (frequency
or graph experiment), sweep (variance curves), audit (budget table).

Exit codes: 0 on pass, 1 on an acceptance failure, 2 on a config error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from pathlib import Path

from .estimators import ExcludedParameterError, SingularMatrixError
from .experiments import ConfigError, parse_config, run_experiment
from .mechanisms import build_matrix, matrix_to_csv, spec_from_config
from .privacy import (
    BoundaryUndefinedError,
    FeasibleRegion,
    UnboundedBudgetError,
    epsilon_of_matrix,
    optimal_p_high,
    optimal_p_low,
    region_contains,
    two_rate_boundary_optimum,
)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def _read_config_text(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise ConfigError("config", f"no such file: {path}")
    return p.read_text(encoding="utf-8")


def _read_sections(path: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(_read_config_text(path))
    except configparser.Error as exc:
        raise ConfigError("config", f"INI parse error: {exc}") from exc
    return cp


def _json_out(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _cmd_inspect(args) -> int:
    cp = _read_sections(args.config)
    if "mechanism" not in cp:
        raise ConfigError("mechanism", "inspect needs a [mechanism] section")
    text = "\n".join(f"{k} = {v}" for k, v in cp["mechanism"].items())
    try:
        spec = spec_from_config(text)
    except (KeyError, ValueError) as exc:
        raise ConfigError("mechanism", str(exc)) from exc
    matrix = build_matrix(spec)
    csv_text = matrix_to_csv(matrix)
    try:
        budget = epsilon_of_matrix(matrix).to_dict()
    except UnboundedBudgetError as exc:
        budget = {"epsilon": None, "provenance": "matrix", "note": str(exc)}
    print(csv_text, end="")
    print(_json_out({"mechanism": spec.describe(), "flags": list(matrix.flags), "budget": budget}))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "matrix.csv").write_text(csv_text, encoding="utf-8")
        (out / "budget.json").write_text(_json_out(budget) + "\n", encoding="utf-8")
    return EXIT_PASS


def _cmd_optimize(args) -> int:
    cp = _read_sections(args.config)
    if "optimize" not in cp:
        raise ConfigError("optimize", "optimize needs an [optimize] section")
    section = cp["optimize"]
    mode = section.get("mode", "symmetric")
    try:
        epsilon = float(section.get("epsilon", repr(math.log(2.0))))
    except ValueError as exc:
        raise ConfigError("optimize.epsilon", str(exc)) from exc
    if mode == "symmetric":
        n = int(section.get("n", "3"))
        try:
            p_high = optimal_p_high(epsilon, n)
            p_low = optimal_p_low(epsilon, n)
        except ValueError as exc:
            raise ConfigError("optimize", str(exc)) from exc
        high_region = FeasibleRegion("sym_high", epsilon, n=n)
        low_region = FeasibleRegion("sym_low", epsilon, n=n)
        payload = {
            "mode": mode,
            "epsilon": epsilon,
            "n": n,
            "p_high": p_high,
            "p_high_in_region": region_contains(high_region, p_high),
            "p_low": p_low,
            "p_low_in_region": region_contains(low_region, p_low),
        }
        print(_json_out(payload))
        ok = payload["p_high_in_region"] and payload["p_low_in_region"]
        return EXIT_PASS if ok else EXIT_FAIL
    if mode == "two_rate":
        grid = int(section.get("grid", "200"))
        pi0 = float(section.get("pi0", "0.3"))
        total = int(section.get("sample_size", "10000"))
        try:
            result = two_rate_boundary_optimum(epsilon, grid, pi0, total)
        except BoundaryUndefinedError as exc:
            raise ConfigError("optimize.epsilon", str(exc)) from exc
        details = dict(result.details)
        details.pop("boundary_p1", None)
        details.pop("boundary_variance", None)
        payload = {
            "mode": mode,
            "interior_argmin": list(result.argmin),
            "boundary_set": list(result.boundary_set),
            "achieved_variance": result.achieved_variance,
            "details": details,
        }
        print(_json_out(payload))
        ok = (
            details["interior_local_minima"] == 0
            and details["derivative_sign_ok"]
            and abs(details["boundary_grid_argmin"] - result.boundary_set[0])
            <= details["boundary_grid_spacing"]
        )
        return EXIT_PASS if ok else EXIT_FAIL
    raise ConfigError("optimize.mode", f"must be symmetric or two_rate, got {mode!r}")


def _run_and_write(args, allowed_kinds: tuple[str, ...]) -> int:
    config = parse_config(_read_config_text(args.config))
    if config.kind not in allowed_kinds:
        raise ConfigError("experiment.kind", f"expected one of {allowed_kinds}, got {config.kind!r}")
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    if args.format is not None:
        config.out_format = args.format
    result = run_experiment(config)
    if config.out_dir:
        result.write(config.out_dir, config.out_format)
    print(_json_out(result.summary_document()))
    return EXIT_PASS if result.passed else EXIT_FAIL


def _cmd_simulate(args) -> int:
    return _run_and_write(args, ("frequency", "graph"))


def _cmd_sweep(args) -> int:
    return _run_and_write(args, ("sweep",))


def _cmd_audit(args) -> int:
    return _run_and_write(args, ("budget-audit",))


def _add_run_flags(parser):
    parser.add_argument("--config", required=True, help="path to the experiment INI file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--format", choices=("csv", "json"), default=None, help="row file format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rrldp",
        description="Randomized-response mechanisms and protocols under local differential privacy",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_inspect = sub.add_parser("inspect", help="print matrix and privacy level of a mechanism")
    p_inspect.add_argument("--config", required=True)
    p_inspect.add_argument("--out", default=None)
    p_inspect.set_defaults(func=_cmd_inspect)

    p_opt = sub.add_parser("optimize", help="variance-optimal parameters and region diagnostics")
    p_opt.add_argument("--config", required=True)
    p_opt.set_defaults(func=_cmd_optimize)

    for name, func, help_text in (
        ("simulate", _cmd_simulate, "run a frequency or graph experiment"),
        ("sweep", _cmd_sweep, "trace variance curves over a feasibility region"),
        ("audit", _cmd_audit, "closed-form vs brute-force budget table"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_run_flags(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExcludedParameterError, SingularMatrixError, UnboundedBudgetError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
