"""Batch command-line front end.

Three subcommands: ``estimate`` (fit one covariance decomposition from CSV
inputs), ``simulate`` (run a synthetic experiment sweep from a config JSON),
and ``backtest`` (rolling minimum-variance study).  Every run writes a
manifest recording the resolved configuration, input digests, and timings;
outputs are confined to the ``--out`` directory.

Exit codes: 2 usage/config, 3 data, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.linalg

from . import __version__
from .covariance import descale_covariance, sample_covariance
from .errors import ConfigError, DataError, NumericError, SpoetError
from .estimators import (
    CovarianceDecomposition,
    EstimatorConfig,
    FactorComponent,
    double_poet,
    poet,
    structured_poet,
)
from .panel import (
    aggregate_returns,
    build_layout,
    load_membership,
    load_panel,
    reorder_by_hierarchy,
)
from .portfolio import BacktestConfig, MethodSpec, backtest
from .serialize import SCHEMA as DECOMPOSITION_SCHEMA
from .serialize import json_default, write_decomposition
from .simulation import EstimatorSpec, SimConfig, run_experiment
from .thresholding import ThresholdPolicy

MANIFEST_SCHEMA = "spoet-manifest/1"
METHODS = ("samcov", "poet", "double-poet", "structured-poet")


def _count_or_auto(text: str):
    if text == "auto":
        return "auto"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'auto', got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError("count must be nonnegative")
    return value


def _tau_or_auto(text: str):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError("tau must be nonnegative")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spoet",
        description="Multi-level factor covariance estimation toolkit",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"spoet {__version__} (manifest {MANIFEST_SCHEMA}, "
        f"decomposition {DECOMPOSITION_SCHEMA})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fit one covariance decomposition")
    est.add_argument("--returns", required=True, help="returns/prices CSV")
    est.add_argument("--membership", required=True, help="membership CSV")
    est.add_argument("--mode", choices=("returns", "prices"), default="returns")
    est.add_argument("--method", required=True, choices=METHODS)
    est.add_argument("--k", type=_count_or_auto, default="auto")
    est.add_argument("--r-l", dest="r_l", type=_count_or_auto, default="auto")
    est.add_argument("--k-sq", dest="k_sq", type=_count_or_auto, default="auto")
    est.add_argument("--d", type=int, default=1, help="low-frequency window (days)")
    est.add_argument("--tau", type=_tau_or_auto, default="auto")
    est.add_argument("--shrinkage", choices=("soft", "hard"), default="soft")
    est.add_argument("--sector-block", action="store_true")
    est.add_argument("--dense", action="store_true", help="also write total.csv")
    est.add_argument("--out", required=True)
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="run a synthetic experiment sweep")
    sim.add_argument("--config", required=True, help="experiment config JSON")
    sim.add_argument("--reps", type=int, default=None, help="override replications")
    sim.add_argument("--seed", type=int, default=None, help="override master seed")
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    back = sub.add_parser("backtest", help="rolling minimum-variance study")
    back.add_argument("--returns", required=True)
    back.add_argument("--membership", required=True)
    back.add_argument("--mode", choices=("returns", "prices"), default="returns")
    back.add_argument("--config", required=True, help="backtest config JSON")
    back.add_argument("--weights", action="store_true", help="dump weekly weights")
    back.add_argument("--out", required=True)
    back.set_defaults(func=cmd_backtest)
    return parser


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command, config, inputs, outputs, seed, elapsed):
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "tool_version": __version__,
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "master_seed": seed,
        "outputs": sorted(outputs),
        "elapsed_seconds": round(elapsed, 3),
    }
    with open(out_dir / "manifest.json", "w") as handle:
        json.dump(manifest, handle, indent=1, default=json_default)
        handle.write("\n")


def _prepare_out(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_canonical(returns_path, membership_path, mode):
    panel = load_panel(returns_path, mode=mode)
    groups = load_membership(membership_path)
    panel, groups, perm = reorder_by_hierarchy(panel, groups)
    layout = build_layout(panel.asset_ids, groups)
    return panel, groups, layout, perm


def cmd_estimate(args) -> int:
    started = time.monotonic()
    if args.d < 1:
        raise ConfigError(f"--d must be >= 1, got {args.d}")
    out = _prepare_out(args.out)
    panel, groups, layout, perm = _load_canonical(
        args.returns, args.membership, args.mode
    )
    sectors = None
    if args.sector_block:
        if layout.sectors is None:
            raise DataError("--sector-block needs a complete sector column")
        sectors = layout.sectors
    policy = ThresholdPolicy(shrinkage=args.shrinkage, tau=args.tau, sectors=sectors)

    if args.method == "samcov":
        if args.d == 1:
            pilot = sample_covariance(panel)
        else:
            pilot = descale_covariance(
                sample_covariance(aggregate_returns(panel, args.d)), args.d
            )
        dec = CovarianceDecomposition.assemble(
            FactorComponent.empty(layout.n_assets),
            (),
            pilot,
            {"method": "samcov", "p": layout.n_assets, "d": args.d},
        )
    elif args.method == "poet":
        if args.d == 1:
            pilot = sample_covariance(panel)
        else:
            pilot = descale_covariance(
                sample_covariance(aggregate_returns(panel, args.d)), args.d
            )
        dec = poet(pilot, args.k, policy)
    elif args.method == "double-poet":
        if args.d == 1:
            pilot = sample_covariance(panel)
        else:
            pilot = descale_covariance(
                sample_covariance(aggregate_returns(panel, args.d)), args.d
            )
        config = EstimatorConfig(k=args.k, r_l=args.r_l, d=args.d, threshold=policy)
        dec = double_poet(pilot, layout, config)
    else:
        config = EstimatorConfig(
            k=args.k, r_l=args.r_l, k_sq=args.k_sq, d=args.d, threshold=policy
        )
        dec = structured_poet(panel, layout, config)

    dec.meta["asset_ids"] = list(layout.asset_ids)
    dec.meta["input_order_permutation"] = perm.tolist()
    write_decomposition(out / "decomposition.json", dec)
    with open(out / "selection.json", "w") as handle:
        json.dump(dec.meta, handle, indent=1, default=json_default)
        handle.write("\n")
    outputs = ["decomposition.json", "selection.json"]
    if args.dense:
        frame = pd.DataFrame(
            dec.total, index=layout.asset_ids, columns=layout.asset_ids
        )
        frame.to_csv(out / "total.csv")
        outputs.append("total.csv")
    resolved = {
        "method": args.method, "mode": args.mode, "k": args.k, "r_l": args.r_l,
        "k_sq": args.k_sq, "d": args.d, "tau": args.tau,
        "shrinkage": args.shrinkage, "sector_block": args.sector_block,
        "dense": args.dense,
    }
    _write_manifest(
        out, "estimate", resolved, [args.returns, args.membership],
        outputs, None, time.monotonic() - started,
    )
    return 0


def _sim_config_from_json(path, reps, seed) -> tuple[SimConfig, list[EstimatorSpec] | None]:
    try:
        with open(path) as handle:
            payload = json.load(handle)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed config JSON {path}: {exc}")
    menu_spec = payload.pop("estimators", None)
    known = {
        "p", "S", "L", "p_l", "k", "r_l", "T_grid", "d_grid", "beta",
        "replications", "master_seed", "diagonal_idio", "h_numerator",
    }
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    if reps is not None:
        if reps < 1:
            raise ConfigError(f"--reps must be >= 1, got {reps}")
        payload["replications"] = reps
    if seed is not None:
        payload["master_seed"] = seed
    for key in ("T_grid", "d_grid"):
        if key in payload:
            payload[key] = tuple(payload[key])
    try:
        config = SimConfig(**payload)
    except TypeError as exc:
        raise ConfigError(f"bad simulation config: {exc}")
    menu = None
    if menu_spec is not None:
        menu = [EstimatorSpec(**entry) for entry in menu_spec]
    return config, menu


def cmd_simulate(args) -> int:
    started = time.monotonic()
    out = _prepare_out(args.out)
    config, menu = _sim_config_from_json(args.config, args.reps, args.seed)
    cells_dir = out / "cells"
    cells_dir.mkdir(exist_ok=True)

    resolved = asdict(config)
    manifest_inputs_path = out / "manifest.json"
    if manifest_inputs_path.exists():
        with open(manifest_inputs_path) as handle:
            previous = json.load(handle)
        if previous.get("config") != json.loads(
            json.dumps(resolved, default=json_default)
        ):
            raise ConfigError(
                f"output directory {out} holds results for a different "
                "configuration; use a clean --out"
            )

    grid = config.T_grid if config.grid_var == "T" else config.d_grid
    frames = []
    for grid_value in grid:
        cell_path = cells_dir / f"{config.grid_var}={grid_value}.csv"
        if cell_path.exists():
            frames.append(pd.read_csv(cell_path, keep_default_na=False))
            continue
        frame = run_experiment(config, menu=menu, grid_values=[grid_value])
        frame.to_csv(cell_path, index=False)
        # read back so resumed and fresh runs serialize identically
        frames.append(pd.read_csv(cell_path, keep_default_na=False))
    results = pd.concat(frames, ignore_index=True)
    results.to_csv(out / "results.csv", index=False)
    _write_manifest(
        out, "simulate", resolved, [args.config],
        ["results.csv"] + [f"cells/{config.grid_var}={v}.csv" for v in grid],
        config.master_seed, time.monotonic() - started,
    )
    return 0


def _backtest_config_from_json(path) -> BacktestConfig:
    try:
        with open(path) as handle:
            payload = json.load(handle)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed config JSON {path}: {exc}")
    methods = payload.get("methods")
    if not methods:
        raise ConfigError("backtest config needs a nonempty 'methods' list")
    try:
        specs = tuple(MethodSpec(**entry) for entry in methods)
    except TypeError as exc:
        raise ConfigError(f"bad method spec: {exc}")
    return BacktestConfig(
        methods=specs,
        exposures=tuple(payload.get("exposures", (1.0, 2.0))),
        estimation_window=int(payload.get("estimation_window_days", 252)),
        tolerance=float(payload.get("tolerance", 1e-8)),
    )


def cmd_backtest(args) -> int:
    started = time.monotonic()
    out = _prepare_out(args.out)
    config = _backtest_config_from_json(args.config)
    panel, groups, layout, _ = _load_canonical(
        args.returns, args.membership, args.mode
    )
    result = backtest(panel, layout, config, collect_weights=args.weights)
    result.report.to_csv(out / "report.csv", index=False)
    result.weekly_returns.to_csv(out / "weekly_returns.csv", index=False)
    outputs = ["report.csv", "weekly_returns.csv"]
    if args.weights and result.weights is not None:
        result.weights.to_csv(out / "weights.csv", index=False)
        outputs.append("weights.csv")
    if result.skipped:
        with open(out / "skipped.json", "w") as handle:
            json.dump(result.skipped, handle, indent=1, default=json_default)
            handle.write("\n")
        outputs.append("skipped.json")
    resolved = {
        "estimation_window_days": config.estimation_window,
        "exposures": list(config.exposures),
        "tolerance": config.tolerance,
        "methods": [asdict(m) for m in config.methods],
        "mode": args.mode,
    }
    _write_manifest(
        out, "backtest", resolved, [args.returns, args.membership, args.config],
        outputs, None, time.monotonic() - started,
    )
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"spoet: error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"spoet: data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, scipy.linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        print(f"spoet: numeric error: {exc}", file=sys.stderr)
        return 4
    except SpoetError as exc:
        print(f"spoet: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
