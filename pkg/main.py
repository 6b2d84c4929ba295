from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
import pandas as pd

from app import __version__
from app.config import ExperimentConfig, load_experiment_config
from app.dynamics import hydrograph_conv, hydrograph_exp
from app.invariant import TransformEvaluator, check_density, density_profile, zakian_gate
from app.logging_config import setup_logging
from app.moments import exp_tail_rate, moment_table, pareto_tail
from app.network import (
    HydraulicParams,
    RiverNetwork,
    horton_orders,
    non_binary_links,
    parse_network_with_params,
    random_hydraulics,
)
from app.persistence import append_run_record, config_hash, provenance_header, write_csv
from app.rainfall import Exponential, Pareto, RainfallModel, check_invariance_condition, parse_rain_config
from app.simulation import invariant_mean, sample_path, simulate, storm_flags, volume_balance
from app.streams import StormStreams, stream
from app.units import hours_to_seconds, m3s_to_lps, per_second_to_per_hour, seconds_to_hours

logger = logging.getLogger(__name__)

# H_e/K_e outside this band is unusual for real basins.
RATIO_RANGE = (1.0e-3, 1.0e0)


@dataclass(slots=True)
class RunInputs:
    config: ExperimentConfig
    net: RiverNetwork
    params: HydraulicParams
    rain: RainfallModel
    network_text: str
    rain_text: str


@dataclass(slots=True)
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    edges: int = 0

    @property
    def ok(self) -> bool:
        return not self.errors

    def lines(self) -> list[str]:
        out = [f"error: {msg}" for msg in self.errors] + [f"warning: {msg}" for msg in self.warnings]
        out.append("OK" if self.ok else "FAILED")
        return out


def _read(path: Optional[Path], what: str) -> str:
    if path is None:
        raise ValueError(f"no {what} file given; pass --{what} or set it in the config")
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"cannot read {what} file {path}: {exc}") from exc


def load_inputs(config: ExperimentConfig) -> RunInputs:
    network_text = _read(config.network_path, "network")
    rain_text = _read(config.rain_path, "rain")
    net, params = parse_network_with_params(network_text)
    rain = parse_rain_config(rain_text)
    return RunInputs(config, net, params, rain, network_text, rain_text)


def select_edges(net: RiverNetwork, requested: Sequence[str], default_all: bool = False) -> list[int]:
    if not requested:
        return list(range(net.n)) if default_all else [0]
    if list(requested) == ["all"]:
        return list(range(net.n))
    try:
        return [net.index_of(edge_id) for edge_id in requested]
    except KeyError as exc:
        raise ValueError(exc.args[0]) from exc


def _digest(inputs: RunInputs, command: str, options: dict[str, Any]) -> str:
    return config_hash(inputs.network_text, inputs.rain_text, command, options)


def _parallel(config: ExperimentConfig, func: Callable[[Any], Any], items: Sequence[Any]) -> list[Any]:
    if config.workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(func, items))


def _emit(inputs: RunInputs, command: str, frame: pd.DataFrame, options: dict[str, Any]) -> Path:
    config = inputs.config
    digest = _digest(inputs, command, options)
    header = provenance_header(command, config.seed, digest, {"units": options.get("units", "SI")})
    return write_csv(config.out_dir / f"{command}.csv", frame, header)


def cmd_validate(config: ExperimentConfig) -> ValidationReport:
    report = ValidationReport()
    net = params = rain = None
    try:
        net, params = parse_network_with_params(_read(config.network_path, "network"))
        report.edges = net.n
    except ValueError as exc:
        report.errors.append(f"network: {exc}")
    try:
        rain = parse_rain_config(_read(config.rain_path, "rain"))
    except ValueError as exc:
        report.errors.append(f"rain: {exc}")

    if net is not None and params is not None:
        for index in non_binary_links(net):
            report.warnings.append(f"edge {net.edges[index].id!r} has a single tributary")
        ratio = params.H / params.K
        for index, value in enumerate(ratio):
            if not RATIO_RANGE[0] <= value <= RATIO_RANGE[1]:
                report.warnings.append(
                    f"edge {net.edges[index].id!r} has H/K = {value:.3g}, outside the usual "
                    f"{RATIO_RANGE[0]:g}..{RATIO_RANGE[1]:g}"
                )
        if rain is not None:
            try:
                if not check_invariance_condition(net, params, rain):
                    report.errors.append("rainfall jumps have no finite logarithmic moment")
            except ValueError as exc:
                report.errors.append(f"rain: {exc}")
    for message in report.warnings:
        logger.warning("Validation warning", extra={"detail": message})
    logger.info("Validation finished", extra={"errors": len(report.errors), "warnings": len(report.warnings)})
    return report


def cmd_simulate(config: ExperimentConfig, x0: str = "mean") -> Path:
    inputs = load_inputs(config)
    net, params, rain = inputs.net, inputs.params, inputs.rain
    edges = select_edges(net, config.edges, default_all=True)
    horizon = hours_to_seconds(config.horizon_hours)
    start = None if x0 == "mean" else np.zeros(2 * net.n)
    step = hours_to_seconds(config.sample_step_hours)
    grid = np.arange(0.0, horizon + 0.5 * step, step)
    grid = grid[grid <= horizon]

    def run(replicate: int) -> pd.DataFrame:
        path = simulate(net, params, rain, horizon, x0=start, streams=StormStreams(config.seed, replicate))
        residual = volume_balance(path)
        if residual > 1.0e-9:
            logger.warning("Volume balance residual", extra={"replicate": replicate, "residual": residual})
        states = sample_path(path, grid)
        columns: dict[str, Any] = {
            "replicate": replicate,
            "t_hours": seconds_to_hours(grid),
            "storm_flag": storm_flags(path, grid),
        }
        for e in edges:
            edge_id = net.edges[e].id
            columns[f"{edge_id}:Q_lps"] = m3s_to_lps(states[:, e])
            columns[f"{edge_id}:R_lps"] = m3s_to_lps(states[:, net.n + e])
        return pd.DataFrame(columns)

    frame = pd.concat(_parallel(config, run, list(range(config.replicates))), ignore_index=True)
    options = {
        "horizon_hours": config.horizon_hours,
        "step_hours": config.sample_step_hours,
        "replicates": config.replicates,
        "x0": x0,
        "edges": [net.edges[e].id for e in edges],
        "units": "hours, L/s",
    }
    return _emit(inputs, "simulate", frame, options)


def _evaluator(inputs: RunInputs, params: Optional[HydraulicParams] = None) -> TransformEvaluator:
    return TransformEvaluator(inputs.net, params or inputs.params, inputs.rain, **inputs.config.quadrature.as_kwargs())


def cmd_density(config: ExperimentConfig) -> Path:
    inputs = load_inputs(config)
    net = inputs.net
    edges = select_edges(net, config.edges)
    zakian_gate(config.inversion.gate_tolerance)
    evaluator = _evaluator(inputs)
    mean = invariant_mean(net, inputs.params, inputs.rain)

    def run(e: int) -> pd.DataFrame:
        x = np.linspace(0.0, config.density_x_max_factor * mean[e], config.density_points)
        density = density_profile(
            evaluator, e, x, method=config.inversion.method, degree=config.inversion.talbot_degree
        )
        mass, ratio = check_density(
            x, density, mean[e], config.density_mass_tolerance, config.density_mean_tolerance
        )
        logger.info("Density normalisation", extra={"edge_id": net.edges[e].id, "mass": mass, "mean_ratio": ratio})
        # Interface units: discharge in L/s, density per L/s.
        return pd.DataFrame(
            {"edge_id": net.edges[e].id, "x_lps": m3s_to_lps(x), "density_per_lps": density / m3s_to_lps(1.0)}
        )

    frame = pd.concat(_parallel(config, run, edges), ignore_index=True)
    options = {
        "points": config.density_points,
        "x_max_factor": config.density_x_max_factor,
        "method": config.inversion.method,
        "quadrature": config.quadrature.as_kwargs(),
        "edges": [net.edges[e].id for e in edges],
        "units": "L/s",
    }
    return _emit(inputs, "density", frame, options)


def cmd_moments(config: ExperimentConfig) -> Path:
    inputs = load_inputs(config)
    net = inputs.net
    edges = select_edges(net, config.edges)

    def run(e: int) -> list[dict]:
        table = moment_table(net, inputs.params, inputs.rain, e, config.moments_n_max, **config.quadrature.as_kwargs())
        return table.rows()

    rows = [row for block in _parallel(config, run, edges) for row in block]
    frame = pd.DataFrame(rows, columns=["edge_id", "n", "moment_si", "c_n"])
    options = {
        "n_max": config.moments_n_max,
        "quadrature": config.quadrature.as_kwargs(),
        "edges": [net.edges[e].id for e in edges],
        "units": "(m3/s)^n",
    }
    return _emit(inputs, "moments", frame, options)


def cmd_tails(config: ExperimentConfig) -> Path:
    inputs = load_inputs(config)
    net, params, rain = inputs.net, inputs.params, inputs.rain
    edges = select_edges(net, config.edges)
    mark = rain.marginal_for(0)
    if not rain.is_uniform or not isinstance(mark, (Exponential, Pareto)):
        raise ValueError("tail asymptotics are available for uniform exponential or Pareto marks only")

    def run(e: int) -> dict:
        if isinstance(mark, Pareto):
            tail = pareto_tail(net, params, rain, e, **config.quadrature.as_kwargs())
            return {"edge_id": tail.edge_id, "model": "pareto", "coefficient_or_rate": tail.coefficient, "exponent": tail.exponent}
        rate = exp_tail_rate(net, params, rain, e)
        return {"edge_id": net.edges[e].id, "model": "exponential", "coefficient_or_rate": rate, "exponent": 1.0}

    frame = pd.DataFrame(_parallel(config, run, edges), columns=["edge_id", "model", "coefficient_or_rate", "exponent"])
    options = {"edges": [net.edges[e].id for e in edges], "quadrature": config.quadrature.as_kwargs(), "units": "SI"}
    return _emit(inputs, "tails", frame, options)


def cmd_hydrograph(config: ExperimentConfig) -> Path:
    inputs = load_inputs(config)
    net, params = inputs.net, inputs.params
    edges = select_edges(net, config.edges, default_all=True)
    t = np.linspace(0.0, hours_to_seconds(config.hydrograph_t_max_hours), config.hydrograph_points)
    theta = hydrograph_exp(net, params, t)
    frames = [
        pd.DataFrame(
            {
                "t_hours": seconds_to_hours(t),
                "edge_id": net.edges[e].id,
                "theta_Q": per_second_to_per_hour(theta[:, e]),
                "theta_R": per_second_to_per_hour(theta[:, net.n + e]),
                "theta_Q_conv": per_second_to_per_hour(hydrograph_conv(net, params, e, t)),
            }
        )
        for e in edges
    ]
    frame = pd.concat(frames, ignore_index=True)
    options = {
        "t_max_hours": config.hydrograph_t_max_hours,
        "points": config.hydrograph_points,
        "edges": [net.edges[e].id for e in edges],
        "units": "hours, 1/h",
    }
    return _emit(inputs, "hydrograph", frame, options)


def cmd_heterogeneity(config: ExperimentConfig) -> Path:
    inputs = load_inputs(config)
    net, rain = inputs.net, inputs.rain
    if not rain.is_uniform or not isinstance(rain.marginal_for(0), Exponential):
        raise ValueError("the heterogeneity experiment needs uniform exponential marks")
    edges = select_edges(net, config.edges, default_all=True)
    params = random_hydraulics(
        net, inputs.params.K, inputs.params.H, config.eps_k, config.eps_h, stream(config.seed, "heterogeneity")
    )
    zakian_gate(config.inversion.gate_tolerance)
    evaluator = _evaluator(inputs, params)
    mean = invariant_mean(net, params, rain)
    orders = horton_orders(net)
    y = np.linspace(0.0, config.heterogeneity_x_max, config.density_points)

    def run(e: int) -> pd.DataFrame:
        density = density_profile(
            evaluator, e, y * mean[e], method=config.inversion.method, degree=config.inversion.talbot_degree
        )
        return pd.DataFrame(
            {
                "edge_id": net.edges[e].id,
                "horton_order": int(orders[e]),
                "normalized_q": y,
                "density": density * mean[e],
            }
        )

    frame = pd.concat(_parallel(config, run, edges), ignore_index=True)
    options = {
        "eps_k": list(config.eps_k),
        "eps_h": list(config.eps_h),
        "x_max": config.heterogeneity_x_max,
        "points": config.density_points,
        "method": config.inversion.method,
        "edges": [net.edges[e].id for e in edges],
        "units": "dimensionless",
    }
    return _emit(inputs, "heterogeneity", frame, options)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--network", type=Path, help="network file (edge <id> <parent|-> <area_km2> <K/h> <H/h>)")
    common.add_argument("--rain", type=Path, help="rainfall block (key=value)")
    common.add_argument("--seed", type=int, help="master seed for every random stream")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--config", type=Path, help="experiment YAML layered over config/experiment.yml")
    common.add_argument("--edges", help="comma-separated edge ids, or 'all'")
    common.add_argument("--workers", type=int, help="thread pool size")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="streamflow", description="Streamflow in river networks under Poisson rainfall.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check network, rainfall and invariance condition")
    simulate_parser = sub.add_parser("simulate", parents=[common], help="exact event-driven sample paths")
    simulate_parser.add_argument("--horizon-hours", type=float)
    simulate_parser.add_argument("--step-hours", type=float)
    simulate_parser.add_argument("--replicates", type=int)
    simulate_parser.add_argument("--x0", choices=("mean", "zero"), default="mean")
    density_parser = sub.add_parser("density", parents=[common], help="invariant density by Laplace inversion")
    density_parser.add_argument("--points", type=int)
    density_parser.add_argument("--method", choices=("zakian", "talbot"))
    moments_parser = sub.add_parser("moments", parents=[common], help="invariant moments 1..n_max")
    moments_parser.add_argument("--n-max", type=int)
    sub.add_parser("tails", parents=[common], help="Pareto tail constant or exponential tail rate")
    hydro_parser = sub.add_parser("hydrograph", parents=[common], help="unit hydrographs in both forms")
    hydro_parser.add_argument("--t-max-hours", type=float)
    hetero_parser = sub.add_parser("heterogeneity", parents=[common], help="normalised densities under random rates")
    hetero_parser.add_argument("--points", type=int)
    hetero_parser.add_argument("--method", choices=("zakian", "talbot"))
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Flag values in the config file's shape; unset flags are left out."""

    def get(name: str) -> Any:
        return getattr(args, name, None)

    overrides: dict[str, Any] = {
        "network": get("network"),
        "rain": get("rain"),
        "seed": get("seed"),
        "out_dir": get("out"),
        "workers": get("workers"),
        "edges": [e.strip() for e in get("edges").split(",") if e.strip()] if get("edges") else None,
        "simulate": {
            "horizon_hours": get("horizon_hours"),
            "sample_step_hours": get("step_hours"),
            "replicates": get("replicates"),
        },
        "density": {"points": get("points")},
        "inversion": {"method": get("method")},
        "moments": {"n_max": get("n_max")},
        "hydrograph": {"t_max_hours": get("t_max_hours")},
    }
    return {k: v for k, v in overrides.items() if v is not None}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        config = load_experiment_config(args.config, _overrides(args))
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    setup_logging(logging.DEBUG if args.verbose else logging.INFO, config.log_dir)

    outputs: list[str] = []
    status = 0
    try:
        if args.command == "validate":
            report = cmd_validate(config)
            for line in report.lines():
                print(line)
            status = 0 if report.ok else 1
        elif args.command == "simulate":
            outputs.append(str(cmd_simulate(config, x0=args.x0)))
        elif args.command == "density":
            outputs.append(str(cmd_density(config)))
        elif args.command == "moments":
            outputs.append(str(cmd_moments(config)))
        elif args.command == "tails":
            outputs.append(str(cmd_tails(config)))
        elif args.command == "hydrograph":
            outputs.append(str(cmd_hydrograph(config)))
        elif args.command == "heterogeneity":
            outputs.append(str(cmd_heterogeneity(config)))
    except (ValueError, RuntimeError) as exc:
        logger.error("Command failed", extra={"command": args.command, "error": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        status = 1

    for path in outputs:
        print(path)
    append_run_record(
        config.out_dir,
        {
            "command": args.command,
            "seed": config.seed,
            "version": __version__,
            "status": status,
            "outputs": outputs,
            "duration_s": round(time.perf_counter() - started, 3),
            "sources": config.sources,
        },
    )
    return status


if __name__ == "__main__":
    sys.exit(main())
