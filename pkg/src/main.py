import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.config.settings import DATA_DIR, settings
from src.thermal import convergence, mimo, siso, simulator, trajectory
from src.thermal.errors import ThermalError
from src.thermal.model import LeakageParams, ThermalModel, load_model, to_celsius, to_kelvin
from src.utils.console import setup_logging
from src.utils.io import atomic_write_text, write_csv, write_json
from src.utils.telemetry import setup_telemetry, traced

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ANALYSIS = 2

SCENARIO_DIR = DATA_DIR / "scenarios"


def _write_table(out: Path, stem: str, frame: pd.DataFrame, fmt: str) -> Path:
    if fmt == "json":
        return write_json(out / f"{stem}.json", frame.to_dict(orient="records"))
    return write_csv(out / f"{stem}.csv", frame)


def _load(args) -> ThermalModel:
    return load_model(args.model)


def _pc_vector(values: List[str], model: ThermalModel) -> np.ndarray:
    """P_C from either M plain numbers or name=value pairs."""
    p_c = np.zeros(model.n_resources)
    if all("=" in v for v in values):
        for item in values:
            name, value = item.split("=", 1)
            p_c[model.resource_index(name)] = float(value)
        return p_c
    if len(values) != model.n_resources:
        raise argparse.ArgumentTypeError(
            f"--pc needs {model.n_resources} values ({', '.join(model.resource_names)}), got {len(values)}"
        )
    return np.array([float(v) for v in values])


def cmd_analyze_siso(args) -> Tuple[Path, Optional[str]]:
    if args.hotspot is not None:
        model = _load(args)
        params = siso.reduce_hotspot(model, model.hotspot_index(args.hotspot), _pc_vector(args.pc_vector, model))
    else:
        missing = [f for f in ("a", "b", "pc", "kappa1", "kappa2") if getattr(args, f) is None]
        if missing:
            raise argparse.ArgumentTypeError(f"missing {', '.join('--' + m for m in missing)} (or use --hotspot)")
        params = siso.SisoParams(
            a=args.a, b=args.b, p_c=args.pc,
            leakage=LeakageParams(args.V, args.kappa1, args.kappa2, driving_hotspot=0),
        )
    fixed_points = siso.analyze(params)
    report = {
        "params": {"a": params.a, "b": params.b, "p_c": params.p_c, "V": params.leakage.voltage,
                   "kappa1": params.leakage.kappa1, "kappa2": params.leakage.kappa2},
        "theta_k_per_w": trajectory.thermal_resistance(params.a, params.b),
        "fixed_points": fixed_points.model_dump(mode="json"),
    }
    if fixed_points.t_s is not None:
        report["t_s_celsius"] = to_celsius(fixed_points.t_s)
        report["t_u_celsius"] = to_celsius(fixed_points.t_u)
    failure = None
    if fixed_points.existence is siso.Existence.NO_FIXED_POINT:
        failure = "no fixed point: thermal runaway"
    if args.start_celsius is not None:
        start = siso.to_auxiliary(to_kelvin(args.start_celsius), params.leakage.kappa2)
        verdict = siso.classify_start(start, fixed_points)
        report["start"] = {"celsius": args.start_celsius, "class": verdict.value}
        if verdict is siso.StartClass.RUNAWAY:
            failure = f"start at {args.start_celsius} C runs away"
    if args.samples:
        alpha, beta = params.alpha_beta
        grid, values = siso.sample_f(alpha, beta, args.samples)
        _write_table(args.out, "f_samples", pd.DataFrame({"t_tilde": grid, "F": values}), args.format)
    logger.info(f"SISO: {fixed_points.existence.value}, theta = {report['theta_k_per_w']:.4f} K/W")
    return write_json(args.out / "siso_report.json", report), failure


def cmd_solve(args) -> Tuple[Path, Optional[str]]:
    model = _load(args)
    p_c = _pc_vector(args.pc, model)
    cfg = mimo.NewtonConfig(use_acceleration=not args.plain, seed_from_siso=args.init == "siso")
    solution = mimo.solve(p_c, model, cfg)
    report = solution.model_dump(mode="json")
    report["t_star_celsius"] = [to_celsius(t) for t in solution.t_star]
    report["hotspots"] = list(model.hotspot_names)
    logger.info(f"Fixed point: converged={solution.converged} after {solution.iterations} iterations, "
                f"hottest {to_celsius(solution.hottest):.2f} C")
    failure = None
    if not solution.converged:
        failure = f"Newton did not converge: {solution.message}"
    elif solution.out_of_domain:
        failure = "fixed point outside the model domain"
    return write_json(args.out / "solution.json", report), failure


def cmd_sweep(args) -> Tuple[Path, Optional[str]]:
    model = _load(args)
    fixed = {}
    for item in args.fixed:
        name, value = item.split("=", 1)
        fixed[name] = float(value)
    spec = convergence.SweepSpec(
        cpu_power_range=convergence.PowerRange(min=args.cpu[0], max=args.cpu[1], step=args.cpu[2]),
        gpu_power_range=convergence.PowerRange(min=args.gpu[0], max=args.gpu[1], step=args.gpu[2]),
        fixed_powers=fixed,
        temp_grid_density=args.density or settings.SWEEP_DENSITY,
    )
    result = convergence.sweep(spec, model, workers=args.workers)
    path = _write_table(args.out, "sweep", result.to_frame(), args.format)
    _write_table(args.out, "boundary", convergence.boundary_frame(convergence.boundary_cells(result)), args.format)
    knee = convergence.region_knee(result)
    logger.info(f"Guaranteed region knee: {knee if knee is None else round(knee, 4)} W; "
                f"max Jacobian norm {result.max_jacobian_norm():.4f}")
    return path, None if knee is not None else "empty convergence region"


def cmd_simulate(args) -> Tuple[Path, Optional[str]]:
    model = _load(args)
    if args.scenario:
        result = simulator.run_scenario(simulator.load_scenario(args.scenario), model, simulator.Policy.NONE)
        trace = result.trace
        summary = result.summary.model_dump(mode="json")
    else:
        if not args.pc:
            raise argparse.ArgumentTypeError("simulate needs --scenario or --pc")
        start = model.ambient if args.start_celsius is None else to_kelvin(args.start_celsius)
        trace = trajectory.simulate(model, _pc_vector(args.pc, model), np.full(model.n_hotspots, start),
                                    args.duration)
        summary = {"runaway": trace.runaway, "runaway_time_s": trace.runaway_time,
                   "final_celsius": to_celsius(trace.temps[-1]).tolist()}
    path = _write_table(args.out, "trace", trajectory.trace_to_frame(trace), args.format)
    write_json(args.out / "summary.json", summary)
    return path, "thermal runaway" if trace.runaway else None


def cmd_fit(args) -> Tuple[Path, Optional[str]]:
    trace = trajectory.read_trace(args.trace)
    if args.hotspot.isdigit():
        hotspot = int(args.hotspot)
    elif args.hotspot in trace.hotspot_names:
        hotspot = trace.hotspot_names.index(args.hotspot)
    else:
        raise argparse.ArgumentTypeError(f"unknown hotspot {args.hotspot!r}")
    values = trace.hotspot(hotspot)
    if args.noise_sigma:
        values = values + np.random.default_rng(args.seed).normal(0.0, args.noise_sigma, values.size)
    stride = max(1, int(round(1.0 / (args.rate_hz * trace.sample_period)))) if args.rate_hz else 1
    mask = (trace.times >= args.start_s) & (trace.times <= args.start_s + args.window_s + 1e-9)
    times, values = trace.times[mask][::stride], values[mask][::stride]
    env = trajectory.envelope_values(values, args.envelope)
    fit = trajectory.fit_first_order(times, env)
    report = fit.model_dump(mode="json")
    report["t_fix_celsius"] = to_celsius(fit.t_fix)
    report["threshold_delta_k"] = args.delta
    report["time_to_fixed_point_s"] = trajectory.time_to_fixed_point(fit, args.delta)
    logger.info(f"tau = {fit.tau:.2f} s, T_fix = {report['t_fix_celsius']:.2f} C, rmse = {fit.rmse:.3f} K")
    return write_json(args.out / "fit.json", report), None


def cmd_govern(args) -> Tuple[Path, Optional[str]]:
    model = _load(args)
    scenario = simulator.load_scenario(args.scenario)
    result = simulator.run_scenario(scenario, model, simulator.Policy(args.policy))
    atomic_write_text(args.out / "decisions.jsonl", result.decision_log())
    _write_table(args.out, "trace", trajectory.trace_to_frame(result.trace), args.format)
    _write_table(args.out, "processes", result.summary_frame(), args.format)
    path = write_json(args.out / "summary.json", result.summary.model_dump(mode="json"))
    return path, None


def cmd_bench(args) -> Tuple[Path, Optional[str]]:
    model = _load(args)
    lo, _, hi = args.iters.partition("..")
    min_k, max_k = int(lo or 1), int(hi or lo)
    if not 1 <= min_k <= max_k:
        raise argparse.ArgumentTypeError(f"--iters must be a range 1 <= MIN..MAX, got {args.iters!r}")
    p_c = _pc_vector(args.pc, model) if args.pc else np.full(model.n_resources, 0.5)
    rows = mimo.benchmark_steps(model, p_c, max_iterations=max_k, repeats=args.repeats, warmup=args.warmup)
    frame = pd.DataFrame([r.model_dump() for r in rows])
    frame = frame[frame["iterations"] >= min_k]
    six = frame[frame["iterations"] == min(max(6, min_k), max_k)].iloc[0]
    logger.info(f"Speed-up at {int(six['iterations'])} iterations: {six['plain_ns'] / six['accelerated_ns']:.2f}x")
    return _write_table(args.out, "bench", frame, args.format), None


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", type=Path, default=settings.DEFAULT_MODEL_PATH, help="Model file (JSON)")
    common.add_argument("--out", type=Path, default=Path("out"), help="Output directory")
    common.add_argument("--seed", type=int, default=0, help="Seed for every random draw")
    common.add_argument("--format", choices=["csv", "json"], default="csv", help="Format of tabular outputs")
    common.add_argument("--expect-stable", action="store_true",
                        help="Exit with status 2 when the analysis reports runaway or non-convergence")
    common.add_argument("--log-level", default=None, help="Override LOG_LEVEL")
    return common


REPRODUCES = {
    "analyze-siso": ("Reproduces the single-hotspot result: either two fixed points or none, "
                     "with the hotter unstable one separating runaway from convergence."),
    "solve-fixed-point": ("Reproduces the coupled steady-state prediction the governor acts on, "
                          "by plain or low-rank accelerated Newton."),
    "sweep-convergence": ("Reproduces the map of CPU/GPU power where convergence to an in-range fixed point "
                          "is guaranteed, and its total-power knee."),
    "simulate": "Reproduces transient heat-up and cool-down traces of the nonlinear state-space model.",
    "fit": "Reproduces the first-order envelope fit and its time-to-fixed-point estimate.",
    "govern": "Reproduces the predictive migration governor against reactive frequency throttling.",
    "bench-newton": "Reproduces the cost of plain against accelerated Newton steps per iteration count.",
}


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="thermofix",
        description="Power-temperature fixed points, convergence regions and thermal governors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze-siso", parents=[common], description=REPRODUCES["analyze-siso"],
                       help="Closed-form single-hotspot fixed-point existence, location and stability")
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--pc", type=float, help="Temperature-independent power (W)")
    p.add_argument("--V", type=float, default=1.0)
    p.add_argument("--kappa1", type=float)
    p.add_argument("--kappa2", type=float, help="Leakage exponent constant (K, negative)")
    p.add_argument("--hotspot", help="Reduce this hotspot of --model instead of giving a, b, ... directly")
    p.add_argument("--pc-vector", nargs="+", default=[], help="P_C per resource when reducing a model hotspot")
    p.add_argument("--start-celsius", type=float, help="Classify the basin of this start temperature")
    p.add_argument("--samples", type=int, default=0, help="Also write F sampled at this many points")
    p.set_defaults(handler=cmd_analyze_siso)

    p = sub.add_parser("solve-fixed-point", parents=[common], description=REPRODUCES["solve-fixed-point"],
                       help="Steady-state temperatures of the coupled model by Newton's method")
    p.add_argument("--pc", nargs="+", required=True, help="P_C per resource: M numbers or name=value pairs")
    variant = p.add_mutually_exclusive_group()
    variant.add_argument("--plain", action="store_true", help="Dense Jacobian solve")
    variant.add_argument("--accelerated", action="store_true", help="Low-rank accelerated solve (default)")
    p.add_argument("--init", choices=["siso", "ambient"], default="siso", help="Initial point of the iteration")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("sweep-convergence", parents=[common], description=REPRODUCES["sweep-convergence"],
                       help="Region of CPU/GPU power with guaranteed Newton convergence in the domain")
    p.add_argument("--cpu", nargs=3, type=float, default=[0.0024, 4.0, 0.1], metavar=("MIN", "MAX", "STEP"))
    p.add_argument("--gpu", nargs=3, type=float, default=[0.0024, 4.0, 0.1], metavar=("MIN", "MAX", "STEP"))
    p.add_argument("--fixed", nargs="*", default=["little=0.1", "mem=0.2"], help="name=value powers held fixed")
    p.add_argument("--density", type=int, help="Temperature grid points per leakage axis")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("simulate", parents=[common], description=REPRODUCES["simulate"],
                       help="Simulate the nonlinear dynamics over time")
    p.add_argument("--scenario", type=Path, help="Scenario file; runs without a governor")
    p.add_argument("--pc", nargs="+", help="Constant P_C per resource")
    p.add_argument("--duration", type=float, default=600.0, help="Seconds")
    p.add_argument("--start-celsius", type=float)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], description=REPRODUCES["fit"],
                       help="First-order fit of a trace envelope and time to reach the fixed point")
    p.add_argument("--trace", type=Path, required=True, help="Trace CSV written by simulate or govern")
    p.add_argument("--hotspot", default="0")
    p.add_argument("--start-s", type=float, default=0.0)
    p.add_argument("--window-s", type=float, default=settings.FIT_WINDOW_S)
    p.add_argument("--rate-hz", type=float, help="Downsample to this rate before fitting")
    p.add_argument("--envelope", type=int, default=settings.ENVELOPE_WINDOW, help="Envelope window in samples")
    p.add_argument("--delta", type=float, default=settings.ARRIVAL_DELTA_K, help="Arrival threshold (K)")
    p.add_argument("--noise-sigma", type=float, default=0.0, help="Gaussian sensor noise added before fitting (K)")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("govern", parents=[common], description=REPRODUCES["govern"],
                       help="Run a workload scenario under a thermal management policy")
    p.add_argument("--scenario", type=Path, default=SCENARIO_DIR / "benchmark.json")
    p.add_argument("--policy", choices=[p.value for p in simulator.Policy], default="predictive")
    p.set_defaults(handler=cmd_govern)

    p = sub.add_parser("bench-newton", parents=[common], description=REPRODUCES["bench-newton"],
                       help="Time plain and accelerated Newton steps over 1..K iterations")
    p.add_argument("--iters", default="1..10", help="Iteration range, e.g. 1..10")
    p.add_argument("--pc", nargs="+")
    p.add_argument("--repeats", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=100)
    p.set_defaults(handler=cmd_bench)
    return parser


def _manifest(args, argv: List[str]) -> dict:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "handler"}
    return {"command": args.command, "argv": list(argv), "config": config}


def _error_line(code: str, message: str, **extra) -> None:
    sys.stderr.write(json.dumps({"error": code, "message": message, **extra}, sort_keys=True) + "\n")


def run(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if e.code in (0, None):
            return EXIT_OK
        _error_line("usage", "invalid command line")
        return EXIT_USAGE

    setup_logging(args.log_level or settings.LOG_LEVEL)
    try:
        setup_telemetry()
    except Exception as e:
        logger.warning(f"Failed to setup telemetry: {e}. Continuing without telemetry.")

    try:
        with traced(args.command, command=args.command) as span:
            write_json(args.out / "manifest.json", _manifest(args, argv))
            report, failure = args.handler(args)
            if span is not None:
                span.set_attribute("report", str(report))
                span.set_attribute("failed", failure is not None)
    except argparse.ArgumentTypeError as e:
        _error_line("usage", str(e))
        return EXIT_USAGE
    except ThermalError as e:
        logger.error(f"{args.command} failed: {e}")
        _error_line(e.code, str(e), **{k: v for k, v in e.to_dict().items() if k not in ("error", "message")})
        return EXIT_USAGE
    except (ValidationError, ValueError, KeyError, IndexError, FileNotFoundError) as e:
        logger.error(f"{args.command} failed: {e}")
        _error_line("invalid_input", str(e))
        return EXIT_USAGE

    print(report)
    if failure and args.expect_stable:
        logger.error(f"{args.command}: {failure}")
        _error_line("analysis_failure", failure, report=str(report))
        return EXIT_ANALYSIS
    if failure:
        logger.warning(f"{args.command}: {failure}")
    return EXIT_OK


def main():
    return run()


if __name__ == "__main__":
    exit(main())
