"""Command-line surface: synthesis, gamma search, norms, simulation, reporting.

Configuration comes from an optional JSON file plus flag overrides (flags
win).  Output files are written atomically (temp file, then rename), so an
invalid run never leaves partial files.  Exit codes: 0 success, 2 config
error, 3 synthesis infeasible, 4 simulation diverged.

Angles cross this boundary in degrees (matching operator convention); the
library itself is radians-only.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import care_solver, controller, simulator, vehicle_model
from .actuators_sensors import (
    GYRO_DAMPING_TERM,
    GYRO_NATURAL_FREQ,
    SERVO_TIME_CONSTANT,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DIVERGED = 4

OUT_DIR_ENV = "HINF_AUTOPILOT_OUT"


class ConfigError(ValueError):
    """Invalid configuration file or flag combination."""


def _fail(code: str, message: str, status: int) -> int:
    sys.stderr.write(f"error={code}: {message}\n")
    return status


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_json(path: str, payload) -> None:
    _atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def _complex_list(values) -> list:
    return [[float(v.real), float(v.imag)] for v in np.asarray(values).ravel()]


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as handle:
            config = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return config


_WEIGHT_NAMES = {
    "measurement": controller.MEASUREMENT_WEIGHT,
    "identity": np.eye(3),
}

_PRIMITIVES = {
    "step": lambda d: simulator.Step(t0=float(d["t0"]), amplitude=float(d["amplitude"])),
    "sine": lambda d: simulator.Sine(
        amplitude=float(d["amplitude"]),
        frequency=float(d["frequency"]),
        phase=float(d.get("phase", 0.0)),
    ),
    "ramp": lambda d: simulator.Ramp(t0=float(d["t0"]), slope=float(d["slope"])),
    "noise": lambda d: simulator.Noise(
        amplitude=float(d["amplitude"]),
        seed=int(d["seed"]),
        hold=float(d.get("hold", simulator.DEFAULT_DT)),
    ),
}


def _parse_weight(spec) -> np.ndarray:
    if isinstance(spec, str):
        try:
            return _WEIGHT_NAMES[spec].copy()
        except KeyError:
            raise ConfigError(
                f"unknown weighting {spec!r}; use one of {sorted(_WEIGHT_NAMES)}"
            ) from None
    try:
        weight = np.atleast_2d(np.asarray(spec, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid weighting matrix: {exc}") from exc
    if weight.shape[1] != 3:
        raise ConfigError("weighting matrix must have 3 columns")
    return weight


def _parse_disturbances(spec, seed_override: int | None) -> simulator.DisturbanceSpec:
    if spec is None:
        return simulator.default_disturbance()
    if not isinstance(spec, dict):
        raise ConfigError("disturbances must be an object with channel1/channel2 lists")
    channels = []
    for name in ("channel1", "channel2"):
        prims = []
        for item in spec.get(name, []):
            kind = item.get("type")
            if kind not in _PRIMITIVES:
                raise ConfigError(f"unknown disturbance primitive type {kind!r}")
            try:
                prim = _PRIMITIVES[kind](item)
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad {kind} primitive in {name}: {exc}") from exc
            if isinstance(prim, simulator.Noise) and seed_override is not None:
                prim = simulator.Noise(
                    amplitude=prim.amplitude, seed=seed_override, hold=prim.hold
                )
            prims.append(prim)
        channels.append(tuple(prims))
    return simulator.DisturbanceSpec(channel1=channels[0], channel2=channels[1])


def _design_from_config(config: dict, args) -> controller.DesignPoint:
    design_cfg = dict(config.get("design", {}))
    t_design = args.design_time if args.design_time is not None else design_cfg.get("t")
    gamma = args.gamma if args.gamma is not None else design_cfg.get("gamma")
    weight = _parse_weight(design_cfg.get("weight", "measurement"))

    if t_design is None and gamma is None:
        return controller.design_point_t100(C_perf=weight)
    if t_design is None or gamma is None:
        raise ConfigError("design time and gamma must be given together")
    t_design = float(t_design)
    gamma = float(gamma)
    if gamma <= 0.0:
        raise ConfigError(f"gamma must be positive, got {gamma}")

    schedule = _schedule_from_config(config)
    coeffs = vehicle_model.coefficients_at(schedule, t_design)
    return controller.DesignPoint(
        t_design=t_design, gamma=gamma, coeffs=coeffs, C_perf=weight
    )


def _schedule_from_config(config: dict) -> vehicle_model.CoefficientSchedule:
    path = config.get("schedule_csv")
    if path is None:
        return vehicle_model.default_schedule()
    try:
        return vehicle_model.load_coefficient_schedule(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"schedule CSV: {exc}") from exc


def _profile_from_config(config: dict) -> vehicle_model.CommandProfile:
    path = config.get("profile_csv")
    if path is None:
        return vehicle_model.default_command_profile()
    try:
        return vehicle_model.load_command_profile(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"profile CSV: {exc}") from exc


def _scenario_from_config(config: dict, args) -> simulator.Scenario:
    name = config.get("scenario")
    overrides: dict = {}
    if config.get("t_span") is not None:
        span = config["t_span"]
        if not (isinstance(span, (list, tuple)) and len(span) == 2):
            raise ConfigError("t_span must be a [t0, tf] pair")
        overrides["t_span"] = (float(span[0]), float(span[1]))
    if args.dt is not None:
        overrides["dt"] = args.dt
    elif config.get("dt") is not None:
        overrides["dt"] = float(config["dt"])

    feedback = args.feedback or config.get("feedback")
    if feedback is not None:
        mapping = {"true": "true_state", "gyro": "gyro_rate"}
        if feedback not in mapping:
            raise ConfigError(f"feedback must be 'true' or 'gyro', got {feedback!r}")
        overrides["feedback_source"] = mapping[feedback]

    plant_mode = args.plant_mode or config.get("plant_mode")
    if plant_mode is not None:
        mapping = {"ltv": "ltv", "lti": "lti_frozen", "lti_frozen": "lti_frozen"}
        if plant_mode not in mapping:
            raise ConfigError(f"plant mode must be 'ltv' or 'lti', got {plant_mode!r}")
        overrides["plant_mode"] = mapping[plant_mode]

    overrides["schedule"] = _schedule_from_config(config)
    overrides["profile"] = _profile_from_config(config)
    if "disturbances" in config or args.seed is not None:
        overrides["disturbances"] = _parse_disturbances(
            config.get("disturbances"), args.seed
        )

    if name is not None:
        factory = simulator.BUILTIN_SCENARIOS.get(name)
        if factory is None:
            raise ConfigError(
                f"unknown scenario {name!r}; use one of {sorted(simulator.BUILTIN_SCENARIOS)}"
            )
        if args.gamma is not None or args.design_time is not None or "design" in config:
            overrides["design"] = _design_from_config(config, args)
        try:
            return factory(**overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    overrides["design"] = _design_from_config(config, args)
    if "disturbances" not in overrides:
        overrides["disturbances"] = simulator.DisturbanceSpec()
    try:
        return simulator.Scenario(**overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _builtin_system(name: str) -> care_solver.StateSpace:
    if name == "gyro":
        wn2 = GYRO_NATURAL_FREQ**2
        return care_solver.StateSpace(
            A=np.array([[0.0, 1.0], [-wn2, -GYRO_DAMPING_TERM]]),
            B_in=np.array([[0.0], [wn2]]),
            C_out=np.array([[1.0, 0.0]]),
            D_ff=np.array([[0.0]]),
        )
    if name == "servo":
        pole = 1.0 / SERVO_TIME_CONSTANT
        return care_solver.StateSpace(
            A=np.array([[-pole]]),
            B_in=np.array([[pole]]),
            C_out=np.array([[1.0]]),
            D_ff=np.array([[0.0]]),
        )
    raise ConfigError(f"unknown built-in model {name!r}; use 'gyro' or 'servo'")


def _system_from_config(config: dict, args) -> care_solver.StateSpace:
    if args.model is not None:
        return _builtin_system(args.model)
    system = config.get("system")
    if system is None:
        raise ConfigError("norm needs --model gyro|servo or a config 'system' entry")
    try:
        return care_solver.StateSpace(
            A=system["A"], B_in=system["B"], C_out=system["C"], D_ff=system["D"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad system matrices: {exc}") from exc


def _out_dir(args) -> str:
    out = args.out or os.environ.get(OUT_DIR_ENV) or "out"
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_synthesize(args) -> int:
    config = _load_config(args.config)
    design = _design_from_config(config, args)
    out = _out_dir(args)
    solution, gain = controller.synthesize(design)
    payload = {
        "t_design": design.t_design,
        "gamma": solution.gamma,
        "C_perf": design.C_perf.tolist(),
        "X": solution.X.tolist(),
        "K": gain.K.tolist(),
        "closed_loop_eigs": _complex_list(solution.closed_loop_eigs),
        "worst_case_eigs": _complex_list(solution.worst_case_eigs),
        "riccati_residual": solution.residual,
        "warnings": list(solution.warnings),
    }
    path = os.path.join(out, "synthesis.json")
    _atomic_write_json(path, payload)
    print(f"wrote {path}")
    print(f"K = {np.array2string(gain.K[0], precision=6)}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    config = _load_config(args.config)
    scenario = _scenario_from_config(config, args)
    out = _out_dir(args)
    trace, metrics = simulator.simulate(scenario)

    trace_path = os.path.join(out, "trace.csv")
    fd, tmp = tempfile.mkstemp(dir=out, prefix=".tmp-", suffix=".part")
    os.close(fd)
    try:
        simulator.write_trace_csv(trace, tmp)
        os.replace(tmp, trace_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    metrics_path = os.path.join(out, "metrics.json")
    _atomic_write_json(metrics_path, simulator.metrics_to_dict(metrics))
    print(f"wrote {trace_path}")
    print(f"wrote {metrics_path}")
    print(json.dumps(simulator.metrics_to_dict(metrics), indent=2))
    return EXIT_OK


def _cmd_norm(args) -> int:
    config = _load_config(args.config)
    system = _system_from_config(config, args)
    tol = args.tol if args.tol is not None else float(config.get("tol", 1e-6))
    if tol <= 0.0:
        raise ConfigError("tol must be positive")
    value = care_solver.hinf_norm(system, tol=tol)
    print(f"hinf_norm = {value!r}")
    return EXIT_OK


def _cmd_gamma_search(args) -> int:
    config = _load_config(args.config)
    design = _design_from_config(config, args)
    plant = vehicle_model.assemble_pitch_plant(design.coeffs)
    bracket = args.bracket or config.get("gamma_bracket") or (1e-3, 1e6)
    if len(bracket) != 2:
        raise ConfigError("gamma bracket must be [lo, hi]")
    lo, hi = float(bracket[0]), float(bracket[1])
    tol = args.tol if args.tol is not None else float(config.get("tol", 1e-6))

    history: list[tuple[float, bool]] = []

    def probe(gamma: float) -> bool:
        try:
            care_solver.solve_care(
                care_solver.CareProblem(
                    A=plant.A, B=plant.B, B_w=plant.B_w, C=design.C_perf, gamma=gamma
                )
            )
        except (care_solver.NoStabilizingSolution, care_solver.IndefiniteSolution):
            history.append((gamma, False))
            return False
        history.append((gamma, True))
        return True

    if not probe(hi):
        raise care_solver.BracketInvalid(f"upper bracket end gamma={hi} is infeasible")
    if probe(lo):
        gamma_min = lo
    else:
        while (hi - lo) > tol * hi:
            mid = 0.5 * (lo + hi)
            if probe(mid):
                hi = mid
            else:
                lo = mid
        gamma_min = hi

    print("bisection history (gamma, feasible):")
    for gamma, ok in history:
        print(f"  {gamma:.9g}  {'feasible' if ok else 'infeasible'}")
    print(f"gamma_min = {gamma_min!r}")
    return EXIT_OK


def _format_matrix(mat: np.ndarray, indent: str = "    ") -> str:
    rows = []
    for row in np.atleast_2d(mat):
        rows.append(indent + "  ".join(f"{v: 9.4f}" for v in row))
    return "\n".join(rows)


def _cmd_reproduce_paper(args) -> int:
    out_lines: list[str] = []

    def emit(line: str = "") -> None:
        out_lines.append(line)

    fixtures = [
        (
            "t = 60 s design point (gamma = 20, frozen-plant experiment)",
            controller.design_point_t60(),
            controller.REFERENCE_X_T60,
            controller.REFERENCE_GAIN_T60,
        ),
        (
            "t = 100 s design point (gamma = 7.8, time-varying experiment)",
            controller.design_point_t100(),
            controller.REFERENCE_X_T100,
            None,
        ),
    ]
    emit("Reproduction report: published solution data vs this implementation")
    emit("=" * 68)
    for title, design, x_ref, k_ref in fixtures:
        plant = vehicle_model.assemble_pitch_plant(design.coeffs)
        solution, gain = controller.synthesize(design)
        k_from_ref = controller.gain_from_solution(plant.B, x_ref).K[0]
        emit()
        emit(title)
        emit("  published X:")
        emit(_format_matrix(x_ref))
        emit("  computed X (weighting = measured output [0 1 0]):")
        emit(_format_matrix(solution.X))
        emit("  max elementwise |difference|: "
             f"{float(np.abs(solution.X - x_ref).max()):.4f}")
        emit("  gain from the published X (pure product B'X): "
             + "  ".join(f"{v:.4f}" for v in k_from_ref))
        if k_ref is not None:
            emit("  published gain:                              "
                 + "  ".join(f"{v:.4f}" for v in k_ref))
            emit("  max gain deviation: "
                 f"{float(np.abs(k_from_ref - k_ref).max()):.2e}")
        emit("  computed gain (this weighting): "
             + "  ".join(f"{v:.4f}" for v in gain.K[0]))
        _, implied_res = controller.implied_state_weight(
            plant.A, plant.B, plant.B_w, design.gamma, x_ref
        )
        best = controller.calibrate_state_weight(
            plant.A, plant.B, plant.B_w, design.gamma, x_ref
        )[0]
        emit(f"  published-X equation residual: best candidate weighting "
             f"{best.label} -> {best.residual:.4f}; PSD-projection floor -> "
             f"{implied_res:.2e}")
    emit()
    emit("The published X matrices are consistent only with a full (non-")
    emit("diagonal) state weighting that differs between the two design")
    emit("points and sits at the feasibility boundary, so they cannot be")
    emit("regenerated by re-solving the equation; the gain identity B'X is")
    emit("reproduced to print precision above.")

    emit()
    emit("Scenario comparison (default command and placeholder disturbances)")
    emit("-" * 68)
    rows = []
    for name in ("paper-ltv", "paper-lti"):
        overrides = {} if args.dt is None else {"dt": args.dt}
        scenario = simulator.BUILTIN_SCENARIOS[name](**overrides)
        _, metrics = simulator.simulate(scenario)
        rows.append((name, metrics))
    emit(f"{'metric':<28}" + "".join(f"{name:>18}" for name, _ in rows))
    for key in (
        "rms_e",
        "max_abs_e",
        "rms_theta_err",
        "max_abs_delta",
        "servo_saturation_fraction",
        "energy_ratio",
    ):
        emit(
            f"{key:<28}"
            + "".join(f"{simulator.metrics_to_dict(m)[key]:>18.6g}" for _, m in rows)
        )
    ltv_rms = simulator.metrics_to_dict(rows[0][1])["rms_e"]
    lti_rms = simulator.metrics_to_dict(rows[1][1])["rms_e"]
    emit()
    emit(
        "Qualitative comparison (inspection only; the published disturbance "
        "data is not recoverable): "
        + (
            "the time-varying-plant run tracks better than the frozen-plant run "
            if ltv_rms < lti_rms
            else "the frozen-plant run tracks better than the time-varying-plant run "
        )
        + f"on these placeholder disturbances (rms_e {ltv_rms:.3e} vs {lti_rms:.3e})."
    )

    print("\n".join(out_lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hinf-autopilot",
        description=(
            "Robust pitch-channel autopilot toolbox: Riccati-based "
            "state-feedback synthesis, attenuation-level search, "
            "H-infinity norms, and closed-loop simulation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV} or ./out)")
        p.add_argument("--gamma", type=float, help="attenuation level")
        p.add_argument(
            "--design-time", type=float, help="design time on the coefficient schedule (s)"
        )
        p.add_argument("--plant-mode", choices=["ltv", "lti"], help="plant evaluation mode")
        p.add_argument(
            "--feedback", choices=["true", "gyro"], help="rate feedback source"
        )
        p.add_argument("--dt", type=float, help="integration step (s, <= 1e-3)")
        p.add_argument("--seed", type=int, help="override noise seeds")

    p = sub.add_parser("synthesize", help="solve the design point and write gain/X JSON")
    add_common(p)
    p.set_defaults(func=_cmd_synthesize)

    p = sub.add_parser("simulate", help="run a scenario; write trace CSV and metrics JSON")
    add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("norm", help="H-infinity norm of a built-in or configured system")
    add_common(p)
    p.add_argument("--model", choices=["gyro", "servo"], help="built-in model")
    p.add_argument("--tol", type=float, help="relative tolerance (default 1e-6)")
    p.set_defaults(func=_cmd_norm)

    p = sub.add_parser("gamma-search", help="bisect the attenuation level to feasibility")
    add_common(p)
    p.add_argument(
        "--bracket", type=float, nargs=2, metavar=("LO", "HI"), help="search bracket"
    )
    p.add_argument("--tol", type=float, help="relative tolerance (default 1e-6)")
    p.set_defaults(func=_cmd_gamma_search)

    p = sub.add_parser(
        "reproduce-paper",
        help="compare computed X/K with the published values and run both scenarios",
    )
    add_common(p)
    p.set_defaults(func=_cmd_reproduce_paper)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        care_solver.NoStabilizingSolution,
        care_solver.IndefiniteSolution,
        care_solver.BracketInvalid,
        controller.ClosedLoopUnstable,
        simulator.SynthesisFailed,
    ) as exc:
        return _fail("synthesis-infeasible", str(exc), EXIT_INFEASIBLE)
    except simulator.NonFiniteState as exc:
        return _fail("simulation-diverged", str(exc), EXIT_DIVERGED)
    except ConfigError as exc:
        return _fail("config-error", str(exc), EXIT_CONFIG)
    except (OSError, ValueError) as exc:
        return _fail("config-error", str(exc), EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())
