"""Command-line entry point: spectrum, calibrate, compile, simulate.

Every run renders its outputs in memory and writes them only after the
computation succeeded, together with a ``manifest.json`` listing them.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from . import __version__
from .compiler import (CompileError, HardwareConfig, QtmModel, TimModel, compile_qtm, compile_tim,
                       exact_propagator, gate_fidelity, operator_distance, qtm_gates,
                       schedule_unitary)
from .config import RunConfig
from .dynamics import DephasingModel, EnsembleConfig, format_csv
from .experiments import (Setup, delay_grid, run_mq_coherence, run_qtm_simulation, run_rabi,
                          run_t1, run_t2_hahn, run_tim_simulation)
from .fitting import FitError
from .spin import (LabelingError, REFERENCE_FREQUENCIES, SpinSystemParams, build_system,
                   fine_tune_field, simulate_spectrum)

log = logging.getLogger("molqudit")

EXIT_OK, EXIT_CONFIG, EXIT_PHYSICS, EXIT_FIT = 0, 2, 3, 4
PROTOCOLS = ("rabi", "t1", "t2", "mq2", "mq3")


class ConfigError(Exception):
    pass


class PhysicsError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        return RunConfig.from_yaml(text)
    except (yaml.YAMLError, ValidationError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}:\n{exc}") from exc


def spin_params(cfg: RunConfig, magnitude: float) -> SpinSystemParams:
    s = cfg.spin
    n = np.asarray(cfg.field.direction, dtype=float)
    n = n / np.linalg.norm(n)
    return SpinSystemParams(A_par=s.A_par, A_perp=s.A_perp, p=s.p, g_x=s.g_x, g_y=s.g_y,
                            g_z=s.g_z, g_I=s.g_I, B0=tuple(magnitude * n),
                            temperature=s.temperature)


def system_for(cfg: RunConfig, magnitude: float, report: dict | None = None):
    params = spin_params(cfg, magnitude)
    if cfg.field.fine_tune:
        params, freqs = fine_tune_field(params)
        if report is not None:
            report["fine_tuned_field_T"] = params.field_magnitude
            report["fine_tuned_frequencies_MHz"] = list(freqs)
    return build_system(params)


def dephasing_for(cfg: RunConfig, system, with_t1: bool) -> DephasingModel:
    d = cfg.dephasing
    return DephasingModel.from_times(system, (d.t2_single, d.t2_double, d.t2_triple),
                                     d.t1 if with_t1 else None, d.outside_rate)


def ensemble_for(cfg: RunConfig) -> EnsembleConfig:
    d = cfg.dephasing
    return EnsembleConfig(d.sigma_rel, d.samples, d.seed)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


def _fit_dict(res) -> dict:
    out = {"protocol": res.protocol, "target": res.target, "status": "ok" if res.ok else "failed"}
    if res.fit is not None:
        out["fitted"] = res.fitted
        out["time_constant_us"] = res.fit.time_constant
        out["residual_norm"] = res.fit.residual_norm
        if res.fit.frequency is not None:
            out["frequency_MHz"] = res.fit.frequency
    if res.configured is not None:
        out["configured"] = res.configured
        if res.fitted is not None:
            out["relative_error"] = abs(res.fitted - res.configured) / res.configured
    if res.error:
        out["error"] = res.error
    return out


# ---------------------------------------------------------------- subcommands


def cmd_spectrum(cfg: RunConfig, args) -> tuple[dict, int]:
    report: dict = {}
    system = system_for(cfg, cfg.field.spectrum, report)
    T = cfg.spectrum.temperature or cfg.spin.temperature
    curve = simulate_spectrum(system.levels, system.eig, system.params, temperature=T,
                              fwhm=cfg.spectrum.fwhm, step=cfg.spectrum.step)
    spectrum = format_csv(["frequency_MHz", "amplitude"], zip(curve.frequency, curve.amplitude))
    rows = []
    for ln in curve.lines:
        if ln.weight <= 0:
            continue
        rows.append([ln.eta if ln.eta is not None else "", ln.label_lower[0], ln.label_lower[1],
                     ln.label_upper[1], ln.frequency, ln.weight, curve.fwhm])
    if not rows:
        warnings.warn("no line has a positive population difference; peak table is empty")
    peaks = format_csv(["eta", "m_S", "m_I_lower_level", "m_I_upper_level", "frequency_MHz",
                        "weight", "fwhm_MHz"], rows)
    report.update({"field_T": system.params.field_magnitude,
                   "transition_frequencies_MHz": list(system.frequencies),
                   "reference_frequencies_MHz": list(REFERENCE_FREQUENCIES),
                   "temperature_K": T})
    return {"spectrum.csv": spectrum, "peaks.csv": peaks, "spectrum_summary.json": _json(report)}, EXIT_OK


def cmd_calibrate(cfg: RunConfig, args) -> tuple[dict, int]:
    which = PROTOCOLS if args.protocol == "all" else (args.protocol,)
    system = system_for(cfg, cfg.field.calibration)
    b1 = cfg.hardware.b1_calibration
    plain = Setup(system, dephasing_for(cfg, system, False), b1, cfg.hardware.echo_delay)
    with_t1 = Setup(system, dephasing_for(cfg, system, True), b1, cfg.hardware.echo_delay)
    c = cfg.calibration
    d = cfg.dephasing
    files, results = {}, []
    for proto in which:
        if proto == "rabi":
            grid = np.linspace(0.0, c.rabi_max, c.rabi_points)
            ens = ensemble_for(cfg)
            runs = [(f"rabi_f{e}.csv", run_rabi(plain, e, grid, ens)) for e in (1, 2, 3)]
        elif proto == "t1":
            runs = [(f"t1_f{e}.csv", run_t1(with_t1, e, delay_grid(d.t1, c.points, c.span)))
                    for e in (1, 2, 3)]
        elif proto == "t2":
            runs = [(f"t2_f{e}.csv", run_t2_hahn(plain, e, delay_grid(d.t2_single, c.points, c.span) / 2))
                    for e in (1, 2, 3)]
        else:
            order = int(proto[-1])
            T = d.t2_double if order == 2 else d.t2_triple
            runs = [(f"{proto}.csv", run_mq_coherence(plain, order, delay_grid(T, c.points, c.span)))]
        for name, res in runs:
            header = ["x_us", "signal", "fit"]
            model = res.fit.model(res.x) if res.fit else np.full(len(res.x), np.nan)
            files[name] = format_csv(header, zip(res.x, res.signal, model))
            results.append(_fit_dict(res))
    files["calibration_summary.json"] = _json({"results": results, "field_T": system.params.field_magnitude,
                                               "b1_T": b1, "seed": d.seed})
    failed = [r for r in results if r["status"] != "ok"]
    for r in failed:
        log.error("fit failed for %s on %s: %s", r["protocol"], r["target"], r.get("error"))
    return files, EXIT_FIT if failed else EXIT_OK


def _tim_time(cfg: RunConfig, scaled: float) -> float:
    return scaled / (2 * math.pi * cfg.tim.b)


def cmd_compile(cfg: RunConfig, args) -> tuple[dict, int]:
    if args.model == "qtm":
        system = system_for(cfg, cfg.field.qtm)
        hw = HardwareConfig.from_system(system, cfg.hardware.b1_qtm)
        model = QtmModel(cfg.qtm.D, cfg.qtm.E)
        scaled = cfg.qtm.compile_time if args.time is None else args.time
        t = scaled / (2 * math.pi * model.E) if model.E else 0.0
        gates = qtm_gates(model, t)
        sched = compile_qtm(model, t, hw)
        fid = gate_fidelity(schedule_unitary(sched, 3), gates.unitary)
        report = {"model": "qtm", "time_us": t, "scaled_time": scaled}
    else:
        system = system_for(cfg, cfg.field.tim)
        hw = HardwareConfig.from_system(system, cfg.hardware.b1_tim)
        n = args.n or cfg.tim.n
        scaled = cfg.tim.compile_time if args.time is None else args.time
        t = _tim_time(cfg, scaled)
        model = TimModel(cfg.tim.b, cfg.tim.J)
        gates, sched = compile_tim(model, t, n, hw)
        _, free = compile_tim(TimModel(cfg.tim.b, 0.0), t, n, hw)
        fid = gate_fidelity(schedule_unitary(sched, 4), gates.unitary)
        report = {"model": "tim", "time_us": t, "scaled_time": scaled, "trotter_steps": n,
                  "pulse_count_J0": len(free), "pulse_count_per_step": len(sched) / n,
                  "duration_us_J0": free.duration,
                  "trotter_operator_distance": operator_distance(gates.unitary, exact_propagator(model, t))}
    report.update({"pulse_count": len(sched), "duration_us": sched.duration,
                   "parallel_groups": len(sched.groups),
                   "pulses_per_transition": {f"f{e}": sched.count(e) for e in (1, 2, 3)},
                   "frame_phases": list(sched.frame), "unitary_fidelity": fid})
    if fid < 1 - 1e-8:
        raise PhysicsError(f"compiled schedule fidelity {fid} below 1 - 1e-8")
    name = f"schedule_{args.model}.txt"
    return {name: sched.to_text(), f"compile_{args.model}_report.json": _json(report)}, EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> tuple[dict, int]:
    backend = args.backend or cfg.backend
    ens = ensemble_for(cfg)
    summary = {"backend": backend, "seed": cfg.dephasing.seed, "model": args.model}
    files = {}
    if args.model == "qtm":
        system = system_for(cfg, cfg.field.qtm, summary)
        setup = Setup(system, dephasing_for(cfg, system, cfg.dephasing.t1_in_simulations),
                      cfg.hardware.b1_qtm, cfg.hardware.echo_delay)
        model = QtmModel(cfg.qtm.D, cfg.qtm.E)
        t = np.linspace(0.0, cfg.qtm.t_max, cfg.qtm.points)
        run = run_qtm_simulation(setup, model, t, backend, ens)
        nd = run.normalized_delta
        files["fig2d.csv"] = format_csv(["time_us", "scaled_time", "dP1", "dP2"],
                                        zip(t, run.scaled_time, nd[:, 0], nd[:, 1]))
        exact = np.cos(2 * run.scaled_time)
        files["fig2f.csv"] = format_csv(["time_us", "scaled_time", "S_z", "S_z_target"],
                                        zip(t, run.scaled_time, run.observables["S_z"], exact))
        summary.update({"E_MHz": model.E, "D_MHz": model.D, "expected_frequency_MHz": 2 * model.E,
                        "anchor_scale": run.scale})
        if run.fit is not None:
            summary.update({"fitted_frequency_MHz": run.fit.frequency,
                            "fitted_decay_us": run.fit.time_constant})
    else:
        system = system_for(cfg, cfg.field.tim, summary)
        setup = Setup(system, dephasing_for(cfg, system, cfg.dephasing.t1_in_simulations),
                      cfg.hardware.b1_tim, cfg.hardware.echo_delay)
        n = args.n or cfg.tim.n
        bt = np.linspace(0.0, cfg.tim.bt_max, cfg.tim.points)
        runs = {}
        for label, J in (("J0", 0.0), ("J", cfg.tim.J)):
            model = TimModel(cfg.tim.b, J)
            runs[label] = run_tim_simulation(setup, model, n, bt, backend, ens)
            runs[label + "_exact"] = run_tim_simulation(setup, model, n, bt, "exact-target")
        cols, data = ["bt", "time_us"], [bt, runs["J"].times]
        for label in ("J0", "J"):
            for k in range(3):
                cols.append(f"dP{k + 1}_{label}")
                data.append(runs[label].normalized_delta[:, k])
        files["fig3bc.csv"] = format_csv(cols, zip(*data))
        cols, data = ["bt", "time_us"], [bt, runs["J"].times]
        for label in ("J0", "J", "J0_exact", "J_exact"):
            cols += [f"S_z_{label}", f"szsz_{label}"]
            data += [runs[label].observables["S_z"], runs[label].observables["szsz"]]
        files["fig4ab.csv"] = format_csv(cols, zip(*data))
        summary.update({"b_MHz": cfg.tim.b, "J_MHz": cfg.tim.J, "trotter_steps": n,
                        "anchor_scale": runs["J"].scale})
    summary["config_hash"] = cfg.digest()
    files[f"simulate_{args.model}_summary.json"] = _json(summary)
    return files, EXIT_OK


COMMANDS = {"spectrum": cmd_spectrum, "calibrate": cmd_calibrate,
            "compile": cmd_compile, "simulate": cmd_simulate}


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    def common(suppress: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags; SUPPRESS keeps their defaults
        # from overwriting values given before the subcommand
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        c = argparse.ArgumentParser(add_help=False)
        c.add_argument("--config", metavar="PATH", help="YAML run configuration", **kw)
        c.add_argument("--out", metavar="DIR", help="output directory (overrides config)", **kw)
        c.add_argument("--seed", type=int, help="ensemble seed (overrides config)", **kw)
        c.add_argument("--backend", choices=["ideal", "lindblad", "lindblad-ensemble", "exact-target"], **kw)
        c.add_argument("-v", "--verbose", action="store_true", **kw)
        return c

    parser = argparse.ArgumentParser(prog="molqudit", parents=[common(False)],
                                     description="Spin-qudit pulse simulator and compiler.")
    parser.add_argument("--print-default-config", action="store_true",
                        help="print the full default configuration and exit")
    parser.add_argument("--version", action="version", version=f"molqudit {__version__}")
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("spectrum", parents=[common(True)], help="NMR spectrum and peak table")
    p = sub.add_parser("calibrate", parents=[common(True)], help="virtual calibration protocols")
    p.add_argument("protocol", choices=[*PROTOCOLS, "all"])
    for name in ("compile", "simulate"):
        p = sub.add_parser(name, parents=[common(True)], help=f"{name} a target model")
        p.add_argument("model", choices=["qtm", "tim"])
        p.add_argument("--n", type=int, help="Trotter steps for tim (overrides config)")
        if name == "compile":
            p.add_argument("--time", type=float,
                           help="scaled time: 2 pi E t for qtm, 2 pi b t for tim")
    return parser


def write_outputs(out: Path, files: dict, manifest: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)
    (out / "manifest.json").write_text(_json(manifest))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.print_default_config:
        sys.stdout.write(RunConfig().to_yaml())
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "n", None) is not None and args.n < 1:
        parser.error("--n must be at least 1")
    start = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.updated("dephasing", seed=args.seed)
        if args.out is not None:
            cfg = cfg.updated("output", dir=args.out)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        files, code = COMMANDS[args.command](cfg, args)
    except (LabelingError, CompileError, PhysicsError, FitError, ValueError) as exc:
        print(f"physics precondition failed: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    manifest = {"tool": "molqudit", "version": __version__, "subcommand": args.command,
                "arguments": {k: v for k, v in vars(args).items() if k not in ("config", "verbose")},
                "config_hash": cfg.digest(), "wall_clock_s": time.perf_counter() - start,
                "files": sorted(files)}
    write_outputs(Path(cfg.output.dir), files, manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
