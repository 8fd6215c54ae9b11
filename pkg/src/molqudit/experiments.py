"""Virtual experiments on the simulated qudit.

State preparation (pseudo-pure states), the two compiled quantum
simulations with population-difference readout, and the calibration
protocols (nutation, T1, Hahn-echo T2, multiple-quantum T2) with their fits.

All protocols run on the rotating-wave engine in the interaction picture
unless a setup selects the lab-frame engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import dynamics as dyn
from .compiler import (HardwareConfig, QtmModel, TimModel, compile_qtm, compile_tim,
                       exact_propagator)
from .dynamics import DephasingModel, EnsembleConfig, ensemble_average, rotation_pulse
from .fitting import DecayFit, FitError, fit_damped_cosine, fit_exponential
from .schedule import PulseSchedule
from .spin import QuditSystem

TWO_PI = 2 * np.pi
BACKENDS = ("ideal", "lindblad", "lindblad-ensemble", "exact-target")


@dataclass(frozen=True)
class Setup:
    """Hardware the protocols run on.

    ``b1`` is the full drive amplitude in tesla and ``echo_delay`` the
    half-echo delay (us) of the Hahn-echo readout.
    """

    system: QuditSystem
    dephasing: DephasingModel
    b1: float = 5e-4
    echo_delay: float = 1.5
    engine: str = "rwa"

    @property
    def hardware(self) -> HardwareConfig:
        return HardwareConfig.from_system(self.system, self.b1)

    def ideal(self) -> "Setup":
        return replace(self, dephasing=DephasingModel.none(self.system.dim))

    def levels(self, eta: int) -> tuple[int, int]:
        tr = self.system.levels.transition(eta)
        return tr.lower, tr.upper

    def pulse(self, eta: int, angle: float, phase: float = 0.0, t_start: float = 0.0):
        return rotation_pulse(self.system, eta, angle, self.b1, phase, t_start)

    def play(self, rho, pulses, b1_scale: float = 1.0):
        """Play pulses back to back (their own start times are ignored)."""
        t = 0.0
        placed = []
        for p in pulses:
            placed.append(replace(p, t_start=t))
            t += p.duration
        return dyn.play_schedule(rho, PulseSchedule(placed), self.system, self.dephasing,
                                 self.engine, b1_scale)

    def wait(self, rho, tau: float):
        return dyn.free_decay(rho, tau, self.dephasing)


# ---------------------------------------------------------------- readout


@dataclass(frozen=True)
class PopulationReadout:
    """Neighbouring population differences ``P_{eta-1} - P_eta`` for eta = 1..3."""

    delta: tuple[float, ...]
    scale: tuple[float, ...] = (1.0, 1.0, 1.0)
    mode: str = "direct"


def read_populations(rho: np.ndarray, system: QuditSystem, mode: str = "direct",
                     dephasing: DephasingModel | None = None, echo_delay: float = 1.5) -> PopulationReadout:
    """Population differences of the computational levels.

    ``echo`` mode multiplies each difference by the single-quantum decay
    ``exp(-2 tau_e Gamma_eta)`` of a Hahn echo with half-delay ``tau_e``;
    with equal single-quantum rates this is one global factor, removed later
    by anchoring at t = 0.
    """
    c = system.computational
    p = np.real(np.diag(rho))[list(c)]
    delta = p[:-1] - p[1:]
    if mode == "direct":
        scale = np.ones_like(delta)
    elif mode == "echo":
        if dephasing is None:
            scale = np.ones_like(delta)
        else:
            g = np.array([dephasing.gamma[c[k - 1], c[k]] for k in range(1, len(c))])
            scale = np.exp(-2 * echo_delay * g)
    else:
        raise ValueError(f"unknown readout mode {mode!r}")
    return PopulationReadout(tuple(delta * scale), tuple(scale), mode)


def anchor_scale(delta0: Sequence[float]) -> float:
    """Total weight of the traceless part implied by the t = 0 differences.

    Relative populations are rebuilt from the differences, shifted so the
    smallest is zero, and summed.
    """
    rel = -np.concatenate([[0.0], np.cumsum(delta0)])
    rel -= rel.min()
    return float(rel.sum())


def effective_populations(p: Sequence[float]) -> np.ndarray:
    """Subtract the minimum and renormalize (the identity part is invisible)."""
    p = np.asarray(p, dtype=float)
    q = p - p.min()
    s = q.sum()
    return q / s if s > 0 else np.zeros_like(q)


# ---------------------------------------------------------------- purification


def calibrate_half_pi(setup: Setup, rho_ref: np.ndarray, eta: int) -> float:
    """Duration of the pulse on f_eta that equalizes the pair's populations.

    With dephasing during the pulse, the nominal pi/2 duration leaves a small
    residual difference; a root search on a reference z-only state removes it.
    """
    a, b = setup.levels(eta)
    nominal = setup.pulse(eta, math.pi / 2)

    def diff(tau):
        r = setup.play(rho_ref, [replace(nominal, duration=tau)])
        return float(np.real(r[a, a] - r[b, b]))

    tau0 = nominal.duration
    if diff(tau0) == 0 or setup.dephasing.gamma[a, b] == 0:
        return tau0
    lo, hi = 0.5 * tau0, 1.5 * tau0
    if diff(lo) * diff(hi) > 0:
        return tau0
    return brentq(diff, lo, hi, xtol=1e-14, rtol=1e-14)


def _equalize(setup: Setup, rho: np.ndarray, eta: int) -> np.ndarray:
    """Null-calibrated pi/2 on f_eta, averaged over the two-step {0, pi} phase cycle."""
    tau = calibrate_half_pi(setup, rho, eta)
    p = replace(setup.pulse(eta, math.pi / 2), duration=tau)
    r0 = setup.play(rho, [p])
    r1 = setup.play(rho, [replace(p, phase=math.pi)])
    return (r0 + r1) / 2


def _purification_wait(setup: Setup, eta: int, wait: float | None) -> float:
    if wait is not None:
        return wait
    a, b = setup.levels(eta)
    g = setup.dephasing.gamma[a, b]
    return 2.5 / g if g > 0 else 0.0


def purify_qtm(setup: Setup, rho_thermal: np.ndarray, wait: float | None = None) -> np.ndarray:
    """Equalize |1>, |2> with a pi/2 on f2, then wait 2.5 T2 of f2.

    Leaves populations (p0, (p1+p2)/2, (p1+p2)/2) on the first three
    computational levels.
    """
    rho = _equalize(setup, rho_thermal, 2)
    return setup.wait(rho, _purification_wait(setup, 2, wait))


def purify_tim(setup: Setup, rho_thermal: np.ndarray, wait: float | None = None) -> np.ndarray:
    """Pseudo-pure preparation: pi swap on f3, pi/2 on f2, then wait 2.5 T2 of f2."""
    rho = setup.play(rho_thermal, [setup.pulse(3, math.pi)])
    rho = _equalize(setup, rho, 2)
    return setup.wait(rho, _purification_wait(setup, 2, wait))


def contrast_enhancement(rho_thermal, rho_purified, system: QuditSystem) -> float:
    """Relative gain of the f1 contrast ``P0 - P1`` after purification."""
    c = system.computational
    d0 = np.real(rho_thermal[c[0], c[0]] - rho_thermal[c[1], c[1]])
    d1 = np.real(rho_purified[c[0], c[0]] - rho_purified[c[1], c[1]])
    return float(d1 / d0 - 1)


# ---------------------------------------------------------------- simulations


@dataclass
class SimulationRun:
    model: object
    backend: str
    times: np.ndarray  # us
    scaled_time: np.ndarray  # 2 pi E t (tunneling) or 2 pi b t (Ising)
    delta: np.ndarray  # raw population differences, (n_t, 3)
    scale: float
    observables: dict
    n: int | None = None
    fit: DecayFit | None = None

    @property
    def normalized_delta(self) -> np.ndarray:
        return self.delta / self.scale


def _check_grid(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or len(t) == 0 or np.any(np.diff(t) <= 0) or t[0] < 0:
        raise ValueError("time grid must be non-negative and strictly increasing")
    return t


def _initial_state(setup: Setup, initial: str, purify) -> np.ndarray:
    if initial == "purified":
        return purify(setup, setup.system.thermal_state())
    if initial == "pure":
        rho = np.zeros((setup.system.dim,) * 2, dtype=complex)
        k = setup.system.computational[0]
        rho[k, k] = 1.0
        return rho
    raise ValueError(f"unknown initial state {initial!r}")


def _hardware_sweep(setup: Setup, rho0, schedules, backend, ensemble, readout):
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    run_setup = setup.ideal() if backend == "ideal" else setup
    ens = ensemble if backend == "lindblad-ensemble" else None
    mode = "direct" if backend == "ideal" else readout
    out = []
    for sched in schedules:
        def one(scale, sched=sched):
            r = dyn.play_schedule(rho0, sched, run_setup.system, run_setup.dephasing,
                                  run_setup.engine, scale)
            return np.array(read_populations(r, setup.system, mode, run_setup.dephasing,
                                             setup.echo_delay).delta)
        out.append(ensemble_average(one, ens))
    return np.array(out)


def _exact_sweep(setup: Setup, rho0, model, times):
    c = list(setup.system.computational)[:model.dim]
    block = rho0[np.ix_(c, c)]
    out = []
    for t in times:
        u = exact_propagator(model, t)
        p = np.real(np.diag(u @ block @ u.conj().T))
        d = np.zeros(3)
        d[:len(p) - 1] = p[:-1] - p[1:]
        out.append(d)
    return np.array(out)


def run_qtm_simulation(
    setup: Setup,
    model: QtmModel,
    times: Sequence[float],
    backend: str = "ideal",
    ensemble: EnsembleConfig | None = None,
    initial: str = "purified",
    readout: str = "echo",
    fit: bool = True,
) -> SimulationRun:
    """Tunneling simulation: magnetization ``P0 - P2`` of the spin-1 target."""
    t = _check_grid(times)
    rho0 = _initial_state(setup, initial, purify_qtm)
    grid = np.concatenate([[0.0], t])
    if backend == "exact-target":
        delta = _exact_sweep(setup, rho0, model, grid)
    else:
        scheds = [compile_qtm(model, tk, setup.hardware) for tk in grid]
        delta = _hardware_sweep(setup, rho0, scheds, backend, ensemble, readout)
    a = anchor_scale(delta[0][:2])
    delta = delta[1:]
    sz = (delta[:, 0] + delta[:, 1]) / a
    run = SimulationRun(model, backend, t, TWO_PI * model.E * t, delta, a, {"S_z": sz})
    if fit and backend in ("lindblad", "lindblad-ensemble") and len(t) >= 6:
        try:
            run.fit = fit_damped_cosine(t, sz)
        except FitError:
            run.fit = None
    return run


def run_tim_simulation(
    setup: Setup,
    model: TimModel,
    n: int,
    scaled_times: Sequence[float],
    backend: str = "ideal",
    ensemble: EnsembleConfig | None = None,
    initial: str = "purified",
    readout: str = "echo",
    optimize: bool = True,
) -> SimulationRun:
    """Ising simulation on the grid ``2 pi b t``; returns S_z and <s_z1 s_z2>."""
    if n < 1:
        raise ValueError("need at least one Trotter step")
    bt = _check_grid(scaled_times)
    if model.b == 0:
        raise ValueError("the scaled time axis needs b != 0")
    t = bt / (TWO_PI * model.b)
    rho0 = _initial_state(setup, initial, purify_tim)
    grid = np.concatenate([[0.0], t])
    if backend == "exact-target":
        delta = _exact_sweep(setup, rho0, model, grid)
    else:
        scheds = [compile_tim(model, tk, n, setup.hardware, optimize)[1] for tk in grid]
        delta = _hardware_sweep(setup, rho0, scheds, backend, ensemble, readout)
    a = anchor_scale(delta[0])
    delta = delta[1:]
    sz = delta.sum(axis=1) / a
    # correlation from (P0 - P1) - (P2 - P3), quarter weight
    corr = (delta[:, 0] - delta[:, 2]) / (4 * a)
    return SimulationRun(model, backend, t, bt, delta, a, {"S_z": sz, "szsz": corr}, n=n)


# ---------------------------------------------------------------- calibrations


@dataclass
class CalibrationResult:
    protocol: str
    target: int
    x: np.ndarray
    signal: np.ndarray
    fit: DecayFit | None
    error: str | None = None
    configured: float | None = None

    @property
    def ok(self) -> bool:
        return self.fit is not None

    @property
    def fitted(self) -> float | None:
        if self.fit is None:
            return None
        return self.fit.frequency if self.protocol == "rabi" else self.fit.time_constant


def _echo_signal(setup: Setup, rho, eta: int) -> float:
    a, b = setup.levels(eta)
    return float(-2 * np.real(rho[a, b]))


def _thermal_delta(setup: Setup, eta: int) -> float:
    a, b = setup.levels(eta)
    th = setup.system.thermal_state()
    return float(np.real(th[a, a] - th[b, b]))


def _fit_or_error(fitter, x, y, **kw):
    try:
        return fitter(x, y, **kw), None
    except FitError as exc:
        return None, str(exc)


def run_rabi(setup: Setup, eta: int, durations: Sequence[float],
             ensemble: EnsembleConfig | None = None) -> CalibrationResult:
    """Nutation pulse of variable length, then a pi-refocused echo readout.

    The signal is the refocused coherence normalized to the thermal
    population difference, ``~ sin(2 pi Omega t)``.
    """
    durations = np.asarray(durations, dtype=float)
    rho0 = setup.system.thermal_state()
    ref = _thermal_delta(setup, eta)
    pi = setup.pulse(eta, math.pi)
    base = setup.pulse(eta, math.pi)

    def sweep(scale):
        out = []
        for tau in durations:
            r = rho0
            if tau > 0:
                r = setup.play(r, [replace(base, duration=float(tau))], scale)
            r = setup.wait(r, setup.echo_delay)
            r = setup.play(r, [pi], scale)
            r = setup.wait(r, setup.echo_delay)
            out.append(_echo_signal(setup, r, eta) / ref)
        return np.array(out)

    signal = ensemble_average(sweep, ensemble)
    fit, err = _fit_or_error(fit_damped_cosine, durations, signal)
    return CalibrationResult("rabi", eta, durations, signal, fit, err)


def _hahn(setup: Setup, rho, eta: int) -> float:
    r = setup.play(rho, [setup.pulse(eta, math.pi / 2)])
    r = setup.wait(r, setup.echo_delay)
    r = setup.play(r, [setup.pulse(eta, math.pi)])
    r = setup.wait(r, setup.echo_delay)
    return _echo_signal(setup, r, eta)


def run_t1(setup: Setup, eta: int, delays: Sequence[float]) -> CalibrationResult:
    """Pi on a neighbouring transition, wait, Hahn-echo readout on f_eta.

    The surplus over the thermal echo amplitude decays with T1 of f_eta.
    """
    delays = np.asarray(delays, dtype=float)
    neighbour = eta + 1 if eta < 3 else eta - 1
    rho0 = setup.system.thermal_state()
    ref = _thermal_delta(setup, eta)
    baseline = _hahn(setup, rho0, eta)
    prepped = setup.play(rho0, [setup.pulse(neighbour, math.pi)])
    signal = np.array([(_hahn(setup, setup.wait(prepped, tau), eta) - baseline) / ref
                       for tau in delays])
    fit, err = _fit_or_error(fit_exponential, delays, signal)
    configured = None
    if setup.dephasing.has_t1:
        a, _ = setup.levels(eta)
        configured = 1.0 / setup.dephasing.t1_rates[a]
    return CalibrationResult("t1", eta, delays, signal, fit, err, configured)


def run_t2_hahn(setup: Setup, eta: int, delays: Sequence[float]) -> CalibrationResult:
    """pi/2 - tau - pi - tau; echo amplitude against the total delay 2 tau."""
    delays = np.asarray(delays, dtype=float)
    rho0 = setup.system.thermal_state()
    ref = _thermal_delta(setup, eta)
    p90, p180 = setup.pulse(eta, math.pi / 2), setup.pulse(eta, math.pi)
    r90 = setup.play(rho0, [p90])
    signal = []
    for tau in delays:
        r = setup.wait(r90, tau)
        r = setup.play(r, [p180])
        r = setup.wait(r, tau)
        signal.append(_echo_signal(setup, r, eta) / ref)
    x = 2 * delays
    signal = np.array(signal)
    fit, err = _fit_or_error(fit_exponential, x, signal)
    a, b = setup.levels(eta)
    g = setup.dephasing.gamma[a, b]
    return CalibrationResult("t2", eta, x, signal, fit, err, 1 / g if g > 0 else None)


def run_mq_coherence(setup: Setup, order: int, delays: Sequence[float]) -> CalibrationResult:
    """Multiple-quantum coherence between |0> and |order>.

    pi/2 on f1 makes a 0-1 coherence, pi swaps on f2 (and f3) carry it to
    |order>; after the delay, inverse swaps bring it back and a pi/2 on f1
    stores it as a population difference, read out as ``-(P0 - P1)``.
    """
    if order not in (2, 3):
        raise ValueError("order must be 2 or 3")
    delays = np.asarray(delays, dtype=float)
    rho0 = setup.system.thermal_state()
    ref = _thermal_delta(setup, 1)
    swaps = [setup.pulse(e, math.pi) for e in range(2, order + 1)]
    back = [setup.pulse(e, -math.pi) for e in reversed(range(2, order + 1))]
    prep = setup.play(rho0, [setup.pulse(1, math.pi / 2)] + swaps)
    a, b = setup.levels(1)
    signal = []
    for tau in delays:
        r = setup.wait(prep, tau)
        r = setup.play(r, back + [setup.pulse(1, math.pi / 2)])
        signal.append(-float(np.real(r[a, a] - r[b, b])) / ref)
    signal = np.array(signal)
    fit, err = _fit_or_error(fit_exponential, delays, signal, offset=True)
    lo, hi = setup.system.computational[0], setup.system.computational[order]
    g = setup.dephasing.gamma[lo, hi]
    return CalibrationResult(f"mq{order}", order, delays, signal, fit, err, 1 / g if g > 0 else None)


def single_quantum_reference(setup: Setup) -> float:
    """Signal of the multiple-quantum readout with no swaps and no delay."""
    rho0 = setup.system.thermal_state()
    a, b = setup.levels(1)
    r = setup.play(rho0, [setup.pulse(1, math.pi / 2), setup.pulse(1, math.pi / 2)])
    return -float(np.real(r[a, a] - r[b, b])) / _thermal_delta(setup, 1)


def delay_grid(time_constant: float, points: int = 25, span: float = 3.0) -> np.ndarray:
    """Evenly spaced delays from 0 to ``span`` time constants."""
    return np.linspace(0.0, span * time_constant, points)


def hardware_from_rabi(results: Sequence[CalibrationResult], b1: float,
                       frequencies: Sequence[float] | None = None) -> HardwareConfig:
    """Hardware config whose Rabi rates come from fitted nutation frequencies."""
    rates = {r.target: r.fit.frequency / b1 for r in results if r.protocol == "rabi" and r.fit}
    if set(rates) != {1, 2, 3}:
        raise FitError("need successful nutation fits on f1, f2 and f3")
    return HardwareConfig((rates[1], rates[2], rates[3]), b1, 0.0,
                          tuple(frequencies) if frequencies is not None else None)
