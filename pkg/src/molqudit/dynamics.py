"""Density-matrix dynamics of the driven spin system with pure dephasing.

States are 12x12 arrays in the eigenbasis of the static Hamiltonian. The
engines below (``play_schedule``, ``apply_pulse_rwa``, ``free_decay``) work
in the interaction picture with respect to the static Hamiltonian, so a
state at rest does not pick up free precession phases. ``evolve_lindblad``
is the literal lab-frame integrator and takes and returns Schrodinger
picture states; ``to_interaction``/``from_interaction`` convert.

Two drive backends exist:

* a rotating-wave engine that treats every pulse as a static coupling on
  its addressed transition and propagates piecewise by matrix exponential;
* a lab-frame engine that integrates the full sinusoidal drive with an
  adaptive Runge-Kutta scheme (used for validation).
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.stats import norm

from .schedule import PulseEvent, PulseSchedule
from .spin import QuditSystem

TWO_PI = 2 * np.pi


class IntegrationError(RuntimeError):
    """The ODE integrator failed to reach the requested end time."""


# ---------------------------------------------------------------- dephasing


@dataclass(frozen=True)
class DephasingModel:
    """Pure-dephasing rates and optional longitudinal relaxation.

    Attributes
    ----------
    gamma : ndarray
        Symmetric matrix of coherence damping rates (1/us), zero diagonal.
    t1_rates : ndarray or None
        Relaxation rate (1/us) of each population difference
        ``P_k - P_{k+1}`` between energy-consecutive levels. ``None`` turns
        longitudinal relaxation off.
    thermal : ndarray or None
        Equilibrium populations targeted by the relaxation.
    """

    gamma: np.ndarray
    t1_rates: np.ndarray | None = None
    thermal: np.ndarray | None = None

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("gamma must be square")
        if np.any(g < 0) or not np.allclose(g, g.T, atol=0):
            raise ValueError("gamma must be symmetric and non-negative")
        g = g.copy()
        np.fill_diagonal(g, 0.0)
        object.__setattr__(self, "gamma", g)
        if self.t1_rates is not None:
            k = np.broadcast_to(np.asarray(self.t1_rates, dtype=float), (g.shape[0] - 1,)).copy()
            if np.any(k < 0):
                raise ValueError("T1 rates must be non-negative")
            if self.thermal is None:
                raise ValueError("T1 relaxation needs thermal populations")
            object.__setattr__(self, "t1_rates", k)
            object.__setattr__(self, "thermal", np.asarray(self.thermal, dtype=float))

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    @property
    def has_t1(self) -> bool:
        return self.t1_rates is not None and bool(np.any(self.t1_rates > 0))

    @classmethod
    def none(cls, dim: int = 12) -> "DephasingModel":
        return cls(np.zeros((dim, dim)))

    @classmethod
    def from_times(
        cls,
        system: QuditSystem,
        t2: Sequence[float] = (8.0, 1.2, 0.7),
        t1: float | Sequence[float] | None = None,
        outside_rate: float | None = None,
    ) -> "DephasingModel":
        """Rates from single/double/triple-quantum T2 (us) and optional T1 (us).

        Coherences involving any level outside the computational subspace
        decay at ``outside_rate``, which defaults to the fastest configured
        rate. ``t1`` may be one time for every consecutive pair or one per
        pair (length dim - 1).
        """
        d = system.dim
        rates = [1.0 / t for t in t2]
        fill = max(rates) if outside_rate is None else outside_rate
        g = np.full((d, d), float(fill))
        comp = system.computational
        for i, a in enumerate(comp):
            for j, b in enumerate(comp):
                if i != j:
                    g[a, b] = rates[min(abs(i - j), len(rates)) - 1]
        np.fill_diagonal(g, 0.0)
        t1_rates = thermal = None
        if t1 is not None:
            t1_rates = 1.0 / np.broadcast_to(np.asarray(t1, dtype=float), (d - 1,))
            thermal = np.real(np.diag(system.thermal_state()))
        return cls(g, t1_rates, thermal)

    def with_t1(self, system: QuditSystem, t1: float | Sequence[float] | None) -> "DephasingModel":
        if t1 is None:
            return DephasingModel(self.gamma)
        rates = 1.0 / np.broadcast_to(np.asarray(t1, dtype=float), (self.dim - 1,))
        return DephasingModel(self.gamma, rates, np.real(np.diag(system.thermal_state())))

    def relaxation_matrix(self) -> np.ndarray:
        """Matrix R with dP/dt = -R (P - P_thermal); zero when T1 is off.

        Built so every difference ``P_k - P_{k+1}`` relaxes as a single
        exponential while the total population is conserved.
        """
        d = self.dim
        if not self.has_t1:
            return np.zeros((d, d))
        M = np.zeros((d, d))
        for k in range(d - 1):
            M[k, k], M[k, k + 1] = 1.0, -1.0
        M[d - 1, :] = 1.0
        K = np.diag(np.append(self.t1_rates, 0.0))
        return np.linalg.solve(M, K @ M)

    def relax_populations(self, p: np.ndarray, tau: float) -> np.ndarray:
        if not self.has_t1 or tau == 0:
            return p
        return self.thermal + expm(-self.relaxation_matrix() * tau) @ (p - self.thermal)


@dataclass(frozen=True)
class EnsembleConfig:
    """Relative B1 spread for inhomogeneity averaging.

    Samples are stratified normal quantiles: ``u_k = (k + U_k)/N`` with
    ``U_k`` from a seeded generator, mapped through the normal inverse CDF.
    """

    sigma_rel: float = 0.03
    samples: int = 24
    seed: int = 1234

    def __post_init__(self):
        if self.sigma_rel < 0:
            raise ValueError("sigma_rel must be non-negative")
        if self.samples < 1:
            raise ValueError("need at least one ensemble sample")

    def factors(self) -> np.ndarray:
        if self.sigma_rel == 0:
            return np.ones(1)
        rng = np.random.default_rng(self.seed)
        u = (np.arange(self.samples) + rng.random(self.samples)) / self.samples
        return np.clip(1.0 + self.sigma_rel * norm.ppf(u), 0.0, None)


def ensemble_average(experiment: Callable[[float], object], config: EnsembleConfig | None):
    """Average ``experiment(b1_scale)`` over the ensemble's B1 scale factors.

    The experiment may return an array, a number, or a dict of either;
    the average has the same structure.
    """
    if config is None:
        return experiment(1.0)
    results = [experiment(float(s)) for s in config.factors()]
    first = results[0]
    if isinstance(first, dict):
        return {k: np.mean([np.asarray(r[k]) for r in results], axis=0) for k in first}
    return np.mean([np.asarray(r) for r in results], axis=0)


# ---------------------------------------------------------------- trajectories


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_times, d, d)

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.einsum("tii->ti", self.states))

    def coherence(self, i: int, j: int) -> np.ndarray:
        return self.states[:, i, j]

    def to_csv(self, target=None, coherences: Iterable[tuple[int, int]] = ()) -> str:
        """Write columns time_us, P0..P{d-1} and Re/Im of each requested coherence."""
        coherences = list(coherences)
        d = self.states.shape[1]
        header = ["time_us"] + [f"P{k}" for k in range(d)]
        for i, j in coherences:
            header += [f"Re_rho_{i}_{j}", f"Im_rho_{i}_{j}"]
        rows = []
        pops = self.populations
        for n, t in enumerate(self.times):
            row = [t, *pops[n]]
            for i, j in coherences:
                row += [self.states[n, i, j].real, self.states[n, i, j].imag]
            rows.append(row)
        text = format_csv(header, rows)
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


def fmt(x) -> str:
    """12 significant digits, no negative zero."""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x == 0:
        x = 0.0
    return f"{x:.12g}"


def format_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def to_interaction(rho: np.ndarray, energies: np.ndarray, t: float) -> np.ndarray:
    u = np.exp(TWO_PI * 1j * energies * t)
    return rho * np.outer(u, u.conj())


def from_interaction(rho: np.ndarray, energies: np.ndarray, t: float) -> np.ndarray:
    return to_interaction(rho, energies, -t)


# ---------------------------------------------------------------- lab frame


def _carrier(p: PulseEvent, system: QuditSystem) -> float:
    return p.frequency if p.frequency is not None else system.frequency(p.transition)


def drive_envelope(t: float, pulses: Sequence[PulseEvent], system: QuditSystem,
                   b1_scale: float = 1.0) -> float:
    """Scalar sum of B1 sin(2 pi f t - phase) over the pulses active at ``t``.

    The axis phase enters with a minus sign so that, with drive elements
    gauged real and positive, phase 0 rotates about y and the lab drive
    reproduces the rotating-wave rotation of the same pulse.
    """
    s = 0.0
    for p in pulses:
        if p.t_start <= t < p.t_end:
            s += p.amplitude * math.sin(TWO_PI * _carrier(p, system) * t - p.phase)
    return b1_scale * s


def drive_hamiltonian(t: float, pulses: Sequence[PulseEvent], system: QuditSystem,
                      b1_scale: float = 1.0) -> np.ndarray:
    """Lab-frame drive in MHz, in the eigenbasis of the static Hamiltonian."""
    return system.drive * drive_envelope(t, pulses, system, b1_scale)


def evolve_lindblad(
    rho0: np.ndarray,
    system: QuditSystem,
    pulses: Sequence[PulseEvent],
    dephasing: DephasingModel,
    t_span: tuple[float, float],
    t_eval: Sequence[float] | None = None,
    *,
    h0: np.ndarray | None = None,
    b1_scale: float = 1.0,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    max_step: float | None = None,
) -> Trajectory:
    """Integrate the master equation with the full sinusoidal drive.

    ``d rho/dt = -2 pi i [H0 + H1(t), rho] - Gamma * rho`` elementwise, plus
    population relaxation when T1 is enabled. Input and output states are
    in the Schrodinger picture. ``h0`` defaults to the diagonal static
    Hamiltonian; any Hermitian override is accepted.

    Integration is split at every pulse edge so the integrator never steps
    across a discontinuity.
    """
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    pulses = list(pulses)
    d = rho0.shape[0]
    diag_h0 = h0 is None or np.allclose(h0, np.diag(np.diag(h0)), atol=0, rtol=0)
    energies = system.energies if h0 is None else np.real(np.diag(h0))
    H0 = None if diag_h0 else np.asarray(h0, dtype=complex)
    V = system.drive if pulses else np.zeros((d, d))
    gamma = dephasing.gamma
    R = dephasing.relaxation_matrix() if dephasing.has_t1 else None
    p_th = dephasing.thermal
    if max_step is None:
        fmax = max((_carrier(p, system) for p in pulses), default=0.0)
        max_step = 1.0 / (20 * fmax) if fmax > 0 else np.inf

    def rhs(t, y):
        rho = y.reshape(d, d)
        s = drive_envelope(t, pulses, system, b1_scale) if pulses else 0.0
        if diag_h0:
            u = np.exp(TWO_PI * 1j * energies * t)
            H = V * np.outer(u, u.conj()) * s
        else:
            H = H0 + V * s
        out = -TWO_PI * 1j * (H @ rho - rho @ H) - gamma * rho
        if R is not None:
            out[np.diag_indices(d)] += -R @ (np.real(np.diag(rho)) - p_th)
        return out.ravel()

    edges = sorted({t0, t1, *(p.t_start for p in pulses), *(p.t_end for p in pulses)})
    edges = [e for e in edges if t0 <= e <= t1]
    if t_eval is None:
        t_eval = [t1]
    t_eval = np.asarray(t_eval, dtype=float)
    if np.any(np.diff(t_eval) < 0) or t_eval.min() < t0 or t_eval.max() > t1:
        raise ValueError("t_eval must be sorted and inside t_span")

    rho = np.asarray(rho0, dtype=complex)
    if diag_h0:
        rho = to_interaction(rho, energies, t0)
    y = rho.ravel()
    out_t, out_s = [], []
    for n, t_eval_point in enumerate(t_eval):
        if t_eval_point == t0:
            out_t.append(t0)
            out_s.append(rho.copy())
    for a, b in zip(edges[:-1], edges[1:]):
        inside = t_eval[(t_eval > a) & (t_eval <= b)]
        sol = solve_ivp(rhs, (a, b), y, method="DOP853", t_eval=inside if len(inside) else None,
                        rtol=rtol, atol=atol, max_step=max_step)
        if not sol.success:
            raise IntegrationError(f"integration failed on [{a}, {b}] us: {sol.message}")
        if len(inside):
            for k, tk in enumerate(sol.t):
                out_t.append(tk)
                out_s.append(sol.y[:, k].reshape(d, d))
        y = sol.y[:, -1]
        if sol.t[-1] != b:
            y = solve_ivp(rhs, (sol.t[-1], b), y, method="DOP853", rtol=rtol, atol=atol,
                          max_step=max_step).y[:, -1]
    states = np.array(out_s)
    times = np.array(out_t)
    if diag_h0:
        states = np.array([from_interaction(s, energies, t) for s, t in zip(states, times)])
    states = (states + np.conj(np.transpose(states, (0, 2, 1)))) / 2
    return Trajectory(times, states)


# ---------------------------------------------------------------- rotating frame


def _liouvillian(H: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    d = H.shape[0]
    eye = np.eye(d)
    return -TWO_PI * 1j * (np.kron(H, eye) - np.kron(eye, H.T)) - np.diag(gamma.ravel())


def propagate_static(rho: np.ndarray, H: np.ndarray, dephasing: DephasingModel, tau: float,
                     active: Sequence[int] | None = None) -> np.ndarray:
    """Evolve under a constant Hamiltonian with dephasing (and T1) for ``tau`` us.

    When ``active`` is given, ``H`` must couple only those levels among
    themselves and be diagonal elsewhere; the propagation then splits into
    small blocks instead of one full Liouvillian exponential.
    """
    if tau == 0:
        return rho
    d = rho.shape[0]
    gamma = dephasing.gamma
    if dephasing.has_t1 or active is None:
        L = _liouvillian(H, gamma)
        if dephasing.has_t1:
            R = dephasing.relaxation_matrix()
            pop = np.arange(d) * (d + 1)
            aug = np.zeros((d * d + 1, d * d + 1), dtype=complex)
            aug[:-1, :-1] = L
            aug[np.ix_(pop, pop)] -= R
            aug[pop, -1] = R @ dephasing.thermal
            vec = expm(aug * tau) @ np.append(rho.ravel(), 1.0)
            out = vec[:-1].reshape(d, d)
        else:
            out = (expm(L * tau) @ rho.ravel()).reshape(d, d)
        return (out + out.conj().T) / 2

    A = np.asarray(sorted(active))
    P = np.setdiff1d(np.arange(d), A)
    hp = np.real(np.diag(H))[P]
    HA = H[np.ix_(A, A)]
    out = np.empty_like(rho, dtype=complex)
    LA = _liouvillian(HA, gamma[np.ix_(A, A)])
    out[np.ix_(A, A)] = (expm(LA * tau) @ rho[np.ix_(A, A)].ravel()).reshape(len(A), len(A))
    if len(P):
        eyeA = np.eye(len(A))
        gens = (-TWO_PI * 1j * (HA[None, :, :] - hp[:, None, None] * eyeA)
                - gamma[np.ix_(A, P)].T[:, :, None] * eyeA)
        props = expm(gens * tau)
        cols = np.einsum("pij,jp->ip", props, rho[np.ix_(A, P)])
        out[np.ix_(A, P)] = cols
        out[np.ix_(P, A)] = cols.conj().T
        phase = np.exp((-TWO_PI * 1j * (hp[:, None] - hp[None, :]) - gamma[np.ix_(P, P)]) * tau)
        out[np.ix_(P, P)] = rho[np.ix_(P, P)] * phase
    return (out + out.conj().T) / 2


def free_decay(rho: np.ndarray, tau: float, dephasing: DephasingModel,
               energies: np.ndarray | None = None) -> np.ndarray:
    """Wait ``tau`` us with no drive.

    Coherences are multiplied by ``exp(-Gamma tau)``; populations relax only
    when T1 is enabled. Pass ``energies`` for Schrodinger-picture states so
    coherences also pick up their free precession phases.
    """
    if tau < 0:
        raise ValueError("waiting time must be non-negative")
    if tau == 0:
        return rho
    factor = np.exp(-dephasing.gamma * tau)
    if energies is not None:
        factor = factor * np.exp(-TWO_PI * 1j * np.subtract.outer(energies, energies) * tau)
    out = rho * factor
    if dephasing.has_t1:
        p = dephasing.relax_populations(np.real(np.diag(rho)), tau)
        out[np.diag_indices_from(out)] = p
    return out


def pulse_levels(p: PulseEvent, system: QuditSystem, bound: float = 2.0) -> tuple[int, int, float]:
    """(lower, upper, detuning) of the transition a pulse addresses.

    Detuning is ``f_transition - f_carrier`` in MHz.
    """
    eta = p.transition
    if eta is None:
        eta = system.transition_for_frequency(p.frequency, bound)
    tr = system.levels.transition(eta)
    detuning = 0.0 if p.frequency is None else tr.frequency - p.frequency
    if abs(detuning) > bound:
        raise ValueError(f"pulse carrier {p.frequency} MHz is {detuning:+.3f} MHz off f{eta}")
    return tr.lower, tr.upper, detuning


def _frame_offsets(d: int, links: list[tuple[int, int, float]]) -> np.ndarray:
    """Level frequencies delta with delta_b - delta_a = detuning on every link."""
    delta = np.full(d, np.nan)
    adj: dict[int, list[tuple[int, float]]] = {}
    for a, b, det in links:
        adj.setdefault(a, []).append((b, det))
        adj.setdefault(b, []).append((a, -det))
    for root in adj:
        if not np.isnan(delta[root]):
            continue
        delta[root] = 0.0
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v, det in adj[u]:
                want = delta[u] + det
                if np.isnan(delta[v]):
                    delta[v] = want
                    queue.append(v)
                elif abs(delta[v] - want) > 1e-9:
                    raise ValueError("simultaneous detuned tones form an inconsistent frame")
    return np.nan_to_num(delta, nan=0.0)


def _rwa_segment(rho, active: Sequence[PulseEvent], system, dephasing, t0, t1, b1_scale, bound):
    d = system.dim
    links, couplings = [], {}
    for p in active:
        a, b, det = pulse_levels(p, system, bound)
        links.append((a, b, det))
        c = 0.5j * b1_scale * p.amplitude * system.drive[b, a] * np.exp(1j * p.phase)
        couplings[(a, b)] = couplings.get((a, b), 0.0) + c
    delta = _frame_offsets(d, links)
    H = np.diag(delta).astype(complex)
    for (a, b), c in couplings.items():
        H[b, a] += c
        H[a, b] += np.conj(c)
    levels = sorted({k for a, b, _ in links for k in (a, b)})
    u0 = np.exp(-TWO_PI * 1j * delta * t0)
    r = rho * np.outer(u0, u0.conj())
    r = propagate_static(r, H, dephasing, t1 - t0, active=levels)
    u1 = np.exp(TWO_PI * 1j * delta * t1)
    return r * np.outer(u1, u1.conj())


def apply_pulse_rwa(rho: np.ndarray, pulse: PulseEvent, system: QuditSystem,
                    dephasing: DephasingModel | None = None, b1_scale: float = 1.0,
                    bound: float = 2.0) -> np.ndarray:
    """Apply one pulse in the rotating-wave approximation.

    The addressed pair rotates by ``2 pi |d| B1 tau`` about the axis set by
    the pulse phase while every coherence dephases concurrently.
    """
    dephasing = dephasing or DephasingModel.none(system.dim)
    return _rwa_segment(rho, [pulse], system, dephasing, pulse.t_start, pulse.t_end, b1_scale, bound)


def apply_frame(rho: np.ndarray, frame: Sequence[float], system: QuditSystem) -> np.ndarray:
    """Apply the trailing virtual Z rotation diag(exp(-i theta_k)) on computational levels."""
    if not len(frame):
        return rho
    z = np.ones(system.dim, dtype=complex)
    for k, theta in enumerate(frame):
        z[system.computational[k]] = np.exp(-1j * theta)
    return rho * np.outer(z, z.conj())


def play_schedule(
    rho: np.ndarray,
    schedule: PulseSchedule,
    system: QuditSystem,
    dephasing: DephasingModel | None = None,
    engine: str = "rwa",
    b1_scale: float = 1.0,
    bound: float = 2.0,
    **lab_options,
) -> np.ndarray:
    """Run a schedule from t = 0 to its end; returns the interaction-picture state."""
    dephasing = dephasing or DephasingModel.none(system.dim)
    rho = np.asarray(rho, dtype=complex)
    if not schedule.pulses:
        return apply_frame(rho, schedule.frame, system)
    t_end = schedule.duration
    if engine == "lab":
        tr = evolve_lindblad(rho, system, schedule.pulses, dephasing, (0.0, t_end),
                             b1_scale=b1_scale, **lab_options)
        out = to_interaction(tr.states[-1], system.energies, t_end)
    elif engine == "rwa":
        edges = sorted({0.0, *(p.t_start for p in schedule.pulses), *(p.t_end for p in schedule.pulses)})
        out = rho
        for a, b in zip(edges[:-1], edges[1:]):
            active = [p for p in schedule.pulses if p.t_start <= a and p.t_end >= b and p.amplitude > 0]
            if active:
                out = _rwa_segment(out, active, system, dephasing, a, b, b1_scale, bound)
            else:
                out = free_decay(out, b - a, dephasing)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    return apply_frame(out, schedule.frame, system)


def rotation_pulse(system: QuditSystem, eta: int, angle: float, b1: float, phase: float = 0.0,
                   t_start: float = 0.0, group: int = 0) -> PulseEvent:
    """Resonant pulse on f_eta producing rotation ``angle`` at amplitude ``b1``.

    Negative angles become positive ones with the axis phase advanced by pi.
    """
    if angle < 0:
        angle, phase = -angle, phase + np.pi
    rate = system.rabi_per_tesla(eta) * b1
    return PulseEvent(t_start, angle / (TWO_PI * rate), transition=eta,
                      frequency=system.frequency(eta), phase=phase, amplitude=b1,
                      group=group, angle=angle)


def computational_block(rho: np.ndarray, system: QuditSystem) -> np.ndarray:
    c = list(system.computational)
    return rho[np.ix_(c, c)]
