"""Target models, gate decompositions and lowering to pulse schedules.

Conventions
-----------
Target Hamiltonians are in MHz and propagators are ``exp(-2 pi i H t)``
with ``t`` in us. A planar rotation with axis phase ``phi`` is

    R_phi(beta) = exp(-i beta (cos(phi) s_y - sin(phi) s_x)),   s = sigma/2,

so ``phi = 0`` is a rotation about y. On the qudit a rotation on transition
f_eta acts on the pair (|eta-1>, |eta>) with the lower level playing the
role of spin up. The two-spin encoding is
``|uu>, |ud>, |du>, |dd> -> |0>, |1>, |2>, |3>`` (qubit 1 is the left factor).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .schedule import PulseEvent, PulseSchedule
from .spin import QuditSystem, spin_operators

TWO_PI = 2 * np.pi
SX = np.array([[0, 1], [1, 0]], dtype=complex) / 2
SY = np.array([[0, -1j], [1j, 0]], dtype=complex) / 2
SZ = np.array([[1, 0], [0, -1]], dtype=complex) / 2
I2 = np.eye(2, dtype=complex)
UP, DOWN = np.diag([1.0, 0.0]).astype(complex), np.diag([0.0, 1.0]).astype(complex)


class CompileError(ValueError):
    """A gate cannot be expressed in the chosen level encoding."""


# ---------------------------------------------------------------- targets


@dataclass(frozen=True)
class QtmModel:
    """Spin-S tunneling model ``-D S_z^2 + E (S_x^2 - S_y^2)`` in MHz."""

    D: float
    E: float
    S: float = 1.0

    def __post_init__(self):
        if 2 * self.S + 1 > 4:
            raise ValueError("target spin must fit in four levels (S <= 3/2)")
        if self.D > 0 and abs(self.E) > self.D / 3:
            warnings.warn(f"|E| = {abs(self.E)} exceeds D/3 = {self.D / 3}", stacklevel=2)

    @property
    def dim(self) -> int:
        return int(round(2 * self.S + 1))

    def hamiltonian(self) -> np.ndarray:
        sx, sy, sz = spin_operators(self.S)
        return -self.D * sz @ sz + self.E * (sx @ sx - sy @ sy)


@dataclass(frozen=True)
class TimModel:
    """Two spins 1/2: ``b (s_y1 + s_y2) + J s_z1 s_z2`` in MHz."""

    b: float = 1.0
    J: float = 1.0
    dim: int = 4

    def hamiltonian(self) -> np.ndarray:
        return (self.b * (np.kron(SY, I2) + np.kron(I2, SY))
                + self.J * np.kron(SZ, SZ))


def exact_propagator(model, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("time must be non-negative")
    return expm(-TWO_PI * 1j * model.hamiltonian() * t)


# ---------------------------------------------------------------- gates


def planar(beta: float, phi: float) -> np.ndarray:
    return expm(-1j * beta * (math.cos(phi) * SY - math.sin(phi) * SX))


def level_rotation(dim: int, lower: int, upper: int, angle: float, phase: float) -> np.ndarray:
    u = np.eye(dim, dtype=complex)
    u[np.ix_([lower, upper], [lower, upper])] = planar(angle, phase)
    return u


def zz(alpha: float) -> np.ndarray:
    return expm(-1j * alpha * np.kron(SZ, SZ))


def _on_qubit(qubit: int, op: np.ndarray) -> np.ndarray:
    return np.kron(op, I2) if qubit == 1 else np.kron(I2, op)


@dataclass(frozen=True)
class PlanarRotation:
    qubit: int
    angle: float
    phase: float = 0.0

    @property
    def unitary(self) -> np.ndarray:
        return _on_qubit(self.qubit, planar(self.angle, self.phase))


@dataclass(frozen=True)
class ConditionalRotation:
    """Rotate ``qubit`` with axis phase set by the other qubit's z state."""

    qubit: int
    angle: float
    phase_up: float
    phase_down: float

    @property
    def unitary(self) -> np.ndarray:
        r_up, r_dn = planar(self.angle, self.phase_up), planar(self.angle, self.phase_down)
        if self.qubit == 1:
            return np.kron(r_up, UP) + np.kron(r_dn, DOWN)
        return np.kron(UP, r_up) + np.kron(DOWN, r_dn)


@dataclass(frozen=True)
class ZZPhase:
    angle: float

    @property
    def unitary(self) -> np.ndarray:
        return zz(self.angle)


@dataclass(frozen=True)
class LevelRotation:
    """Two-level rotation on (|eta-1>, |eta>) of a ``dim``-level register."""

    transition: int
    angle: float
    phase: float = 0.0
    dim: int = 4

    @property
    def unitary(self) -> np.ndarray:
        return level_rotation(self.dim, self.transition - 1, self.transition, self.angle, self.phase)


@dataclass(frozen=True)
class StateSwap:
    """Pi rotation on f_eta; ``sign = -1`` is the back-swap."""

    transition: int
    sign: int = 1
    dim: int = 4

    @property
    def angle(self) -> float:
        return math.pi * self.sign

    @property
    def unitary(self) -> np.ndarray:
        return level_rotation(self.dim, self.transition - 1, self.transition, self.angle, 0.0)


Gate = PlanarRotation | ConditionalRotation | ZZPhase | LevelRotation | StateSwap


@dataclass(frozen=True)
class GateList:
    """Gates in time order (first element acts first)."""

    gates: tuple
    dim: int = 4
    optimized: bool = False
    note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))

    def __len__(self):
        return len(self.gates)

    @property
    def unitary(self) -> np.ndarray:
        u = np.eye(self.dim, dtype=complex)
        for g in self.gates:
            u = g.unitary @ u
        return u


def phase_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Max-entry distance between ``u`` and ``v`` after removing the best global phase."""
    overlap = np.vdot(v, u)
    phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    return float(np.abs(u - phase * v).max())


def operator_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Spectral-norm distance ``min_phi ||u - e^{i phi} v||`` for unitaries.

    The eigenphases of ``v^dagger u`` fill an arc of the unit circle; the
    optimal global phase sits at its midpoint, giving ``2 sin(width / 4)``.
    """
    theta = np.sort(np.mod(np.angle(np.linalg.eigvals(v.conj().T @ u)), TWO_PI))
    gaps = np.diff(np.append(theta, theta[0] + TWO_PI))
    width = TWO_PI - gaps.max()
    return float(2 * math.sin(width / 4))


def gate_fidelity(u: np.ndarray, v: np.ndarray) -> float:
    """|tr(v^dagger u)| / d, insensitive to global phase."""
    return float(abs(np.trace(v.conj().T @ u)) / u.shape[0])


# ---------------------------------------------------------------- decompositions


def trotterize(model: TimModel, t: float, n: int) -> GateList:
    """First-order product formula with ``n`` steps; each step is R_y2, R_y1, then U_ZZ."""
    if n < 1:
        raise ValueError("need at least one Trotter step")
    beta = TWO_PI * model.b * t / n
    alpha = TWO_PI * model.J * t / n
    gates = []
    for _ in range(n):
        gates += [PlanarRotation(2, beta), PlanarRotation(1, beta), ZZPhase(alpha)]
    return GateList(gates, dim=4)


def optimize_zz(gates: GateList) -> GateList:
    """Push every U_ZZ to the end by turning later rotations into conditional ones.

    Uses ``R_y1(b) R_y2(b) U_ZZ(a) = U_ZZ(a) R_c1 R_c2`` (operator order),
    where ``R_c`` rotates its target with axis phase ``-a/2`` when the other
    qubit is up and ``+a/2`` when it is down. After k ZZ phases have been
    commuted through, step k carries conditional phases ``-+ k a/2`` and a
    single U_ZZ of the accumulated angle closes the list. The form with
    ``+-a`` on the two branches is not an identity; the half-angle with
    this sign is the one that holds.

    A list that is not made of [rotation, rotation, U_ZZ] steps is returned
    unchanged with ``optimized=False`` and a note.
    """
    seq = list(gates.gates)
    ok = len(seq) % 3 == 0 and len(seq) > 0
    steps = []
    for k in range(0, len(seq), 3):
        chunk = seq[k:k + 3]
        if not (ok and len(chunk) == 3 and isinstance(chunk[2], ZZPhase)
                and all(isinstance(g, PlanarRotation) for g in chunk[:2])
                and {g.qubit for g in chunk[:2]} == {1, 2}):
            ok = False
            break
        steps.append(chunk)
    if not ok:
        warnings.warn("optimize_zz: gate list does not match the Trotter pattern; left untouched",
                      stacklevel=2)
        return GateList(gates.gates, gates.dim, False, "pattern mismatch: not optimized")
    out = []
    acc = 0.0
    for r_a, r_b, z in steps:
        for r in (r_a, r_b):
            out.append(ConditionalRotation(r.qubit, r.angle, r.phase - acc / 2, r.phase + acc / 2))
        acc += z.angle
    out.append(ZZPhase(acc))
    return GateList(out, gates.dim, True, "ZZ phases folded into conditional rotation axes")


# ---------------------------------------------------------------- lowering


@dataclass(frozen=True)
class LevelEncoding:
    """Target basis state -> computational level index."""

    name: str
    levels: tuple[int, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.levels)) != len(self.levels):
            raise ValueError("encoding must be injective")
        if sorted(self.levels) != list(range(min(self.levels), min(self.levels) + len(self.levels))):
            raise ValueError("encoded levels must be contiguous")

    @classmethod
    def tim(cls) -> "LevelEncoding":
        return cls("tim", (0, 1, 2, 3), ("uu", "ud", "du", "dd"))

    @classmethod
    def qtm(cls) -> "LevelEncoding":
        return cls("qtm", (0, 1, 2), ("M=+1", "M=0", "M=-1"))


@dataclass(frozen=True)
class HardwareConfig:
    """Rabi rate per tesla for f1..f3, maximum B1 (T) and inter-group gap (us)."""

    rabi_per_tesla: tuple[float, float, float]
    b1: float = 5e-4
    gap: float = 0.0
    frequencies: tuple[float, ...] | None = None

    @classmethod
    def from_system(cls, system: QuditSystem, b1: float = 5e-4, gap: float = 0.0) -> "HardwareConfig":
        return cls(tuple(system.rabi_per_tesla(e) for e in (1, 2, 3)), b1, gap, system.frequencies)

    def rate(self, eta: int) -> float:
        return self.rabi_per_tesla[eta - 1] * self.b1


def _lower_gate(g, encoding: LevelEncoding) -> list[list[tuple[int, float, float]]]:
    """Gate -> groups of simultaneous (transition, angle, phase) rotations."""
    tim_only = (PlanarRotation, ConditionalRotation, ZZPhase)
    if isinstance(g, tim_only) and encoding.name != "tim":
        raise CompileError(f"{g!r} needs the two-qubit encoding, got {encoding.name!r}")
    if isinstance(g, PlanarRotation):
        g = ConditionalRotation(g.qubit, g.angle, g.phase, g.phase)
    if isinstance(g, ConditionalRotation):
        if g.qubit == 2:
            return [[(1, g.angle, g.phase_up), (3, g.angle, g.phase_down)]]
        if g.qubit == 1:
            # swap |1>,|2>; the swap maps |1> to -|2>, which flips the f1 axis by pi
            return [[(2, math.pi, 0.0)],
                    [(1, g.angle, g.phase_up + math.pi), (3, g.angle, g.phase_down)],
                    [(2, math.pi, math.pi)]]
        raise CompileError(f"no qubit {g.qubit} in the encoding")
    if isinstance(g, (LevelRotation, StateSwap)):
        top = max(encoding.levels)
        if not 1 <= g.transition <= top:
            raise CompileError(f"{g!r} addresses a transition outside the {encoding.name} encoding")
        phase = getattr(g, "phase", 0.0)
        return [[(g.transition, g.angle, phase)]]
    raise CompileError(f"cannot lower gate {g!r}")


def compile_to_pulses(gates: GateList, encoding: LevelEncoding, hardware: HardwareConfig,
                      t0: float = 0.0) -> PulseSchedule:
    """Lower a gate list to a timed pulse schedule.

    U_ZZ gates emit no pulse: they become a running diagonal frame that
    shifts the phase of every later rotation on (a, b) by ``theta_b -
    theta_a``; the residual frame is stored on the schedule. Simultaneous
    tones share one duration set by the slowest of them at full B1, the
    faster ones running at reduced amplitude. Zero-angle rotations are
    dropped; negative angles become positive with the axis advanced by pi.
    """
    d = len(encoding.levels)
    theta = np.zeros(d)
    diag_zz = np.array([0.25, -0.25, -0.25, 0.25])
    pulses: list[PulseEvent] = []
    t = t0
    group = 0
    for g in gates.gates:
        if isinstance(g, ZZPhase):
            if encoding.name != "tim":
                raise CompileError(f"{g!r} needs the two-qubit encoding")
            theta = theta + g.angle * diag_zz
            continue
        for block in _lower_gate(g, encoding):
            specs = []
            for eta, angle, phase in block:
                if angle == 0:
                    continue
                phase = phase + theta[eta] - theta[eta - 1]
                if angle < 0:
                    angle, phase = -angle, phase + math.pi
                specs.append((eta, angle, math.remainder(phase, TWO_PI)))
            if not specs:
                continue
            tau = max(a / (TWO_PI * hardware.rate(e)) for e, a, _ in specs)
            for eta, angle, phase in specs:
                amp = angle / (TWO_PI * hardware.rabi_per_tesla[eta - 1] * tau)
                freq = hardware.frequencies[eta - 1] if hardware.frequencies else None
                pulses.append(PulseEvent(t, tau, eta, freq, phase, amp, group, angle))
            t += tau + hardware.gap
            group += 1
    frame = tuple(theta) if np.any(theta != 0) else ()
    return PulseSchedule(pulses, frame)


def compile_qtm(model: QtmModel, t: float, hardware: HardwareConfig, initial_level: int = 0) -> PulseSchedule:
    """Tunneling sequence: rotation ``4 pi E t`` on f1, then a pi swap on f2."""
    return compile_to_pulses(qtm_gates(model, t, initial_level), LevelEncoding.qtm(), hardware)


def qtm_gates(model: QtmModel, t: float, initial_level: int = 0) -> GateList:
    if initial_level != 0:
        raise CompileError("the tunneling sequence is only valid from |0> (M = +1)")
    if model.dim != 3:
        raise CompileError("the tunneling sequence targets S = 1")
    return GateList([LevelRotation(1, 2 * TWO_PI * model.E * t, 0.0, 3), StateSwap(2, 1, 3)], dim=3)


def compile_tim(model: TimModel, t: float, n: int, hardware: HardwareConfig,
                optimize: bool = True) -> tuple[GateList, PulseSchedule]:
    gates = trotterize(model, t, n)
    if optimize:
        gates = optimize_zz(gates)
    return gates, compile_to_pulses(gates, LevelEncoding.tim(), hardware)


def schedule_unitary(schedule: PulseSchedule, dim: int = 4) -> np.ndarray:
    """Ideal unitary of a schedule on the encoded levels, from nominal angles and phases."""
    u = np.eye(dim, dtype=complex)
    for grp in schedule.groups:
        g = np.eye(dim, dtype=complex)
        for p in grp:
            if p.transition is None or p.transition >= dim:
                raise CompileError(f"pulse {p.target} is outside the {dim}-level register")
            g = level_rotation(dim, p.transition - 1, p.transition, p.angle, p.phase) @ g
        u = g @ u
    if schedule.frame:
        z = np.ones(dim, dtype=complex)
        z[:len(schedule.frame)] = np.exp(-1j * np.asarray(schedule.frame))[:dim]
        u = np.diag(z) @ u
    return u
