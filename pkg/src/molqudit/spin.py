"""Static electro-nuclear spin Hamiltonian of the Yb(III) qudit.

Energies are linear frequencies in MHz throughout; fields are in tesla.
The product basis is ``kron(electron, nucleus)`` with each factor ordered
``m = j, j-1, ..., -j`` along the molecular z (C3) axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

# mu_B/h and mu_N/h in MHz/T, k_B/h in MHz/K
MU_B = 13996.245
MU_N = 7.6226
K_B = 20836.6191

# Published line positions at the calibration field (MHz).
REFERENCE_FREQUENCIES = (333.7, 362.4, 386.2)

# Computational levels |0>..|3> as (m_S, m_I).
COMPUTATIONAL_LABELS = ((0.5, 0.5), (0.5, -0.5), (0.5, -1.5), (0.5, -2.5))


class LabelingError(ValueError):
    """Eigenstates cannot be assigned meaningful |m_S, m_I> labels."""


@dataclass(frozen=True)
class SpinSystemParams:
    """Coupling constants (MHz), g-factors and field configuration."""

    A_par: float = -898.0
    A_perp: float = -615.0
    p: float = -66.0
    g_x: float = 2.9
    g_y: float = 2.9
    g_z: float = 4.3
    g_I: float = -0.2592
    S: float = 0.5
    I: float = 2.5
    B0: tuple[float, float, float] = (0.22, 0.0, 0.0)
    temperature: float = 1.4

    def __post_init__(self):
        object.__setattr__(self, "B0", tuple(float(b) for b in self.B0))
        if len(self.B0) != 3:
            raise ValueError("B0 must be a 3-vector")

    @property
    def dims(self) -> tuple[int, int]:
        return int(round(2 * self.S + 1)), int(round(2 * self.I + 1))

    @property
    def field_magnitude(self) -> float:
        return float(np.linalg.norm(self.B0))

    def with_field(self, magnitude: float, direction: Sequence[float] | None = None):
        """Copy with |B0| set to ``magnitude`` (keeps the current direction by default)."""
        if direction is None:
            direction = self.B0 if self.field_magnitude > 0 else (1.0, 0.0, 0.0)
        n = np.asarray(direction, dtype=float)
        n = n / np.linalg.norm(n)
        return replace(self, B0=tuple(magnitude * n))


def spin_operators(j):
    """Return ``(Jx, Jy, Jz)`` for spin magnitude ``j`` in the |j, m> basis.

    Basis order is m = j, j-1, ..., -j. Raises ``ValueError`` unless 2j is a
    non-negative integer.
    """
    two_j = Fraction(j).limit_denominator(1000) * 2
    if two_j.denominator != 1 or two_j < 0 or abs(float(two_j) - 2 * float(j)) > 1e-12:
        raise ValueError(f"spin magnitude must be a non-negative half-integer, got {j!r}")
    j = float(two_j) / 2
    m = j - np.arange(int(two_j) + 1)
    jz = np.diag(m).astype(complex)
    # <m+1|J+|m> = sqrt(j(j+1) - m(m+1))
    jp = np.diag(np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    jx = (jp + jp.conj().T) / 2
    jy = (jp - jp.conj().T) / 2j
    return jx, jy, jz


def product_operators(params: SpinSystemParams):
    """Electron and nuclear spin operators embedded in the product space."""
    s_ops = spin_operators(params.S)
    i_ops = spin_operators(params.I)
    ds, di = params.dims
    S = [np.kron(op, np.eye(di)) for op in s_ops]
    I = [np.kron(np.eye(ds), op) for op in i_ops]
    return S, I


def build_static_hamiltonian(params: SpinSystemParams) -> np.ndarray:
    """Hyperfine + quadrupole + electron/nuclear Zeeman Hamiltonian in MHz."""
    (Sx, Sy, Sz), (Ix, Iy, Iz) = product_operators(params)
    bx, by, bz = params.B0
    H = (
        params.A_par * Sz @ Iz
        + params.A_perp * (Sx @ Ix + Sy @ Iy)
        + params.p * Iz @ Iz
        + MU_B * (params.g_x * bx * Sx + params.g_y * by * Sy + params.g_z * bz * Sz)
        + MU_N * params.g_I * (bx * Ix + by * Iy + bz * Iz)
    )
    return (H + H.conj().T) / 2


def drive_operator(params: SpinSystemParams) -> np.ndarray:
    """Coupling to a B1 field along z, in MHz per tesla (product basis)."""
    (_, _, Sz), (_, _, Iz) = product_operators(params)
    return MU_B * params.g_z * Sz + MU_N * params.g_I * Iz


@dataclass(frozen=True)
class EigenSystem:
    energies: np.ndarray
    states: np.ndarray
    basis_convention: str = "kron(S, I), m descending, quantized along molecular z"

    @property
    def dim(self) -> int:
        return len(self.energies)

    def to_eigenbasis(self, op: np.ndarray) -> np.ndarray:
        return self.states.conj().T @ op @ self.states

    def reconstruct(self) -> np.ndarray:
        return (self.states * self.energies) @ self.states.conj().T


def diagonalize(H: np.ndarray, atol: float = 1e-10) -> EigenSystem:
    """Eigen-decomposition of a Hermitian matrix, energies ascending."""
    H = np.asarray(H)
    scale = max(1.0, float(np.abs(H).max(initial=0.0)))
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("expected a square matrix")
    if np.abs(H - H.conj().T).max(initial=0.0) > atol * scale:
        raise ValueError("matrix is not Hermitian")
    energies, states = np.linalg.eigh((H + H.conj().T) / 2)
    return EigenSystem(energies, states)


@dataclass(frozen=True)
class Transition:
    eta: int
    lower: int
    upper: int
    frequency: float
    drive: complex  # MHz per tesla of B1


@dataclass(frozen=True)
class LevelMap:
    labels: tuple[tuple[float, float], ...]
    overlaps: np.ndarray
    computational: tuple[int, ...]
    transitions: tuple[Transition, ...] = ()

    def index_of(self, m_s: float, m_i: float) -> int:
        return self.labels.index((m_s, m_i))

    def transition(self, eta: int) -> Transition:
        for tr in self.transitions:
            if tr.eta == eta:
                return tr
        raise KeyError(f"no transition f{eta}")


def _quantized_states(j: float, n: np.ndarray):
    jx, jy, jz = spin_operators(j)
    vals, vecs = np.linalg.eigh(n[0] * jx + n[1] * jy + n[2] * jz)
    order = np.argsort(-vals)
    return np.round(vals[order] * 2) / 2, vecs[:, order]


def label_levels(eig: EigenSystem, params: SpinSystemParams, min_overlap: float = 0.5) -> LevelMap:
    """Assign each eigenstate its dominant |m_S, m_I> along B0.

    Assignment is greedy on descending squared overlap, ties broken by
    lexicographic (m_S, m_I), so it is bijective and deterministic.
    """
    b = np.asarray(params.B0, dtype=float)
    if np.linalg.norm(b) == 0:
        raise LabelingError("B0 = 0: quantization axis undefined")
    n = b / np.linalg.norm(b)
    ms, vs = _quantized_states(params.S, n)
    mi, vi = _quantized_states(params.I, n)
    product = np.kron(vs, vi)
    prod_labels = [(float(a), float(c)) for a in ms for c in mi]
    overlaps = np.abs(product.conj().T @ eig.states) ** 2  # [product, eigen]

    pairs = sorted(
        ((overlaps[p, k], k, p) for k in range(eig.dim) for p in range(eig.dim)),
        key=lambda x: (-round(x[0], 12), prod_labels[x[2]], x[1]),
    )
    assigned: dict[int, int] = {}
    used: set[int] = set()
    for ov, k, p in pairs:
        if k in assigned or p in used:
            continue
        assigned[k] = p
        used.add(p)
        if len(assigned) == eig.dim:
            break
    best = np.array([overlaps[assigned[k], k] for k in range(eig.dim)])
    if best.min() < min_overlap:
        k = int(best.argmin())
        raise LabelingError(
            f"eigenstate {k} has maximal overlap {best[k]:.3f} < {min_overlap} "
            f"with {prod_labels[assigned[k]]}; labels not meaningful at B0={params.B0}"
        )
    labels = tuple(prod_labels[assigned[k]] for k in range(eig.dim))
    computational = ()
    if params.dims == (2, 6):
        computational = tuple(labels.index(lab) for lab in COMPUTATIONAL_LABELS)
    return LevelMap(labels=labels, overlaps=best, computational=computational)


def transition_table(levels: LevelMap, eig: EigenSystem, params: SpinSystemParams) -> LevelMap:
    """Fill in f_eta and the drive matrix element for eta = 1, 2, 3."""
    V = eig.to_eigenbasis(drive_operator(params))
    comp = levels.computational
    transitions = tuple(
        Transition(
            eta=eta,
            lower=comp[eta - 1],
            upper=comp[eta],
            frequency=float(eig.energies[comp[eta]] - eig.energies[comp[eta - 1]]),
            drive=complex(V[comp[eta], comp[eta - 1]]),
        )
        for eta in range(1, len(comp))
    )
    return replace(levels, transitions=transitions)


def thermal_state(eig: EigenSystem, temperature: float) -> np.ndarray:
    """Boltzmann density matrix in the eigenbasis."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if math.isinf(temperature):
        return np.eye(eig.dim, dtype=complex) / eig.dim
    x = -(eig.energies - eig.energies.min()) / (K_B * temperature)
    w = np.exp(x)
    return np.diag(w / w.sum()).astype(complex)


@dataclass(frozen=True)
class SpectralLine:
    lower: int
    upper: int
    label_lower: tuple[float, float]
    label_upper: tuple[float, float]
    frequency: float
    weight: float
    eta: int | None = None


@dataclass(frozen=True)
class SpectrumCurve:
    frequency: np.ndarray
    amplitude: np.ndarray
    lines: tuple[SpectralLine, ...]
    fwhm: float
    kind: str = "gaussian"


def simulate_spectrum(
    levels: LevelMap,
    eig: EigenSystem,
    params: SpinSystemParams,
    temperature: float | None = None,
    fwhm: float = 0.5,
    frequencies: np.ndarray | None = None,
    step: float = 0.02,
) -> SpectrumCurve:
    """NMR absorption spectrum of all Delta m_I = +-1 lines within each m_S branch.

    Stick weight is |<upper|V|lower>|^2 times the thermal population
    difference; each stick is a unit-area Gaussian of the given FWHM, so the
    integrated weight of a line equals its stick weight.
    """
    T = params.temperature if temperature is None else temperature
    pops = np.real(np.diag(thermal_state(eig, T)))
    V = eig.to_eigenbasis(drive_operator(params))
    eta_of = {(tr.lower, tr.upper): tr.eta for tr in levels.transitions}
    if not eta_of and len(levels.computational) > 1:
        c = levels.computational
        eta_of = {(c[k - 1], c[k]): k for k in range(1, len(c))}

    lines = []
    for i in range(eig.dim):
        for j in range(eig.dim):
            (msi, mii), (msj, mij) = levels.labels[i], levels.labels[j]
            if msi != msj or abs(mii - mij) != 1 or eig.energies[i] >= eig.energies[j]:
                continue
            weight = abs(V[j, i]) ** 2 * (pops[i] - pops[j])
            eta = eta_of.get((i, j), eta_of.get((j, i)))
            lines.append(
                SpectralLine(i, j, levels.labels[i], levels.labels[j],
                             float(eig.energies[j] - eig.energies[i]), float(weight), eta)
            )
    lines.sort(key=lambda ln: ln.frequency)

    if frequencies is None:
        f = [ln.frequency for ln in lines] or [0.0]
        lo, hi = min(f) - 10 * fwhm - 5, max(f) + 10 * fwhm + 5
        frequencies = np.arange(lo, hi + step / 2, step)
    frequencies = np.asarray(frequencies, dtype=float)
    sigma = fwhm / (2 * math.sqrt(2 * math.log(2)))
    amplitude = np.zeros_like(frequencies)
    for ln in lines:
        if ln.weight > 0:
            amplitude += ln.weight * np.exp(-0.5 * ((frequencies - ln.frequency) / sigma) ** 2)
    amplitude /= sigma * math.sqrt(2 * math.pi)
    return SpectrumCurve(frequencies, np.clip(amplitude, 0.0, None), tuple(lines), fwhm)


@dataclass(frozen=True)
class QuditSystem:
    """Diagonalized, labeled hardware with drive operator in the eigenbasis.

    Eigenvector phases are fixed so the computational drive elements are real
    and positive; a pulse phase of 0 is then a rotation about y.
    """

    params: SpinSystemParams
    eig: EigenSystem
    levels: LevelMap
    drive: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.eig.dim

    @property
    def energies(self) -> np.ndarray:
        return self.eig.energies

    @property
    def computational(self) -> tuple[int, ...]:
        return self.levels.computational

    def frequency(self, eta: int) -> float:
        return self.levels.transition(eta).frequency

    @property
    def frequencies(self) -> tuple[float, ...]:
        return tuple(tr.frequency for tr in self.levels.transitions)

    def rabi_per_tesla(self, eta: int) -> float:
        return abs(self.levels.transition(eta).drive)

    def thermal_state(self, temperature: float | None = None) -> np.ndarray:
        return thermal_state(self.eig, self.params.temperature if temperature is None else temperature)

    def transition_for_frequency(self, carrier: float, bound: float = 2.0) -> int:
        """Index eta of the computational line within ``bound`` MHz of ``carrier``."""
        best = min(self.levels.transitions, key=lambda tr: abs(tr.frequency - carrier))
        if abs(best.frequency - carrier) > bound:
            raise ValueError(f"carrier {carrier} MHz matches no transition within {bound} MHz")
        return best.eta


def build_system(params: SpinSystemParams | None = None) -> QuditSystem:
    params = params or SpinSystemParams()
    eig = diagonalize(build_static_hamiltonian(params))
    levels = transition_table(label_levels(eig, params), eig, params)
    states = eig.states.copy()
    V = states.conj().T @ drive_operator(params) @ states
    for tr in levels.transitions:
        d = V[tr.upper, tr.lower]
        if abs(d) > 0:
            phase = d / abs(d)
            states[:, tr.upper] *= np.conj(phase)
            V = states.conj().T @ drive_operator(params) @ states
    eig = EigenSystem(eig.energies, states, eig.basis_convention)
    levels = transition_table(levels, eig, params)
    return QuditSystem(params, eig, levels, V)


def fine_tune_field(
    params: SpinSystemParams,
    targets: Sequence[float] = REFERENCE_FREQUENCIES,
    span: float = 0.10,
) -> tuple[SpinSystemParams, tuple[float, ...]]:
    """Rescale |B0| within +-span to best match the target f1..f3."""
    b_nom = params.field_magnitude
    targets = np.asarray(targets, dtype=float)

    def cost(b):
        sys = build_system(params.with_field(b))
        return float(np.sum(((np.array(sys.frequencies) - targets) / targets) ** 2))

    res = minimize_scalar(cost, bounds=(b_nom * (1 - span), b_nom * (1 + span)),
                          method="bounded", options={"xatol": 1e-7})
    tuned = params.with_field(float(res.x))
    return tuned, build_system(tuned).frequencies
