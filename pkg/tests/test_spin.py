import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import computational_gaps, product_hamiltonian
from molqudit.spin import (COMPUTATIONAL_LABELS, EigenSystem, LabelingError, SpinSystemParams,
                           build_static_hamiltonian, build_system, diagonalize, fine_tune_field,
                           label_levels, simulate_spectrum, spin_operators, thermal_state,
                           transition_table)

# gaps f1..f3 at 0.22 T along x from the element-wise oracle Hamiltonian
ORACLE_GAPS_022 = (331.05329281, 357.41022827, 379.56377657)
ORACLE_GAPS_012 = (315.97693945, 329.74187084, 343.27283565)
PUBLISHED = (333.7, 362.4, 386.2)

fields = st.tuples(*(st.floats(-1.0, 1.0) for _ in range(3)))


def test_spin_half_jz():
    _, _, jz = spin_operators(0.5)
    assert np.allclose(jz, np.diag([0.5, -0.5]))


def test_spin_one_raising_coefficient():
    jx, jy, _ = spin_operators(1)
    jp = jx + 1j * jy
    minus_one = np.array([0, 0, 1.0])
    assert np.allclose(jp @ minus_one, [0, math.sqrt(2), 0])


@pytest.mark.parametrize("j", [0.5, 1, 1.5, 2.5, 3])
def test_commutation_and_hermiticity(j):
    jx, jy, jz = spin_operators(j)
    assert np.abs(jx @ jy - jy @ jx - 1j * jz).max() < 1e-12
    for op in (jx, jy, jz):
        assert np.allclose(op, op.conj().T)
    assert np.allclose(jx @ jx + jy @ jy + jz @ jz, j * (j + 1) * np.eye(int(2 * j + 1)))


@pytest.mark.parametrize("bad", [0.3, 1.25, -0.5])
def test_spin_operators_reject_non_half_integer(bad):
    with pytest.raises(ValueError):
        spin_operators(bad)


def test_zero_couplings_give_zero_hamiltonian():
    params = SpinSystemParams(A_par=0, A_perp=0, p=0, B0=(0, 0, 0))
    assert np.abs(build_static_hamiltonian(params)).max() == 0


def test_default_parameters():
    p = SpinSystemParams()
    assert (p.A_par, p.A_perp, p.p) == (-898.0, -615.0, -66.0)
    assert (p.g_x, p.g_y, p.g_z, p.g_I, p.temperature) == (2.9, 2.9, 4.3, -0.2592, 1.4)
    assert p.dims == (2, 6)


@settings(max_examples=40, deadline=None)
@given(fields, st.floats(1.0, 5.0), st.floats(-1.0, 1.0))
def test_trace_independent_of_field_and_g(b, gz, gI):
    H = build_static_hamiltonian(SpinSystemParams(g_z=gz, g_I=gI, B0=b))
    assert abs(np.trace(H) - (-2310.0)) < 1e-9
    assert np.abs(H - H.conj().T).max() < 1e-12


def test_matches_elementwise_oracle():
    H = build_static_hamiltonian(SpinSystemParams())
    assert np.abs(H - product_hamiltonian()).max() < 1e-9


def test_gaps_near_published_lines(system22):
    for f, ref in zip(system22.frequencies, PUBLISHED):
        assert abs(f - ref) / ref < 0.02


def test_gaps_match_frozen_oracle(system22, system12):
    assert np.allclose(system22.frequencies, ORACLE_GAPS_022, atol=1e-6)
    assert np.allclose(system12.frequencies, ORACLE_GAPS_012, atol=1e-6)
    assert np.allclose(computational_gaps(product_hamiltonian(B=(0.12, 0, 0))), ORACLE_GAPS_012, atol=1e-6)


def test_diagonalize_diagonal_input():
    vals = np.array([3.0, -1.0, 2.0, 0.5])
    eig = diagonalize(np.diag(vals))
    assert np.allclose(eig.energies, np.sort(vals))
    assert np.allclose(np.abs(eig.states), np.eye(4)[:, np.argsort(vals)])


def test_diagonalize_rejects_non_hermitian():
    with pytest.raises(ValueError):
        diagonalize(np.array([[0, 1], [0, 0]], dtype=complex))


def test_default_spectrum_is_nondegenerate(system22):
    assert np.diff(system22.energies).min() > 1.0
    assert len(set(np.round(system22.energies, 6))) == 12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_reconstruction_of_random_hermitian(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(12, 12)) + 1j * rng.normal(size=(12, 12))
    H = (a + a.conj().T) * 100
    eig = diagonalize(H)
    assert np.linalg.norm(eig.reconstruct() - H) / np.linalg.norm(H) < 1e-8
    assert np.abs(eig.states.conj().T @ eig.states - np.eye(12)).max() < 1e-10
    assert np.all(np.diff(eig.energies) >= 0)


def test_factorized_limit_labels_exact():
    params = SpinSystemParams(A_perp=0.0, p=0.0, B0=(0.0, 0.0, 0.5))
    eig = diagonalize(build_static_hamiltonian(params))
    levels = label_levels(eig, params)
    assert np.allclose(levels.overlaps, 1.0)


def test_zero_field_labeling_fails():
    params = SpinSystemParams(B0=(0.0, 0.0, 0.0))
    eig = diagonalize(build_static_hamiltonian(params))
    with pytest.raises(LabelingError):
        label_levels(eig, params)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.12, 0.22))
def test_labels_bijective_across_working_fields(b):
    sys_ = build_system(SpinSystemParams(B0=(b, 0.0, 0.0)))
    labels = sys_.levels.labels
    assert len(set(labels)) == 12
    assert sys_.levels.overlaps.min() > 0.5
    assert tuple(labels[k] for k in sys_.computational) == COMPUTATIONAL_LABELS
    f = sys_.frequencies
    assert f[0] < f[1] < f[2]


def test_drive_elements_nonzero_and_gauged(system22):
    for tr in system22.levels.transitions:
        assert abs(tr.drive) > 1000
        assert abs(tr.drive.imag) < 1e-9 and tr.drive.real > 0


def test_drive_vanishes_without_mixing():
    params = SpinSystemParams(A_perp=0.0, B0=(0.0, 0.0, 0.3))
    eig = diagonalize(build_static_hamiltonian(params))
    levels = transition_table(label_levels(eig, params), eig, params)
    assert all(abs(tr.drive) < 1e-9 for tr in levels.transitions)


def test_thermal_state_properties(system22):
    rho = thermal_state(system22.eig, 1.4)
    assert abs(np.trace(rho) - 1) < 1e-12
    assert np.linalg.eigvalsh(rho).min() >= 0
    H = np.diag(system22.energies)
    assert np.abs(H @ rho - rho @ H).max() < 1e-10
    assert np.all(np.diff(np.real(np.diag(rho))) < 0)


def test_infinite_temperature_is_maximally_mixed(system22):
    assert np.allclose(thermal_state(system22.eig, math.inf), np.eye(12) / 12)


@pytest.mark.parametrize("T", [0.0, -1.0])
def test_thermal_rejects_non_positive_temperature(system22, T):
    with pytest.raises(ValueError):
        thermal_state(system22.eig, T)


def test_spectrum_flat_at_infinite_temperature(system22):
    curve = simulate_spectrum(system22.levels, system22.eig, system22.params, temperature=math.inf)
    assert np.abs(curve.amplitude).max() == 0


def test_spectrum_peaks_and_widths(system22):
    curve = simulate_spectrum(system22.levels, system22.eig, system22.params, step=0.005)
    assert np.all(curve.amplitude >= 0)
    f, a = curve.frequency, curve.amplitude
    for target in system22.frequencies:
        window = np.abs(f - target) < 2.0
        peak = f[window][np.argmax(a[window])]
        assert abs(peak - target) < 0.01
        half = a[window] >= a[window].max() / 2
        assert abs(np.ptp(f[window][half]) - 0.5) < 0.02
    assert min(np.diff(system22.frequencies)) > 40 * curve.fwhm


def test_line_area_equals_stick_weight(system22):
    curve = simulate_spectrum(system22.levels, system22.eig, system22.params, step=0.002)
    line = next(ln for ln in curve.lines if ln.eta == 1)
    window = np.abs(curve.frequency - line.frequency) < 3.0
    area = np.trapezoid(curve.amplitude[window], curve.frequency[window])
    assert abs(area / line.weight - 1) < 1e-6


def test_fine_tune_stays_in_range_and_improves_match():
    params = SpinSystemParams()
    tuned, freqs = fine_tune_field(params)
    assert 0.198 - 1e-9 <= tuned.field_magnitude <= 0.242 + 1e-9
    err = lambda fs: max(abs(a - b) / b for a, b in zip(fs, PUBLISHED))
    assert err(freqs) < err(build_system(params).frequencies)
    assert err(freqs) < 0.01
