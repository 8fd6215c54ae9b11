"""Independent reference calculations used by the tests.

Nothing here imports the package: Hamiltonians are assembled entry by entry
from angular-momentum matrix elements, propagators use eigen-decomposition
instead of ``expm``, and two-level results use closed forms.
"""

import math

import numpy as np

MU_B = 13996.245
MU_N = 7.6226


def ladder_elements(j):
    """<m+1|J+|m> for m = -j .. j-1 (as a dict keyed by m)."""
    out = {}
    m = -j
    while m < j - 1e-9:
        out[round(m, 1)] = math.sqrt(j * (j + 1) - m * (m + 1))
        m += 1
    return out


def product_hamiltonian(A_par=-898.0, A_perp=-615.0, p=-66.0, g=(2.9, 2.9, 4.3), g_I=-0.2592,
                        B=(0.22, 0.0, 0.0)):
    """Static Hamiltonian filled element by element in the |m_S, m_I> basis (m descending)."""
    ms_vals = [0.5, -0.5]
    mi_vals = [2.5 - k for k in range(6)]
    basis = [(a, b) for a in ms_vals for b in mi_vals]
    idx = {s: k for k, s in enumerate(basis)}
    lad_s, lad_i = ladder_elements(0.5), ladder_elements(2.5)
    H = np.zeros((12, 12), dtype=complex)
    bx, by, bz = B
    for (ms, mi), k in idx.items():
        # diagonal: A_par ms mi + p mi^2 + z Zeeman
        H[k, k] += A_par * ms * mi + p * mi * mi + MU_B * g[2] * bz * ms + MU_N * g_I * bz * mi
        # flip-flop: A_perp/2 (S+ I- + S- I+)
        if ms < 0.5 and mi > -2.5:
            H[idx[(ms + 1, mi - 1)], k] += A_perp / 2 * lad_s[ms] * lad_i[round(mi - 1, 1)]
        if ms > -0.5 and mi < 2.5:
            H[idx[(ms - 1, mi + 1)], k] += A_perp / 2 * lad_s[round(ms - 1, 1)] * lad_i[mi]
        # transverse Zeeman: bx Sx + by Sy = (b- S+ + b+ S-)/2 with b+- = bx +- i by
        if ms < 0.5:
            c = lad_s[ms] / 2
            H[idx[(ms + 1, mi)], k] += MU_B * c * (g[0] * bx - 1j * g[1] * by)
        if ms > -0.5:
            c = lad_s[round(ms - 1, 1)] / 2
            H[idx[(ms - 1, mi)], k] += MU_B * c * (g[0] * bx + 1j * g[1] * by)
        if mi < 2.5:
            c = lad_i[mi] / 2
            H[idx[(ms, mi + 1)], k] += MU_N * g_I * c * (bx - 1j * by)
        if mi > -2.5:
            c = lad_i[round(mi - 1, 1)] / 2
            H[idx[(ms, mi - 1)], k] += MU_N * g_I * c * (bx + 1j * by)
    return H


def computational_gaps(H):
    """Gaps between eigenvalues 8..11 (the four highest levels of the upper branch)."""
    e = np.linalg.eigvalsh(H)
    return np.diff(e[8:12])


def unitary_eig(H, t):
    """exp(-2 pi i H t) by eigen-decomposition."""
    w, v = np.linalg.eigh(H)
    return (v * np.exp(-2j * np.pi * w * t)) @ v.conj().T


def tim_hamiltonian(b, J):
    sy = np.array([[0, -1j], [1j, 0]]) / 2
    sz = np.diag([0.5, -0.5])
    i2 = np.eye(2)
    return b * (np.kron(sy, i2) + np.kron(i2, sy)) + J * np.kron(sz, sz)


def trotter_unitary(b, J, t, n):
    """(exp(-i zz J t/n) exp(-i (sy1 + sy2) b t/n))^n with 2 pi absorbed into the rates."""
    sy = np.array([[0, -1j], [1j, 0]]) / 2
    sz = np.diag([0.5, -0.5])
    i2 = np.eye(2)
    rot = unitary_eig(b * (np.kron(sy, i2) + np.kron(i2, sy)), t / n)
    ising = unitary_eig(J * np.kron(sz, sz), t / n)
    return np.linalg.matrix_power(ising @ rot, n)


def detuned_rabi_excitation(omega, detuning, tau):
    """Excited population of a two-level system after a square pulse (linear frequencies)."""
    w = math.hypot(omega, detuning)
    return (omega / w) ** 2 * math.sin(math.pi * w * tau) ** 2


def nutation_envelope(omega, tau, sigma):
    """Gaussian average of sin(2 pi omega tau s) over s ~ N(1, sigma): envelope factor."""
    return math.exp(-0.5 * (2 * math.pi * omega * tau * sigma) ** 2)
