"""Deterministic least-squares fits for decay and nutation curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit


class FitError(RuntimeError):
    """The data does not support the requested model."""


@dataclass(frozen=True)
class DecayFit:
    kind: str  # "exponential" | "damped_cosine"
    time_constant: float
    amplitude: float
    offset: float = 0.0
    frequency: float | None = None
    phase: float | None = None
    residual_norm: float = 0.0
    stderr: tuple[float, ...] = ()

    def model(self, t):
        t = np.asarray(t, dtype=float)
        env = self.amplitude * np.exp(-t / self.time_constant)
        if self.kind == "damped_cosine":
            env = env * np.cos(2 * np.pi * self.frequency * t + self.phase)
        return env + self.offset


def _stderr(pcov) -> tuple[float, ...]:
    return tuple(float(x) for x in np.sqrt(np.abs(np.diag(pcov))))


def fit_exponential(t, y, offset: bool = False) -> DecayFit:
    """Fit ``A exp(-t/T) (+ c)``.

    Raises ``FitError`` for curves without a resolvable decay (flat data,
    growth, or non-finite output).
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < (4 if offset else 3):
        raise FitError("too few points for an exponential fit")
    span = np.ptp(y)
    scale = max(np.abs(y).max(), 1e-300)
    if span <= 1e-9 * scale or span == 0:
        raise FitError("flat curve: no exponential decay to fit")
    c0 = y[-1] if offset else 0.0
    a0 = y[0] - c0
    # initial time constant from the 1/e crossing of the normalized curve
    norm = (y - c0) / a0 if a0 != 0 else np.ones_like(y)
    below = np.nonzero(norm < np.exp(-1))[0]
    T0 = (t[below[0]] - t[0]) if len(below) and t[below[0]] > t[0] else np.ptp(t)
    if offset:
        f = lambda x, A, T, c: A * np.exp(-x / T) + c
        p0 = (a0, T0, c0)
    else:
        f = lambda x, A, T: A * np.exp(-x / T)
        p0 = (a0, T0)
    try:
        popt, pcov = curve_fit(f, t, y, p0=p0, maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"exponential fit failed: {exc}") from exc
    T = popt[1]
    if not np.all(np.isfinite(popt)) or T <= 0 or T > 1e3 * max(np.ptp(t), 1e-12):
        raise FitError(f"exponential fit diverged (T = {T})")
    res = float(np.linalg.norm(f(t, *popt) - y))
    return DecayFit("exponential", float(T), float(popt[0]),
                    float(popt[2]) if offset else 0.0, residual_norm=res, stderr=_stderr(pcov))


def fit_damped_cosine(t, y, offset: bool = True) -> DecayFit:
    """Fit ``A exp(-t/T) cos(2 pi f t + phi) + c`` with an FFT frequency guess."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < 6:
        raise FitError("too few points for a damped cosine fit")
    if np.ptp(y) <= 1e-12:
        raise FitError("flat curve: no oscillation to fit")
    dt = np.mean(np.diff(t))
    c0 = float(np.mean(y)) if offset else 0.0
    n_pad = 16 * len(y)
    spec = np.abs(np.fft.rfft(y - c0, n=n_pad))
    freqs = np.fft.rfftfreq(n_pad, dt)
    f0 = float(freqs[1:][np.argmax(spec[1:])])
    a0 = float(np.max(np.abs(y - c0)))
    phi0 = float(np.angle(np.sum((y - c0) * np.exp(-2j * np.pi * f0 * t))))
    T0 = float(np.ptp(t))

    def f(x, A, T, fr, ph, c=0.0):
        return A * np.exp(-x / T) * np.cos(2 * np.pi * fr * x + ph) + c

    p0 = [a0, T0, f0, phi0] + ([c0] if offset else [])
    lower = [0, 1e-6 * T0, 0, -np.inf] + ([-np.inf] if offset else [])
    upper = [np.inf, np.inf, np.inf, np.inf] + ([np.inf] if offset else [])
    try:
        popt, pcov = curve_fit(f, t, y, p0=p0, bounds=(lower, upper), maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"damped cosine fit failed: {exc}") from exc
    if not np.all(np.isfinite(popt)):
        raise FitError("damped cosine fit diverged")
    res = float(np.linalg.norm(f(t, *popt) - y))
    return DecayFit("damped_cosine", float(popt[1]), float(popt[0]),
                    float(popt[4]) if offset else 0.0, float(popt[2]),
                    float(np.angle(np.exp(1j * popt[3]))), res, _stderr(pcov))
