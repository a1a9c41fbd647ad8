"""Shaping filters for colored noise and detector calibration spectra.

A shaping filter turns white noise into a stationary colored process,

    d xi = F xi dt + G_drive d zeta      <d zeta d zeta^T> = W_drive dt
    s(t) = H_out xi,

and is meant to be attached to a deterministic input channel of a state-space
model (see `statespace.augment_colored_noise`).  Spectra here are two-sided
densities in angular frequency; user-facing constructors take Hz and convert
internally (omega = 2 pi f).  A one-sided density in 1/Hz converts to this
convention by a factor 1/(4 pi): S_two(omega) = S_one(f) / (4 pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ShapingFilter",
    "filter_spectrum",
    "lorentzian_line",
    "broadband_filter",
    "self_homodyne_gain",
    "frequency_noise_spectrum",
    "direct_detection_spectrum",
    "homodyne_spectrum",
]

TWO_SIDED_PER_ONE_SIDED = 1.0 / (4.0 * math.pi)


@dataclass(frozen=True)
class ShapingFilter:
    """State-space colored-noise generator with a scalar output."""

    F: np.ndarray
    G_drive: np.ndarray
    W_drive: np.ndarray
    H_out: np.ndarray
    label: str = ""

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        k = F.shape[0]
        if F.shape != (k, k):
            raise ValueError(f"F must be square, got {F.shape}")
        G = np.asarray(self.G_drive, dtype=float)
        if G.size:
            G = G.reshape(k, -1)
        else:
            G = G.reshape(k, G.shape[1] if G.ndim == 2 else 0)
        r = G.shape[1]
        W = np.asarray(self.W_drive, dtype=float).reshape(r, r)
        H = np.asarray(self.H_out, dtype=float).reshape(1, k)
        for name, val in (("F", F), ("G_drive", G), ("W_drive", W), ("H_out", H)):
            val = np.ascontiguousarray(val)
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def order(self) -> int:
        return self.F.shape[0]

    def validate(self) -> list:
        """Diagnostics: F must be Hurwitz and W_drive symmetric PSD for a
        stationary noise process (marginal filters are representable but
        flagged)."""
        diags = []
        if self.order:
            lam = np.linalg.eigvals(self.F)
            if np.max(lam.real) >= 0:
                diags.append(
                    f"F not Hurwitz (max Re eigenvalue {np.max(lam.real):.3e})")
        W = self.W_drive
        if W.size:
            if np.max(np.abs(W - W.T)) > 1e-12 * max(np.max(np.abs(W)), 1.0):
                diags.append("W_drive not symmetric")
            elif np.linalg.eigvalsh(0.5 * (W + W.T))[0] < \
                    -1e-12 * max(np.max(np.abs(W)), 1.0):
                diags.append("W_drive not positive semidefinite")
        return diags


def filter_spectrum(filt: ShapingFilter, omega) -> np.ndarray:
    """Two-sided output spectral density of the shaping filter,
    S(w) = |H (i w I - F)^-1 G|^2-weighted W_drive (scalar output)."""
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    k = filt.order
    out = np.empty(om.shape)
    I = np.eye(k)
    for i, w in enumerate(om):
        T = filt.H_out @ np.linalg.solve(1j * w * I - filt.F, filt.G_drive)
        out[i] = (T @ filt.W_drive @ T.conj().T).real[0, 0]
    return out[0] if np.ndim(omega) == 0 else out


def lorentzian_line(f0_hz: float, linewidth_hz: float, peak: float,
                    label: str = "") -> ShapingFilter:
    """Lorentzian noise line centered at f0_hz with the given FWHM and exact
    peak spectral density (two-sided, rad/s convention).

    Uses a two-state resonant filter (rotating pair with isotropic drive),
    collapsing to a one-state low-pass when f0_hz == 0.
    """
    if linewidth_hz <= 0:
        raise ValueError(f"linewidth must be positive, got {linewidth_hz!r}")
    if peak < 0:
        raise ValueError(f"peak density must be nonnegative, got {peak!r}")
    gamma = math.pi * linewidth_hz          # HWHM in rad/s
    w0 = 2.0 * math.pi * f0_hz
    if f0_hz == 0.0:
        c = peak * gamma ** 2
        return ShapingFilter(F=[[-gamma]], G_drive=[[1.0]], W_drive=[[c]],
                             H_out=[[1.0]], label=label)
    if f0_hz < 0:
        raise ValueError(f"center frequency must be nonnegative, got {f0_hz!r}")
    # Exact on-peak density of the two-state filter below is
    # c (2 w0^2 + gamma^2) / (gamma^2 (gamma^2 + 4 w0^2)); solve for c.
    c = peak * gamma ** 2 * (gamma ** 2 + 4 * w0 ** 2) / (2 * w0 ** 2 + gamma ** 2)
    F = [[-gamma, w0], [-w0, -gamma]]
    return ShapingFilter(F=F, G_drive=np.eye(2), W_drive=c * np.eye(2),
                         H_out=[[1.0, 0.0]], label=label)


def broadband_filter(F, G_drive, W_drive, H_out, label: str = "") -> ShapingFilter:
    """Wrap user-supplied shaping-filter coefficients, rejecting unstable or
    degenerate definitions."""
    filt = ShapingFilter(F=F, G_drive=G_drive, W_drive=W_drive, H_out=H_out,
                         label=label)
    if filt.order == 0:
        raise ValueError("broadband filter needs at least one state")
    diags = filt.validate()
    if diags:
        raise ValueError("invalid shaping filter: " + "; ".join(diags))
    return filt


def self_homodyne_gain(omega, delta_t: float):
    """Delay-line interference gain 4 sin^2(omega delta_t / 2).

    Evaluated after IEEE remainder reduction of the phase by pi so the zeros
    at omega = k 2 pi / delta_t are exact in floating point.
    """
    if delta_t <= 0:
        raise ValueError(f"delay must be positive, got {delta_t!r}")
    om = np.asarray(omega, dtype=float)
    half = np.remainder(om * (delta_t / 2.0), math.pi)
    # IEEE-style reduction: fold to [-pi/2, pi/2) so exact multiples map to 0
    half = np.where(half > math.pi / 2, half - math.pi, half)
    return 4.0 * np.sin(half) ** 2


def frequency_noise_spectrum(s_phase, omega):
    """Convert a phase-noise density to frequency(-rate) noise:
    S_dphi(omega) = omega^2 S_phi(omega), pointwise."""
    s = np.asarray(s_phase, dtype=float)
    om = np.asarray(omega, dtype=float)
    return om ** 2 * s


def direct_detection_spectrum(s_amp, beta0: float, var_amp: float = 0.0):
    """Photocurrent density of direct detection of a carrier with relative
    amplitude noise: 4 beta0^2 S_amp(omega) + (beta0^2 + Var(amp))."""
    s = np.asarray(s_amp, dtype=float)
    return 4.0 * beta0 ** 2 * s + (beta0 ** 2 + var_amp)


def homodyne_spectrum(s_sig, s_amp, beta0: float, lo_ratio: float, phi: float,
                      var_amp: float = 0.0, var_x: float = 0.0,
                      var_y: float = 0.0):
    """Balanced-homodyne photocurrent density at local-oscillator phase phi.

    s_sig is the density of the measured signal quadrature x(phi), s_amp the
    relative laser amplitude-noise density and lo_ratio the residual
    signal/local-oscillator amplitude ratio r.  The flat floor collects the
    carrier shot noise of both arms and the static quadrature variances:

        (beta0^2 + Var(amp)) (1 + r^2) + Var(x) + Var(y)
        + 4 beta0^2 s_sig + (r cos phi)^2 16 beta0^2 s_amp.
    """
    s_sig = np.asarray(s_sig, dtype=float)
    s_amp = np.asarray(s_amp, dtype=float)
    floor = (beta0 ** 2 + var_amp) * (1.0 + lo_ratio ** 2) + var_x + var_y
    return (floor + 4.0 * beta0 ** 2 * s_sig
            + (lo_ratio * math.cos(phi)) ** 2 * 16.0 * beta0 ** 2 * s_amp)
