"""State-space models of a driven two-beam optomechanical cavity.

One mechanical oscillator (plus optional extra mechanical modes) couples to
two intracavity field modes: a beam detuned near the mechanical frequency
and a resonant beam.  States are quadrature pairs in zero-point units,
ordered (q, p) per mechanical mode, then (x, y) for the detuned and resonant
beams.  Deterministic inputs are the classical laser noise channels
(amplitude, phase-rate) of each beam; quantum noise (thermal force and
vacuum shot noise through both mirrors) enters as white process noise, with
the input-mirror shot noise reappearing in the measurement record, hence the
process/measurement cross-correlation.

All rates are rad/s.  Detection is modelled as a static cascade: optical
loss (beam splitter against vacuum) followed by balanced homodyne readout of
one quadrature per beam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants

from .sim import thermal_occupation
from .statespace import (StateSpaceModel, augment_colored_noise,
                         drop_input_channels, parallel_connect, series_connect)

__all__ = [
    "BEAMS",
    "NOISE_CHANNELS",
    "BeamParams",
    "PhysicalParams",
    "DerivedParams",
    "derive_params",
    "power_for_coupling",
    "build_cavity_model",
    "build_loss_model",
    "build_homodyne_model",
    "assemble_full_model",
    "state_labels",
]

BEAMS = ("detuned", "resonant")

# Deterministic input channels of the cavity model, in column order.
NOISE_CHANNELS = ("amplitude_detuned", "frequency_detuned",
                  "amplitude_resonant", "frequency_resonant")


def _phase_entries(phase):
    """Normalize a homodyne phase (float or [(t_start, phi), ...]) to a
    sorted tuple of (t, phi) with the base value first."""
    if np.isscalar(phase):
        return ((0.0, float(phase)),)
    entries = tuple((float(t), float(v)) for t, v in phase)
    if not entries:
        raise ValueError("empty homodyne phase schedule")
    if any(t2 <= t1 for (t1, _), (t2, _) in zip(entries, entries[1:])):
        raise ValueError("homodyne phase schedule times must be strictly increasing")
    return entries


@dataclass(frozen=True)
class BeamParams:
    """Drive and detection parameters of one beam."""

    power: float               # optical power, W
    omega0: float              # carrier frequency, rad/s
    detuning: float            # cavity detuning, rad/s
    transmission: float = 1.0  # detection-path power transmission eta_t
    homodyne_phase: tuple = 0.0  # rad, or ((t_start, phi), ...)

    def __post_init__(self):
        if self.power < 0:
            raise ValueError(f"beam power must be nonnegative, got {self.power!r}")
        if self.omega0 <= 0:
            raise ValueError(f"carrier frequency must be positive, got {self.omega0!r}")
        if not 0.0 <= self.transmission <= 1.0:
            raise ValueError(
                f"transmission must lie in [0, 1], got {self.transmission!r}")
        object.__setattr__(self, "homodyne_phase",
                           _phase_entries(self.homodyne_phase))

    @property
    def base_phase(self) -> float:
        return self.homodyne_phase[0][1]


@dataclass(frozen=True)
class PhysicalParams:
    """Physical description of the optomechanical system.

    Mechanical arrays are aligned: entry 0 is the fundamental mode, further
    entries are extra (spurious) modes with coupling relative to the
    fundamental given by coupling_scale.
    """

    omega_m: tuple             # mechanical frequencies, rad/s
    gamma_m: tuple             # mechanical damping rates (FWHM), rad/s
    kappa1: float              # input-mirror decay (HWHM), rad/s
    kappa2: float              # loss-mirror decay (HWHM), rad/s
    g0: float                  # single-photon coupling, rad/s
    detuned: BeamParams
    resonant: BeamParams
    temperature: float         # bath temperature, K
    coupling_scale: tuple = None

    def __post_init__(self):
        om = tuple(float(w) for w in np.atleast_1d(self.omega_m))
        gm = tuple(float(g) for g in np.atleast_1d(self.gamma_m))
        cs = self.coupling_scale
        cs = tuple(float(c) for c in np.atleast_1d(cs)) if cs is not None \
            else (1.0,) * len(om)
        if not om:
            raise ValueError("at least one mechanical mode required")
        if len(gm) != len(om) or len(cs) != len(om):
            raise ValueError(
                f"mechanical arrays must align: {len(om)} frequencies, "
                f"{len(gm)} damping rates, {len(cs)} coupling scales")
        if any(w <= 0 for w in om) or any(g <= 0 for g in gm):
            raise ValueError("mechanical frequencies and damping rates must be positive")
        if self.kappa1 < 0 or self.kappa2 < 0 or self.kappa1 + self.kappa2 <= 0:
            raise ValueError("mirror rates must be nonnegative with kappa1+kappa2 > 0")
        if self.g0 < 0:
            raise ValueError(f"single-photon coupling must be nonnegative, got {self.g0!r}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be nonnegative, got {self.temperature!r}")
        object.__setattr__(self, "omega_m", om)
        object.__setattr__(self, "gamma_m", gm)
        object.__setattr__(self, "coupling_scale", cs)

    @property
    def n_modes(self) -> int:
        return len(self.omega_m)

    def beam(self, name: str) -> BeamParams:
        if name not in BEAMS:
            raise KeyError(f"unknown beam {name!r}, expected one of {BEAMS}")
        return getattr(self, name)


@dataclass(frozen=True)
class DerivedParams:
    """Working-point quantities computed from PhysicalParams."""

    kappa: float               # total cavity decay (HWHM), rad/s
    alpha0: tuple              # intracavity field magnitude per beam (zpf units)
    theta: tuple               # intracavity phase arctan(detuning/kappa) per beam
    g: tuple                   # linearized coupling sqrt(2) g0 |alpha0| per beam
    nbar: tuple                # thermal occupation per mechanical mode


def derive_params(p: PhysicalParams) -> DerivedParams:
    kappa = p.kappa1 + p.kappa2
    alpha0, theta, g = [], [], []
    for name in BEAMS:
        b = p.beam(name)
        photon_flux = b.power / (constants.hbar * b.omega0)
        a0 = math.sqrt(2.0 * p.kappa1 * photon_flux
                       / (kappa ** 2 + b.detuning ** 2))
        alpha0.append(a0)
        theta.append(math.atan2(b.detuning, kappa))
        g.append(math.sqrt(2.0) * p.g0 * a0)
    nbar = tuple(thermal_occupation(p.temperature, w) for w in p.omega_m)
    return DerivedParams(kappa=kappa, alpha0=tuple(alpha0), theta=tuple(theta),
                         g=tuple(g), nbar=nbar)


def power_for_coupling(p: PhysicalParams, g_target: float, beam: str) -> float:
    """Beam power producing a requested linearized coupling at the current
    working point (inverse of the derive_params chain)."""
    if p.g0 <= 0:
        raise ValueError("single-photon coupling must be positive to invert")
    b = p.beam(beam)
    kappa = p.kappa1 + p.kappa2
    a0_sq = (g_target / (math.sqrt(2.0) * p.g0)) ** 2
    return a0_sq * (kappa ** 2 + b.detuning ** 2) * constants.hbar * b.omega0 \
        / (2.0 * p.kappa1)


def build_cavity_model(p: PhysicalParams,
                       d: DerivedParams = None) -> StateSpaceModel:
    """Linearized cavity dynamics with classical-noise input channels.

    States: (q, p) per mechanical mode, then (x, y) per beam.
    Inputs: NOISE_CHANNELS order (amplitude then phase-rate, per beam).
    Process noise: one thermal channel per mode, then input/loss mirror
    vacuum pairs per beam; the input-mirror pairs are the same white
    processes that reach the detector, encoded in the cross intensity M.
    Raw outputs: the four reflected quadratures before loss and homodyne.
    """
    if d is None:
        d = derive_params(p)
    nm = p.n_modes
    n = 2 * nm + 4
    kappa = d.kappa

    A = np.zeros((n, n))
    for k in range(nm):
        w, g_fwhm = p.omega_m[k], p.gamma_m[k]
        A[2 * k:2 * k + 2, 2 * k:2 * k + 2] = [[0.0, w], [-w, -g_fwhm]]
    for i, name in enumerate(BEAMS):
        b = p.beam(name)
        r0 = 2 * nm + 2 * i
        A[r0:r0 + 2, r0:r0 + 2] = [[-kappa, b.detuning], [-b.detuning, -kappa]]
        for k in range(nm):
            gik = p.coupling_scale[k] * d.g[i]
            ct, st = math.cos(d.theta[i]), math.sin(d.theta[i])
            A[2 * k + 1, r0] += gik * ct
            A[2 * k + 1, r0 + 1] += -gik * st
            A[r0, 2 * k] += gik * st
            A[r0 + 1, 2 * k] += gik * ct

    B = np.zeros((n, 4))
    for i, name in enumerate(BEAMS):
        b = p.beam(name)
        r0 = 2 * nm + 2 * i
        ct, st = math.cos(d.theta[i]), math.sin(d.theta[i])
        B[r0, 2 * i] = math.sqrt(2.0 * p.kappa1)
        B[r0, 2 * i + 1] = d.alpha0[i] * st
        B[r0 + 1, 2 * i + 1] = d.alpha0[i] * ct

    q = nm + 8
    L = np.zeros((n, q))
    Wdiag = np.empty(q)
    for k in range(nm):
        L[2 * k + 1, k] = -math.sqrt(2.0 * p.gamma_m[k])
        Wdiag[k] = d.nbar[k] + 0.5
    for i in range(2):
        r0 = 2 * nm + 2 * i
        for j, kap in enumerate((p.kappa1, p.kappa2)):
            c0 = nm + 4 * i + 2 * j
            L[r0:r0 + 2, c0:c0 + 2] = -math.sqrt(2.0 * kap) * np.eye(2)
            Wdiag[c0:c0 + 2] = 0.5
    W = np.diag(Wdiag)

    C = np.zeros((4, n))
    D = np.zeros((4, 4))
    for i in range(2):
        r0 = 2 * nm + 2 * i
        C[2 * i:2 * i + 2, r0:r0 + 2] = math.sqrt(2.0 * p.kappa1) * np.eye(2)
        D[2 * i, 2 * i] = 1.0
    V = 0.5 * np.eye(4)
    M = np.zeros((q, 4))
    for i in range(2):
        c0 = nm + 4 * i
        M[c0, 2 * i] = 0.5
        M[c0 + 1, 2 * i + 1] = 0.5
    return StateSpaceModel(A, B, C, D, L, W, V, M)


def build_loss_model(eta_t: float) -> StateSpaceModel:
    """Static optical loss on one beam's quadrature pair.

    Beam-splitter of power transmission eta_t (mixing angle
    tau = arccos(sqrt(eta_t))) against a vacuum port of covariance I/2; the
    kept output is cos(tau) * signal + sin(tau) * vacuum, so the vacuum
    admixture appears as measurement noise of intensity (1 - eta_t)/2 I.
    A vacuum-level input therefore leaves with vacuum-level variance for any
    eta_t; at eta_t = 0 the signal is fully discarded.
    """
    if not 0.0 <= eta_t <= 1.0:
        raise ValueError(f"transmission must lie in [0, 1], got {eta_t!r}")
    tau = math.acos(math.sqrt(eta_t))
    D = math.cos(tau) * np.eye(2)
    V = 0.5 * math.sin(tau) ** 2 * np.eye(2)
    return StateSpaceModel(A=np.zeros((0, 0)), B=np.zeros((0, 2)),
                           C=np.zeros((2, 0)), D=D, L=np.zeros((0, 0)),
                           W=np.zeros((0, 0)), V=V, M=np.zeros((0, 2)))


def build_homodyne_model(phase_detuned, phase_resonant) -> StateSpaceModel:
    """Static homodyne readout of one quadrature per beam (noise-free).

    Each phase is a float or a ((t_start, phi), ...) schedule; time-varying
    phases become a measurement schedule on the returned model.
    """
    pd = _phase_entries(phase_detuned)
    pr = _phase_entries(phase_resonant)

    def dmat(phi_d, phi_r):
        return np.array([
            [math.cos(phi_d), math.sin(phi_d), 0.0, 0.0],
            [0.0, 0.0, math.cos(phi_r), math.sin(phi_r)],
        ])

    def value_at(entries, t):
        v = entries[0][1]
        for ts, val in entries:
            if t >= ts:
                v = val
        return v

    times = sorted({t for t, _ in pd} | {t for t, _ in pr})
    base_t = times[0]
    D = dmat(value_at(pd, base_t), value_at(pr, base_t))
    schedule = tuple(
        (t, np.zeros((2, 0)), dmat(value_at(pd, t), value_at(pr, t)))
        for t in times[1:])
    return StateSpaceModel(A=np.zeros((0, 0)), B=np.zeros((0, 4)),
                           C=np.zeros((2, 0)), D=D, L=np.zeros((0, 0)),
                           W=np.zeros((0, 0)), V=np.zeros((2, 2)),
                           M=np.zeros((0, 2)), schedule=schedule)


def assemble_full_model(p: PhysicalParams, noise_filters: dict = None,
                        d: DerivedParams = None) -> StateSpaceModel:
    """Cavity + laser-noise shaping filters + loss + homodyne, as measured.

    noise_filters maps NOISE_CHANNELS names to ShapingFilter instances;
    channels without a filter are dropped (driven by zero), so the assembled
    model has no deterministic inputs left.  Shaping-filter states append
    after the cavity states in the order the channels appear in
    NOISE_CHANNELS.
    """
    if d is None:
        d = derive_params(p)
    noise_filters = dict(noise_filters or {})
    unknown = set(noise_filters) - set(NOISE_CHANNELS)
    if unknown:
        raise ValueError(f"unknown noise channels: {sorted(unknown)}; "
                         f"expected names from {NOISE_CHANNELS}")

    sys = build_cavity_model(p, d)
    # `remaining` tracks the current column index of each still-present
    # deterministic channel while augmentation deletes columns one by one.
    remaining = list(NOISE_CHANNELS)
    for name in NOISE_CHANNELS:
        if name in noise_filters:
            sys = augment_colored_noise(sys, noise_filters[name],
                                        remaining.index(name))
            remaining.remove(name)
    if remaining:
        sys = drop_input_channels(sys, range(len(remaining)))

    loss = parallel_connect(build_loss_model(p.detuned.transmission),
                            build_loss_model(p.resonant.transmission))
    sys = series_connect(sys, loss)
    hom = build_homodyne_model(p.detuned.homodyne_phase,
                               p.resonant.homodyne_phase)
    return series_connect(sys, hom)


def state_labels(p: PhysicalParams, noise_filters: dict = None) -> list:
    """Human-readable names for the assembled model's state entries."""
    labels = []
    for k in range(p.n_modes):
        suffix = "" if k == 0 else f"_{k}"
        labels += [f"q{suffix}", f"p{suffix}"]
    labels += ["x_d", "y_d", "x_r", "y_r"]
    noise_filters = noise_filters or {}
    for name in NOISE_CHANNELS:
        if name in noise_filters:
            for j in range(noise_filters[name].order):
                labels.append(f"{name}[{j}]")
    return labels
