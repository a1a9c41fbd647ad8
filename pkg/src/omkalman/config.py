"""TOML run configuration.

All frequencies and rates at the configuration boundary are plain Hz (or W,
K, seconds); conversion to angular units happens here and nowhere else.

Sections:

    [mechanics]   omega_m_hz, gamma_m_hz (scalar or aligned lists),
                  coupling_scale (optional list, relative to mode 0)
    [cavity]      kappa1_hz, kappa2_hz (half widths), g0_hz
    [bath]        temperature_k
    [beams.detuned], [beams.resonant]
                  power_w, wavelength_m or omega0_hz, detuning_hz
                  (number, or "omega_m" / "-omega_m" for the fundamental),
                  transmission (default 1), homodyne_phase_rad (number or
                  [[t_start, phi], ...] schedule)
    [noise.<channel>]
                  kind = "lorentzian" (f0_hz, linewidth_hz, peak) or
                  kind = "broadband" (F, G_drive, W_drive, H_out as nested
                  lists); channel names from optomech.NOISE_CHANNELS
    [run]         dt_s or rate_hz, n_steps, seed
    [check]       optional threshold overrides for the consistency report
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:        # Python < 3.11
    import tomli as tomllib

from scipy import constants

from .consistency import DEFAULT_THRESHOLDS
from .noise import ShapingFilter, broadband_filter, lorentzian_line
from .optomech import BEAMS, NOISE_CHANNELS, BeamParams, PhysicalParams

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config"]

TAU = 2.0 * math.pi


class ConfigError(Exception):
    """Invalid or incomplete run configuration."""


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration: physical parameters plus run controls."""

    params: PhysicalParams
    noise_filters: dict          # NOISE_CHANNELS name -> ShapingFilter
    dt: float                    # sampling interval, s
    n_steps: int
    seed: int
    thresholds: dict             # consistency-report thresholds
    raw: dict = field(repr=False, default_factory=dict)


def _section(data: dict, name: str) -> dict:
    try:
        sec = data[name]
    except KeyError:
        raise ConfigError(f"missing section [{name}]") from None
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _num(sec: dict, section: str, key: str, default=None):
    if key not in sec:
        if default is None:
            raise ConfigError(f"[{section}] missing key {key}")
        return default
    val = sec[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"[{section}] {key} must be a number, got {val!r}")
    return float(val)


def _num_list(sec: dict, section: str, key: str):
    val = sec[key]
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return [float(val)]
    if isinstance(val, list) and val and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in val):
        return [float(v) for v in val]
    raise ConfigError(
        f"[{section}] {key} must be a number or a nonempty list of numbers")


def _matrix(sec: dict, section: str, key: str):
    if key not in sec:
        raise ConfigError(f"[{section}] missing key {key}")
    val = sec[key]
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return [[float(val)]]
    if not isinstance(val, list):
        raise ConfigError(f"[{section}] {key} must be a nested list")
    return val


def _parse_beam(data: dict, name: str, omega_m0: float) -> BeamParams:
    section = f"beams.{name}"
    sec = _section(_section(data, "beams"), name)
    power = _num(sec, section, "power_w")
    if "omega0_hz" in sec:
        omega0 = TAU * _num(sec, section, "omega0_hz")
    elif "wavelength_m" in sec:
        omega0 = TAU * constants.c / _num(sec, section, "wavelength_m")
    else:
        raise ConfigError(f"[{section}] needs omega0_hz or wavelength_m")
    det = sec.get("detuning_hz", 0.0)
    if isinstance(det, str):
        if det == "omega_m":
            detuning = omega_m0
        elif det == "-omega_m":
            detuning = -omega_m0
        else:
            raise ConfigError(
                f'[{section}] detuning_hz string must be "omega_m" or '
                f'"-omega_m", got {det!r}')
    else:
        detuning = TAU * _num(sec, section, "detuning_hz", default=0.0)
    transmission = _num(sec, section, "transmission", default=1.0)
    phase = sec.get("homodyne_phase_rad", 0.0)
    if isinstance(phase, list):
        try:
            phase = tuple((float(t), float(phi)) for t, phi in phase)
        except (TypeError, ValueError):
            raise ConfigError(
                f"[{section}] homodyne_phase_rad schedule must be a list of "
                f"[t_start, phi] pairs") from None
    elif isinstance(phase, bool) or not isinstance(phase, (int, float)):
        raise ConfigError(
            f"[{section}] homodyne_phase_rad must be a number or schedule")
    try:
        return BeamParams(power=power, omega0=omega0, detuning=detuning,
                          transmission=transmission, homodyne_phase=phase)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _parse_noise(data: dict) -> dict:
    filters = {}
    sec = data.get("noise", {})
    if not isinstance(sec, dict):
        raise ConfigError("[noise] must be a table of channel tables")
    for name, body in sec.items():
        section = f"noise.{name}"
        if name not in NOISE_CHANNELS:
            raise ConfigError(
                f"[{section}] unknown channel; expected one of "
                f"{', '.join(NOISE_CHANNELS)}")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        kind = body.get("kind", "lorentzian")
        try:
            if kind == "lorentzian":
                filters[name] = lorentzian_line(
                    f0_hz=_num(body, section, "f0_hz", default=0.0),
                    linewidth_hz=_num(body, section, "linewidth_hz"),
                    peak=_num(body, section, "peak"),
                    label=name)
            elif kind == "broadband":
                filters[name] = broadband_filter(
                    F=_matrix(body, section, "F"),
                    G_drive=_matrix(body, section, "G_drive"),
                    W_drive=_matrix(body, section, "W_drive"),
                    H_out=_matrix(body, section, "H_out"),
                    label=name)
            else:
                raise ConfigError(
                    f'[{section}] kind must be "lorentzian" or "broadband", '
                    f'got {kind!r}')
        except ValueError as exc:
            raise ConfigError(f"[{section}] {exc}") from None
    return filters


def parse_config(data: dict) -> RunConfig:
    """Build a RunConfig from an already-parsed TOML document."""
    mech = _section(data, "mechanics")
    omega_m = [TAU * w for w in _num_list(mech, "mechanics", "omega_m_hz")]
    gamma_m = [TAU * g for g in _num_list(mech, "mechanics", "gamma_m_hz")]
    if "coupling_scale" in mech:
        coupling = _num_list(mech, "mechanics", "coupling_scale")
    else:
        coupling = None

    cav = _section(data, "cavity")
    kappa1 = TAU * _num(cav, "cavity", "kappa1_hz")
    kappa2 = TAU * _num(cav, "cavity", "kappa2_hz", default=0.0)
    g0 = TAU * _num(cav, "cavity", "g0_hz")

    bath = _section(data, "bath")
    temperature = _num(bath, "bath", "temperature_k")

    beams = {name: _parse_beam(data, name, omega_m[0]) for name in BEAMS}

    try:
        params = PhysicalParams(
            omega_m=omega_m, gamma_m=gamma_m, kappa1=kappa1, kappa2=kappa2,
            g0=g0, detuned=beams["detuned"], resonant=beams["resonant"],
            temperature=temperature, coupling_scale=coupling)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    filters = _parse_noise(data)

    run = data.get("run", {})
    if not isinstance(run, dict):
        raise ConfigError("[run] must be a table")
    if "dt_s" in run:
        dt = _num(run, "run", "dt_s")
    elif "rate_hz" in run:
        rate = _num(run, "run", "rate_hz")
        if rate <= 0:
            raise ConfigError(f"[run] rate_hz must be positive, got {rate!r}")
        dt = 1.0 / rate
    else:
        dt = 2e-8
    if dt <= 0:
        raise ConfigError(f"[run] dt_s must be positive, got {dt!r}")
    n_steps = run.get("n_steps", 100000)
    if isinstance(n_steps, bool) or not isinstance(n_steps, int) or n_steps <= 0:
        raise ConfigError(f"[run] n_steps must be a positive integer, got {n_steps!r}")
    seed = run.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"[run] seed must be a nonnegative integer, got {seed!r}")

    check = data.get("check", {})
    if not isinstance(check, dict):
        raise ConfigError("[check] must be a table")
    thresholds = dict(DEFAULT_THRESHOLDS)
    for key, val in check.items():
        if key not in thresholds:
            raise ConfigError(
                f"[check] unknown threshold {key}; expected one of "
                f"{', '.join(sorted(thresholds))}")
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"[check] {key} must be a number, got {val!r}")
        thresholds[key] = type(thresholds[key])(val)

    return RunConfig(params=params, noise_filters=filters, dt=dt,
                     n_steps=n_steps, seed=seed, thresholds=thresholds,
                     raw=data)


def load_config(path) -> RunConfig:
    """Read and parse a TOML configuration file."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from None
    return parse_config(data)
