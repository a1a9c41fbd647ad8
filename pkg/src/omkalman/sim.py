"""Exact sampling of discretized linear Gaussian models.

A simulated trajectory draws the per-step process/measurement noise pair
(w[k], v[k]) jointly from the discrete model's exact joint covariance
[[Qd, Md], [Md^T, V]], so correlated shot noise in the dynamics and in the
record is reproduced with the correct same-step statistics.  The state
recursion itself is exact (no truncation beyond the discretization already
contained in the model).

Random numbers come from numpy's Philox counter-based generator so that a
recorded (seed, generator) pair replays a bit-identical trajectory.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import constants
from scipy.linalg import solve_discrete_lyapunov

from .statespace import DiscreteModel, schedule_segments

__all__ = [
    "Trajectory",
    "thermal_occupation",
    "simulate",
    "save_trajectory",
    "load_trajectory",
    "trajectory_to_csv",
]

_GENERATOR = "philox4x64"
_MAGIC = b"OMKTRAJ1"
_VERSION = 1


def thermal_occupation(temperature_k: float, omega: float) -> float:
    """Mean bath occupation k_B T / (hbar omega) (high-temperature form)."""
    if omega <= 0:
        raise ValueError(f"mode frequency must be positive, got {omega!r}")
    if temperature_k < 0:
        raise ValueError(f"temperature must be nonnegative, got {temperature_k!r}")
    return constants.k * temperature_k / (constants.hbar * omega)


@dataclass(frozen=True)
class Trajectory:
    """Sampled true states and measurement record of one realization."""

    dt: float
    t0: float
    x: np.ndarray          # (N, n) true states
    z: np.ndarray          # (N, m) measurements
    seed: int
    fingerprint: str       # sha256 hex of the generating discrete model
    generator: str = _GENERATOR

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        z = np.ascontiguousarray(self.z, dtype=float)
        if x.ndim != 2 or z.ndim != 2 or x.shape[0] != z.shape[0]:
            raise ValueError(
                f"x and z must be 2-d with equal length, got {x.shape} and {z.shape}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        x.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @property
    def n_steps(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.z.shape[1]

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps)


@njit(cache=True)
def _propagate(Ad, x0, w, out):
    # out[k] = x[k]; x[k+1] = Ad x[k] + w[k]
    x = x0.copy()
    for k in range(w.shape[0]):
        out[k] = x
        x = Ad @ x + w[k]
    return x


def _joint_noise_factor(dsys: DiscreteModel) -> np.ndarray:
    """Factor J = [[Qd, Md], [Md^T, V]] = F F^T via eigendecomposition with
    nonnegative clipping (J is a covariance; clipping removes roundoff)."""
    n, m = dsys.n, dsys.m
    J = np.zeros((n + m, n + m))
    J[:n, :n] = dsys.Qd
    J[:n, n:] = dsys.Md
    J[n:, :n] = dsys.Md.T
    J[n:, n:] = dsys.V
    lam, U = np.linalg.eigh(0.5 * (J + J.T))
    floor = -1e-10 * max(lam.max(), 0.0)
    if lam.min() < floor:
        raise ValueError(
            f"joint per-step noise covariance has negative eigenvalue "
            f"{lam.min():.3e}; model inconsistent")
    return U * np.sqrt(np.clip(lam, 0.0, None))


def simulate(dsys: DiscreteModel, n_steps: int, seed: int,
             x_init: np.ndarray = None, t0: float = 0.0) -> Trajectory:
    """Draw one measurement realization of the discrete model.

    With x_init=None the initial state is drawn from the stationary state
    covariance (discrete Lyapunov solution; requires a stable Ad).
    Deterministic inputs are taken as zero.  The draw order is fixed
    (initial state first, then the per-step noise block) so a given seed
    reproduces the trajectory bit for bit.
    """
    n_steps = int(n_steps)
    if n_steps <= 0:
        raise ValueError(f"n_steps must be positive, got {n_steps!r}")
    n, m = dsys.n, dsys.m
    rng = np.random.Generator(np.random.Philox(seed))

    if x_init is None:
        if n and np.max(np.abs(np.linalg.eigvals(dsys.Ad))) >= 1.0:
            raise ValueError(
                "Ad is not stable; supply x_init for a non-stationary start")
        Sig = solve_discrete_lyapunov(dsys.Ad, dsys.Qd) if n else np.zeros((0, 0))
        Sig = 0.5 * (Sig + Sig.T)
        lam, U = np.linalg.eigh(Sig)
        x0 = U @ (np.sqrt(np.clip(lam, 0.0, None)) * rng.standard_normal(n))
    else:
        x0 = np.asarray(x_init, dtype=float).reshape(n)

    fact = _joint_noise_factor(dsys)
    noise = rng.standard_normal((n_steps, n + m)) @ fact.T
    w = np.ascontiguousarray(noise[:, :n])
    v = noise[:, n:]
    del noise

    x = np.empty((n_steps, n))
    _propagate(np.ascontiguousarray(dsys.Ad), x0, w, x)
    del w

    z = np.empty((n_steps, m))
    for k0, k1, C, D in schedule_segments(dsys, t0, n_steps):
        z[k0:k1] = x[k0:k1] @ C.T + v[k0:k1]
    return Trajectory(dt=dsys.dt, t0=t0, x=x, z=z, seed=int(seed),
                      fingerprint=dsys.fingerprint())


def save_trajectory(traj: Trajectory, path) -> None:
    """Binary layout (little endian): magic, version, n, m, N, dt, t0, seed,
    generator (16 bytes), model fingerprint (32 bytes), then the state block
    (N*n float64, row-major) and the measurement block (N*m float64)."""
    header = struct.pack(
        "<8sIIIQddQ16s32s", _MAGIC, _VERSION, traj.n, traj.m, traj.n_steps,
        traj.dt, traj.t0, traj.seed & 0xFFFFFFFFFFFFFFFF,
        traj.generator.encode().ljust(16, b"\0"),
        bytes.fromhex(traj.fingerprint))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(traj.x, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(traj.z, dtype="<f8").tobytes())


def load_trajectory(path) -> Trajectory:
    head_size = struct.calcsize("<8sIIIQddQ16s32s")
    with open(path, "rb") as fh:
        raw = fh.read(head_size)
        if len(raw) < head_size or raw[:8] != _MAGIC:
            raise ValueError(f"not a trajectory file (bad magic in {path})")
        magic, version, n, m, N, dt, t0, seed, gen, fp = struct.unpack(
            "<8sIIIQddQ16s32s", raw)
        if version != _VERSION:
            raise ValueError(f"unsupported trajectory version {version}")
        x = np.frombuffer(fh.read(8 * N * n), dtype="<f8").reshape(N, n)
        z = np.frombuffer(fh.read(8 * N * m), dtype="<f8").reshape(N, m)
    return Trajectory(dt=dt, t0=t0, x=x.astype(float), z=z.astype(float),
                      seed=int(seed), fingerprint=fp.hex(),
                      generator=gen.rstrip(b"\0").decode())


def trajectory_to_csv(traj: Trajectory, path, labels=None,
                      n_rows: int = None) -> None:
    n, m = traj.n, traj.m
    if labels is None:
        labels = [f"x{i}" for i in range(n)]
    cols = ["t"] + list(labels) + [f"z{j}" for j in range(m)]
    k = traj.n_steps if n_rows is None else min(int(n_rows), traj.n_steps)
    data = np.column_stack([traj.t[:k], traj.x[:k], traj.z[:k]])
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="")
