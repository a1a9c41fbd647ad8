"""Continuous-time linear Gaussian state-space models and their transformations.

The model class describes Ito systems of the form

    dx = (A x + B u) dt + L dw        <dw dw^T> = W dt
    z  = C x + D u + v                <v(t) v(t')^T> = V delta(t - t')
                                      <dw v^T> = M dt

with x the n-state vector, u a p-channel deterministic input, z an m-channel
continuous measurement record and w a q-channel Wiener process.  W, V and M
are noise *intensities* (two-sided spectral densities, angular-frequency
convention), so a stationary output spectrum integrates back to a covariance
as (1/2pi) Integral S(omega) d omega.

All rates are in rad/s and times in seconds.  Measurement matrices C and D
may be piecewise constant in time through an attached schedule; A, B, L and
the noise intensities are constant.

Construction performs hard shape checking (raises ValueError); numerical
invariants such as positive definiteness are reported by `validate`, which
returns diagnostics instead of raising so that degenerate building blocks
(noise-free static elements, for instance) remain representable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov

__all__ = [
    "ScheduleEntry",
    "StateSpaceModel",
    "DiscreteModel",
    "validate",
    "series_connect",
    "parallel_connect",
    "drop_input_channels",
    "augment_colored_noise",
    "transfer_function",
    "output_noise_spectrum",
    "stationary_covariance",
    "schedule_segments",
    "discretize",
    "save_model",
    "load_model",
]

_REL_TOL = 1e-12


def _as_matrix(x, name: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got ndim={a.ndim}")
    return a


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


@dataclass(frozen=True)
class ScheduleEntry:
    """Measurement matrices taking effect at `t_start` (piecewise constant)."""

    t_start: float
    C: np.ndarray
    D: np.ndarray


@dataclass(frozen=True)
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    L: np.ndarray
    W: np.ndarray
    V: np.ndarray
    M: np.ndarray
    schedule: tuple = field(default_factory=tuple)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        B = np.asarray(self.B, dtype=float).reshape(n, -1) if np.size(self.B) else \
            np.zeros((n, np.shape(self.B)[1] if np.ndim(self.B) == 2 else 0))
        C = np.asarray(self.C, dtype=float)
        C = C.reshape(-1, n) if C.size else C.reshape(C.shape[0] if C.ndim == 2 else 0, n)
        m = C.shape[0]
        p = B.shape[1]
        D = np.asarray(self.D, dtype=float).reshape(m, p)
        L = np.asarray(self.L, dtype=float)
        L = L.reshape(n, -1) if L.size else L.reshape(n, L.shape[1] if L.ndim == 2 else 0)
        q = L.shape[1]
        W = np.asarray(self.W, dtype=float).reshape(q, q)
        V = np.asarray(self.V, dtype=float).reshape(m, m)
        M = np.asarray(self.M, dtype=float).reshape(q, m)
        sched = []
        for entry in self.schedule:
            if isinstance(entry, ScheduleEntry):
                t0, Ck, Dk = entry.t_start, entry.C, entry.D
            else:
                t0, Ck, Dk = entry
            sched.append(ScheduleEntry(float(t0),
                                       _frozen(np.asarray(Ck, dtype=float).reshape(m, n)),
                                       _frozen(np.asarray(Dk, dtype=float).reshape(m, p))))
        for name, val in (("A", A), ("B", B), ("C", C), ("D", D),
                          ("L", L), ("W", W), ("V", V), ("M", M)):
            object.__setattr__(self, name, _frozen(val))
        object.__setattr__(self, "schedule", tuple(sched))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def q(self) -> int:
        return self.L.shape[1]

    def measurement_at(self, t: float):
        """Active (C, D) at time t under the schedule (base matrices before
        the first entry)."""
        C, D = self.C, self.D
        for entry in self.schedule:
            if t >= entry.t_start:
                C, D = entry.C, entry.D
            else:
                break
        return C, D

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.array([self.n, self.p, self.m, self.q], dtype=np.int64).tobytes())
        for a in (self.A, self.B, self.C, self.D, self.L, self.W, self.V, self.M):
            h.update(np.ascontiguousarray(a).tobytes())
        for entry in self.schedule:
            h.update(np.float64(entry.t_start).tobytes())
            h.update(np.ascontiguousarray(entry.C).tobytes())
            h.update(np.ascontiguousarray(entry.D).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "kind": "continuous-state-space",
            "version": 1,
            "n": self.n, "p": self.p, "m": self.m, "q": self.q,
            "A": self.A.tolist(), "B": self.B.tolist(),
            "C": self.C.tolist(), "D": self.D.tolist(),
            "L": self.L.tolist(), "W": self.W.tolist(),
            "V": self.V.tolist(), "M": self.M.tolist(),
            "schedule": [
                {"t_start": e.t_start, "C": e.C.tolist(), "D": e.D.tolist()}
                for e in self.schedule
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpaceModel":
        n, p, m, q = (int(d[k]) for k in ("n", "p", "m", "q"))
        mats = {}
        for key, shape in (("A", (n, n)), ("B", (n, p)), ("C", (m, n)),
                           ("D", (m, p)), ("L", (n, q)), ("W", (q, q)),
                           ("V", (m, m)), ("M", (q, m))):
            a = np.asarray(d[key], dtype=float).reshape(shape)
            mats[key] = a
        sched = tuple(
            (e["t_start"], np.asarray(e["C"], float).reshape(m, n),
             np.asarray(e["D"], float).reshape(m, p))
            for e in d.get("schedule", [])
        )
        return cls(schedule=sched, **mats)


def save_model(sys: StateSpaceModel, path) -> None:
    """Write the model as structured text (JSON, row-major nested arrays)."""
    with open(path, "w") as fh:
        json.dump(sys.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> StateSpaceModel:
    with open(path) as fh:
        return StateSpaceModel.from_dict(json.load(fh))


def _psd_violation(X: np.ndarray, tol: float = _REL_TOL):
    """Return (is_sym, min_eig, scale) for a symmetry/PSD assessment."""
    if X.size == 0:
        return True, 0.0, 1.0
    scale = max(_max_abs(X), 1.0)
    is_sym = _max_abs(X - X.T) <= tol * scale
    w = np.linalg.eigvalsh(_sym(X))
    return is_sym, float(w[0]) if w.size else 0.0, scale


def validate(sys: StateSpaceModel) -> list:
    """Check the numerical invariants; one diagnostic string per violation.

    Returns an empty list iff the model is a well-formed filtering target:
    finite entries, W PSD, V positive definite, joint intensity
    [[W, M], [M^T, V]] PSD, and a strictly increasing schedule.
    """
    diags = []
    for name in ("A", "B", "C", "D", "L", "W", "V", "M"):
        if not np.all(np.isfinite(getattr(sys, name))):
            diags.append(f"{name} contains non-finite entries")
    sym, lo, scale = _psd_violation(sys.W)
    if not sym:
        diags.append("W not symmetric")
    elif lo < -_REL_TOL * scale:
        diags.append(f"W not positive semidefinite (min eigenvalue {lo:.3e})")
    if sys.m:
        sym, lo, scale = _psd_violation(sys.V)
        if not sym:
            diags.append("V not symmetric")
        elif lo <= _REL_TOL * scale:
            diags.append(f"V not positive definite (min eigenvalue {lo:.3e})")
    if sys.q + sys.m > 0:
        J = np.block([[sys.W, sys.M], [sys.M.T, sys.V]])
        sym, lo, scale = _psd_violation(J)
        if sym and lo < -_REL_TOL * scale:
            diags.append(
                f"joint noise intensity [[W,M],[M^T,V]] not positive semidefinite "
                f"(min eigenvalue {lo:.3e})")
    times = [e.t_start for e in sys.schedule]
    if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
        diags.append("schedule start times not strictly increasing")
    return diags


def _require_no_schedule(sys: StateSpaceModel, role: str) -> None:
    if sys.schedule:
        raise ValueError(f"{role} model carries a measurement schedule; "
                         "only the final (downstream static) stage may be scheduled")


def series_connect(up: StateSpaceModel, down: StateSpaceModel) -> StateSpaceModel:
    """Feed the measurement record of `up` into the input of `down`.

    Upstream states come first in the composed state vector.  The upstream
    measurement noise v_up physically enters the downstream dynamics; its
    part correlated with w_up is routed through the existing channels, and
    any independent remainder gets fresh process channels (only needed when
    the downstream stage has states).  The composed joint noise intensity
    stays consistent (PSD) by construction.

    A scheduled downstream stage swaps (C, D) only; the composed V and M
    are built from the base-entry D.  V stays exact whenever the upstream
    measurement noise is isotropic within each downstream mixing block
    (true for shot-noise-limited homodyne stages); M is exact at the base
    entry and approximate after a switch.
    """
    if up.m != down.p:
        raise ValueError(
            f"dimension mismatch: upstream emits {up.m} channels, "
            f"downstream accepts {down.p}")
    _require_no_schedule(up, "upstream")
    if down.schedule and down.n > 0:
        raise ValueError("scheduled downstream stage must be static (n=0)")

    n1, n2 = up.n, down.n
    A = np.zeros((n1 + n2, n1 + n2))
    A[:n1, :n1] = up.A
    A[n1:, :n1] = down.B @ up.C
    A[n1:, n1:] = down.A
    B = np.vstack([up.B, down.B @ up.D])
    C = np.hstack([down.D @ up.C, down.C])
    D = down.D @ up.D

    # Split v_up into its regression on w_up and an independent remainder.
    if up.q:
        G1 = np.linalg.pinv(up.W) @ up.M          # q1 x m1, v_up ~ G1^T w_up + r
        R1 = _sym(up.V - up.M.T @ G1)             # remainder intensity
    else:
        G1 = np.zeros((0, up.m))
        R1 = up.V.copy()
    extra = np.zeros((up.m, 0))
    if n2 > 0 and _max_abs(R1) > _REL_TOL * max(_max_abs(up.V), 1.0):
        lam, U = np.linalg.eigh(R1)
        keep = lam > _REL_TOL * max(lam.max(), 1.0)
        extra = U[:, keep] * np.sqrt(lam[keep])   # m1 x r, R1 = extra extra^T

    r = extra.shape[1]
    q = up.q + down.q + r
    L = np.zeros((n1 + n2, q))
    L[:n1, :up.q] = up.L
    L[n1:, :up.q] = down.B @ G1.T
    L[n1:, up.q:up.q + down.q] = down.L
    L[n1:, up.q + down.q:] = down.B @ extra
    W = np.zeros((q, q))
    W[:up.q, :up.q] = up.W
    W[up.q:up.q + down.q, up.q:up.q + down.q] = down.W
    W[up.q + down.q:, up.q + down.q:] = np.eye(r)

    V = _sym(down.D @ up.V @ down.D.T + down.V)
    M = np.vstack([up.M @ down.D.T, down.M, extra.T @ down.D.T])

    schedule = []
    for e in down.schedule:
        schedule.append((e.t_start, e.D @ up.C, e.D @ up.D))
    return StateSpaceModel(A, B, C, D, L, W, V, M, tuple(schedule))


def parallel_connect(a: StateSpaceModel, b: StateSpaceModel) -> StateSpaceModel:
    """Stack two independent models block-diagonally (inputs, outputs and
    noise channels concatenated, no coupling)."""
    _require_no_schedule(a, "first")
    _require_no_schedule(b, "second")

    def blk(x, y):
        out = np.zeros((x.shape[0] + y.shape[0], x.shape[1] + y.shape[1]))
        out[:x.shape[0], :x.shape[1]] = x
        out[x.shape[0]:, x.shape[1]:] = y
        return out

    return StateSpaceModel(
        blk(a.A, b.A), blk(a.B, b.B), blk(a.C, b.C), blk(a.D, b.D),
        blk(a.L, b.L), blk(a.W, b.W), blk(a.V, b.V), blk(a.M, b.M))


def drop_input_channels(sys: StateSpaceModel, channels) -> StateSpaceModel:
    """Remove deterministic input channels (the dropped inputs are treated
    as identically zero)."""
    channels = sorted(set(int(c) for c in np.atleast_1d(channels)))
    for c in channels:
        if not 0 <= c < sys.p:
            raise ValueError(f"input channel {c} out of range for p={sys.p}")
    keep = [j for j in range(sys.p) if j not in channels]
    schedule = tuple((e.t_start, e.C, e.D[:, keep]) for e in sys.schedule)
    return StateSpaceModel(sys.A, sys.B[:, keep], sys.C, sys.D[:, keep],
                           sys.L, sys.W, sys.V, sys.M, schedule)


def augment_colored_noise(sys: StateSpaceModel, noise_filter,
                          channel: int) -> StateSpaceModel:
    """Replace deterministic input `channel` by the output of a shaping filter.

    `noise_filter` provides F (k x k drift), G_drive (k x r noise input),
    W_drive (r x r intensity) and H_out (1 x k output row); its state is
    appended after the existing states:

        d xi = F xi dt + G_drive d zeta,   u_channel = H_out xi.

    The channel column of B (and D) is deleted; the filter output couples
    into the drift through B[:, channel] * H_out and into the measurement
    through D[:, channel] * H_out, so feedthrough paths are preserved.
    """
    if not 0 <= channel < sys.p:
        raise ValueError(f"input channel {channel} out of range for p={sys.p}")
    F = _as_matrix(noise_filter.F, "F")
    k = F.shape[0]
    G = np.asarray(noise_filter.G_drive, dtype=float).reshape(k, -1)
    r = G.shape[1]
    Wd = np.asarray(noise_filter.W_drive, dtype=float).reshape(r, r)
    H = np.asarray(noise_filter.H_out, dtype=float).reshape(1, k)

    n = sys.n
    b_ch = sys.B[:, channel:channel + 1]
    d_ch = sys.D[:, channel:channel + 1]
    keep = [j for j in range(sys.p) if j != channel]

    A = np.zeros((n + k, n + k))
    A[:n, :n] = sys.A
    A[:n, n:] = b_ch @ H
    A[n:, n:] = F
    B = np.vstack([sys.B[:, keep], np.zeros((k, len(keep)))])
    C = np.hstack([sys.C, d_ch @ H])
    D = sys.D[:, keep]
    L = np.zeros((n + k, sys.q + r))
    L[:n, :sys.q] = sys.L
    L[n:, sys.q:] = G
    W = np.zeros((sys.q + r, sys.q + r))
    W[:sys.q, :sys.q] = sys.W
    W[sys.q:, sys.q:] = Wd
    M = np.vstack([sys.M, np.zeros((r, sys.m))])
    schedule = tuple((e.t_start, np.hstack([e.C, e.D[:, [channel]] @ H]),
                      e.D[:, keep]) for e in sys.schedule)
    return StateSpaceModel(A, B, C, D, L, W, sys.V, M, schedule)


def _resolvent(sys: StateSpaceModel, omega: float) -> np.ndarray:
    n = sys.n
    Ms = 1j * omega * np.eye(n) - sys.A
    if n:
        eig = np.linalg.eigvals(sys.A)
        dist = np.min(np.abs(1j * omega - eig))
        scale = max(np.max(np.abs(eig)), abs(omega), 1.0)
        if dist < 1e-12 * scale:
            nearest = eig[np.argmin(np.abs(1j * omega - eig))]
            raise ValueError(
                f"resolvent singular at omega={omega!r}: eigenvalue "
                f"{nearest!r} lies within {dist:.3e} of i*omega")
    return Ms


def transfer_function(sys: StateSpaceModel, omega):
    """Deterministic input-output response G(i w) = C (i w I - A)^-1 B + D.

    `omega` may be a scalar (returns m x p complex) or 1-d array
    (returns len(omega) x m x p).
    """
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    out = np.empty((om.size, sys.m, sys.p), dtype=complex)
    for i, w in enumerate(om):
        if sys.n:
            X = np.linalg.solve(_resolvent(sys, w), sys.B)
            out[i] = sys.C @ X + sys.D
        else:
            out[i] = sys.D.astype(complex)
    return out[0] if np.isscalar(omega) or np.ndim(omega) == 0 else out


def output_noise_spectrum(sys: StateSpaceModel, omega, symmetrized=True):
    """Stationary two-sided output spectral density of the noise-driven model.

    S(w) = H(w) W H(w)* + V + H(w) M + M^T H(w)*  with  H = C (i w I - A)^-1 L.
    The default returns the symmetrized density Re S(w), real symmetric by
    construction (diagonals and symmetric quadratic forms are unaffected);
    symmetrized=False returns the full complex Hermitian matrix, which is
    what composes exactly across cascaded systems.  Requires A Hurwitz.
    Deterministic inputs are ignored.
    """
    if sys.n:
        lam = np.linalg.eigvals(sys.A)
        if np.max(lam.real) >= 0:
            raise ValueError(
                f"A is not Hurwitz (max Re eigenvalue {np.max(lam.real):.3e}); "
                "stationary spectrum undefined")
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    out = np.empty((om.size, sys.m, sys.m),
                   dtype=float if symmetrized else complex)
    for i, w in enumerate(om):
        if sys.n and sys.q:
            H = sys.C @ np.linalg.solve(_resolvent(sys, w), sys.L)
        else:
            H = np.zeros((sys.m, sys.q), dtype=complex)
        S = H @ sys.W @ H.conj().T + sys.V + H @ sys.M + sys.M.T @ H.conj().T
        herm = 0.5 * (S + S.conj().T)
        resid = _max_abs(np.asarray(S - herm))
        assert resid <= 1e-10 * max(_max_abs(np.abs(S)), 1.0), \
            f"non-Hermitian spectrum residue {resid:.3e} at omega={w!r}"
        out[i] = herm.real if symmetrized else herm
    return out[0] if np.isscalar(omega) or np.ndim(omega) == 0 else out


def stationary_covariance(sys: StateSpaceModel) -> np.ndarray:
    """Stationary state covariance Sigma solving A S + S A^T + L W L^T = 0
    (A Hurwitz required)."""
    if sys.n == 0:
        return np.zeros((0, 0))
    lam = np.linalg.eigvals(sys.A)
    if np.max(lam.real) >= 0:
        raise ValueError(
            f"A is not Hurwitz (max Re eigenvalue {np.max(lam.real):.3e})")
    Q = sys.L @ sys.W @ sys.L.T
    return _sym(solve_continuous_lyapunov(sys.A, -Q))


@dataclass(frozen=True)
class DiscreteModel:
    """Exactly sampled model over step dt:

        x[k+1] = Ad x[k] + Bd u[k] + w[k]
        z[k]   = C x[k] + D u[k] + v[k]

    with per-step covariances <w w^T> = Qd, <v v^T> = V (= V_cont / dt under
    the averaged-sampling convention) and cross covariance <w v^T> = Md.
    """

    dt: float
    Ad: np.ndarray
    Bd: np.ndarray
    Qd: np.ndarray
    C: np.ndarray
    D: np.ndarray
    V: np.ndarray
    Md: np.ndarray
    schedule: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("Ad", "Bd", "Qd", "C", "D", "V", "Md"):
            object.__setattr__(self, name,
                               _frozen(np.asarray(getattr(self, name), dtype=float)))
        sched = tuple(
            e if isinstance(e, ScheduleEntry)
            else ScheduleEntry(float(e[0]),
                               _frozen(np.asarray(e[1], float)),
                               _frozen(np.asarray(e[2], float)))
            for e in self.schedule)
        object.__setattr__(self, "schedule", sched)

    @property
    def n(self) -> int:
        return self.Ad.shape[0]

    @property
    def p(self) -> int:
        return self.Bd.shape[1]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    def measurement_at(self, t: float):
        C, D = self.C, self.D
        for entry in self.schedule:
            if t >= entry.t_start:
                C, D = entry.C, entry.D
            else:
                break
        return C, D

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.float64(self.dt).tobytes())
        h.update(np.array([self.n, self.p, self.m], dtype=np.int64).tobytes())
        for a in (self.Ad, self.Bd, self.Qd, self.C, self.D, self.V, self.Md):
            h.update(np.ascontiguousarray(a).tobytes())
        for entry in self.schedule:
            h.update(np.float64(entry.t_start).tobytes())
            h.update(np.ascontiguousarray(entry.C).tobytes())
            h.update(np.ascontiguousarray(entry.D).tobytes())
        return h.hexdigest()


def schedule_segments(dsys, t0: float, n_steps: int):
    """Split sample indices [0, n_steps) into runs of constant measurement
    matrices: a list of (k_start, k_end, C, D)."""
    bounds = [0]
    mats = [(dsys.C, dsys.D)]
    for entry in dsys.schedule:
        k = int(np.ceil((entry.t_start - t0) / dsys.dt - 1e-9))
        k = max(k, 0)
        if k >= n_steps:
            continue
        if k == bounds[-1]:
            mats[-1] = (entry.C, entry.D)
        else:
            bounds.append(k)
            mats.append((entry.C, entry.D))
    bounds.append(n_steps)
    return [(bounds[i], bounds[i + 1], mats[i][0], mats[i][1])
            for i in range(len(mats))]


def discretize(sys: StateSpaceModel, dt: float) -> DiscreteModel:
    """Exact zero-order-hold discretization over step dt.

    One augmented matrix exponential supplies all three integrals:

        E = expm(dt * [[-A, L W L^T, 0], [0, A^T, I], [0, 0, 0]])

    gives Ad = E[n:2n, n:2n]^T, Qd = Ad-row contraction of E[0:n, n:2n] and
    the drift integral Ed = Integral_0^dt expm(A s) ds from E[n:2n, 2n:3n]^T,
    from which Bd = Ed B and Md = Ed L M / dt.  Per-step measurement noise is
    V/dt (white intensity, averaged sampling).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    n = sys.n
    if n == 0:
        return DiscreteModel(dt, np.zeros((0, 0)), np.zeros((0, sys.p)),
                             np.zeros((0, 0)), sys.C, sys.D, sys.V / dt,
                             np.zeros((0, sys.m)), sys.schedule)
    Qc = sys.L @ sys.W @ sys.L.T
    big = np.zeros((3 * n, 3 * n))
    big[:n, :n] = -sys.A
    big[:n, n:2 * n] = Qc
    big[n:2 * n, n:2 * n] = sys.A.T
    big[n:2 * n, 2 * n:] = np.eye(n)
    E = expm(big * dt)
    Ad = E[n:2 * n, n:2 * n].T
    Qd = _sym(Ad @ E[:n, n:2 * n])
    Ed = E[n:2 * n, 2 * n:].T
    Bd = Ed @ sys.B
    Md = Ed @ sys.L @ sys.M / dt
    return DiscreteModel(dt, Ad, Bd, Qd, sys.C, sys.D, sys.V / dt, Md,
                         sys.schedule)
