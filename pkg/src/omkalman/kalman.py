"""Kalman estimation for linear Gaussian models with correlated noise.

Continuous side: the estimator for dx = A x dt + L dw, z = C x + v with
cross intensity <dw v^T> = M dt uses the gain

    K = (P C^T + L M) V^-1,

and the covariance obeys dP/dt = A P + P A^T + L W L^T - K V K^T.  The
steady state is found by integrating this flow to a fixed point with exact
flow steps (Hamiltonian propagation) under doubling step control.

Discrete side: `run_filter` consumes the exactly sampled model produced by
`statespace.discretize`, where the same-step pair (w[k], v[k]) has cross
covariance Md.  The recursion below is the exact optimal filter for that
sampled model: a standard update with S = C P C^T + V, followed by a
prediction that feeds the measured innovation into the state through the
conditional mean of w[k],

    x[k+1|k] = Ad x[k|k] + Md S^-1 nu[k]
    P[k+1|k] = Ad P[k|k] Ad^T + Qd - Ad K Md^T - Md K^T Ad^T - Md S^-1 Md^T.

As dt -> 0 this reduces to the continuous correlated-gain filter above.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import (cho_factor, cho_solve, expm, solve_discrete_are,
                          solve_discrete_lyapunov, solve_lyapunov)
from scipy.stats import chi2

from .statespace import DiscreteModel, StateSpaceModel, schedule_segments

__all__ = [
    "KalmanState",
    "FilterRun",
    "kalman_gain",
    "riccati_rhs",
    "steady_state_covariance",
    "steady_state_discrete",
    "run_filter",
    "unconditional_covariance",
    "uncertainty_ellipse",
    "save_filter_run",
    "load_filter_run",
    "filter_run_to_csv",
]

@dataclass(frozen=True)
class KalmanState:
    """Filter estimate at one instant: conditional mean and covariance."""

    t: float
    xhat: np.ndarray
    P: np.ndarray


def _chol_solve(V: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return cho_solve(cho_factor(V, lower=True), rhs)
    except np.linalg.LinAlgError as err:
        raise ValueError(f"V is not positive definite: {err}") from err


def kalman_gain(P: np.ndarray, C: np.ndarray, M: np.ndarray, V: np.ndarray,
                L: np.ndarray) -> np.ndarray:
    """Continuous-time gain K = (P C^T + L M) V^-1 (cross-correlation lifted
    into state space through L)."""
    P = np.asarray(P, dtype=float)
    if np.size(V) == 0:
        return np.zeros((P.shape[0], 0))
    return _chol_solve(V, (C @ P + M.T @ L.T)).T


def riccati_rhs(P: np.ndarray, sys: StateSpaceModel) -> np.ndarray:
    """Covariance flow dP/dt = A P + P A^T + L W L^T - K V K^T."""
    P = np.asarray(P, dtype=float)
    K = kalman_gain(P, sys.C, sys.M, sys.V, sys.L)
    rhs = sys.A @ P + P @ sys.A.T + sys.L @ sys.W @ sys.L.T - K @ sys.V @ K.T
    return 0.5 * (rhs + rhs.T)


def steady_state_covariance(sys: StateSpaceModel, tol: float = 1e-12,
                            max_iter: int = 200) -> np.ndarray:
    """Steady-state conditional covariance of the continuous estimator.

    Evolves the Riccati flow from P(0) = L W L^T / ||A|| until the relative
    residual ||dP/dt|| / (||P|| ||A||) drops below tol (the ||A|| factor
    makes the 1/s-dimensioned criterion scale invariant).  Each value is the
    exact flow solution: P(t) is the Moebius image of P(0) under the expm of
    the 2n x 2n Hamiltonian of the (equivalent, cross-correlation-shifted)
    Riccati equation.  The flow map is squared every iteration, doubling the
    horizon, so stiff models (rates spread over many decades) converge in a
    few dozen steps; a scalar renormalization keeps the squaring from
    overflowing, which the Moebius image is invariant to.  Extracting P from
    the squared map has a conditioning floor on stiff models, so once the
    flow stops improving the best iterate is polished by Newton steps (each
    one a Lyapunov solve at the current closed-loop drift).
    """
    n = sys.n
    if n == 0:
        return np.zeros((0, 0))
    A, C, L, W, V, M = sys.A, sys.C, sys.L, sys.W, sys.V, sys.M
    Vc_C = _chol_solve(V, C) if sys.m else np.zeros((0, n))
    if sys.m:
        Abar = A - (L @ M) @ Vc_C
        Wbar = W - M @ _chol_solve(V, M.T)
        R = C.T @ Vc_C
    else:
        Abar = A
        Wbar = W
        R = np.zeros((n, n))
    Q = L @ Wbar @ L.T
    Q = 0.5 * (Q + Q.T)
    R = 0.5 * (R + R.T)

    rate = max(np.linalg.norm(A, 2), 1e-300)
    P0 = (L @ sys.W @ L.T) / rate
    Z = np.zeros((2 * n, 2 * n))
    Z[:n, :n] = -Abar.T
    Z[:n, n:] = R
    Z[n:, :n] = Q
    Z[n:, n:] = Abar
    z_norm = max(np.linalg.norm(Z, 2), 1e-300)
    E = expm(Z / z_norm)

    best = np.inf
    P_best = P0
    stalled = 0
    for _ in range(max_iter):
        U = E[:n, :n] + E[:n, n:] @ P0
        Y = E[n:, :n] + E[n:, n:] @ P0
        try:
            P = np.linalg.solve(U.T, Y.T).T
        except np.linalg.LinAlgError:
            P = np.full((n, n), np.nan)
        if np.all(np.isfinite(P)):
            P = 0.5 * (P + P.T)
            res = np.linalg.norm(riccati_rhs(P, sys)) \
                / (max(np.linalg.norm(P), 1e-300) * rate)
            if res < tol:
                return P
            if res < 0.5 * best:
                best, P_best, stalled = res, P, 0
            else:
                stalled += 1
                if stalled >= 6:
                    break
        E = E @ E
        E /= max(np.linalg.norm(E), 1e-300)
        if not np.all(np.isfinite(E)):
            break

    P = P_best
    for _ in range(50):
        try:
            Pn = solve_lyapunov(Abar - P @ R, -(Q + P @ R @ P))
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(Pn)):
            break
        P = 0.5 * (Pn + Pn.T)
        res = np.linalg.norm(riccati_rhs(P, sys)) \
            / (max(np.linalg.norm(P), 1e-300) * rate)
        if res < tol:
            return P
        if res < best:
            best, P_best = res, P
    raise RuntimeError(
        f"Riccati flow did not reach residual {tol:.1e} (best {best:.3e}); "
        "the pair (A, C) may not be detectable or (A, L W^1/2) not "
        "stabilizable")


def steady_state_discrete(dsys: DiscreteModel, C: np.ndarray = None):
    """Fixed point of the discrete filter recursion.

    Returns (P_pred, P_upd, S, K): predicted and updated covariances, steady
    innovation covariance and update gain.  Solves the correlated-noise
    discrete Riccati equation (cross term Md) in predictor form.
    """
    C = dsys.C if C is None else np.asarray(C, dtype=float)
    Ppred = solve_discrete_are(dsys.Ad.T, C.T, dsys.Qd, dsys.V, s=dsys.Md)
    Ppred = 0.5 * (Ppred + Ppred.T)
    S = C @ Ppred @ C.T + dsys.V
    K = np.linalg.solve(S, C @ Ppred).T
    IKC = np.eye(dsys.n) - K @ C
    Pupd = IKC @ Ppred @ IKC.T + K @ dsys.V @ K.T
    return Ppred, 0.5 * (Pupd + Pupd.T), 0.5 * (S + S.T), K


@dataclass(frozen=True)
class FilterRun:
    """Output of one filtering pass.

    xhat[k] and P_diag[k] are the updated estimate/covariance diagonal at
    sample k (conditioned on z[0..k]); innovations[k] = z[k] - C xhat[k|k-1]
    with predicted-covariance S_seq[k].  P_final / P_pred_final are the full
    updated/predicted covariances after the last step.  From steady_from on
    (if >= 0) the covariances had converged and were frozen.  P_seq holds
    the full per-step updated covariance only when the run was made with
    store_covariances=True.
    """

    dt: float
    t0: float
    xhat: np.ndarray            # (N, n)
    innovations: np.ndarray     # (N, m)
    S_seq: np.ndarray           # (N, m, m)
    P_diag: np.ndarray          # (N, n)
    P_final: np.ndarray         # (n, n) updated
    P_pred_final: np.ndarray    # (n, n) predicted for step N
    gain_final: np.ndarray      # (n, m) update gain at the last step
    steady_from: int = -1
    P_seq: np.ndarray = None    # (N, n, n) optional
    gain_seq: np.ndarray = None  # (N, n, m) optional

    @property
    def n_steps(self) -> int:
        return self.xhat.shape[0]

    @property
    def n(self) -> int:
        return self.xhat.shape[1]

    @property
    def m(self) -> int:
        return self.innovations.shape[1]

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps)

    def state(self, k: int) -> KalmanState:
        """Full KalmanState at sample k; needs stored covariances (or a
        converged k when only the steady covariance is retained)."""
        k = int(k)
        if self.P_seq is not None:
            P = self.P_seq[k]
        elif 0 <= self.steady_from <= k:
            P = self.P_final
        else:
            raise ValueError(
                "full covariance not retained for this step; rerun with "
                "store_covariances=True")
        return KalmanState(t=self.t0 + k * self.dt, xhat=self.xhat[k], P=P)


@njit(cache=True)
def _kf_segment(Ad, Qd, C, Vs, Md, z, k0, k1, x, P,
                xhat, Pdiag, nus, Ss, freeze_tol, frozen_in):
    n = Ad.shape[0]
    m = C.shape[0]
    I = np.eye(n)
    frozen = frozen_in
    steady_from = -1
    K = np.zeros((n, m))
    G = np.zeros((n, m))
    S = np.zeros((m, m))
    Pup = np.zeros((n, n))
    Pprev = P.copy()
    check = 64
    for k in range(k0, k1):
        nu = z[k] - C @ x
        if not frozen:
            S = C @ P @ C.T + Vs
            Sinv = np.linalg.inv(S)
            K = P @ C.T @ Sinv
            G = Md @ Sinv
            IKC = I - K @ C
            Pup = IKC @ P @ IKC.T + K @ Vs @ K.T
            AK = Ad @ K
            P = Ad @ Pup @ Ad.T + Qd - AK @ Md.T - Md @ AK.T - G @ Md.T
            P = 0.5 * (P + P.T)
        x = x + K @ nu
        xhat[k] = x
        for i in range(n):
            Pdiag[k, i] = Pup[i, i]
        nus[k] = nu
        Ss[k] = S
        x = Ad @ x + G @ nu
        if not frozen and (k - k0 + 1) % check == 0:
            num = 0.0
            den = 1e-300
            for i in range(n):
                for j in range(n):
                    d = abs(P[i, j] - Pprev[i, j])
                    if d > num:
                        num = d
                    a = abs(P[i, j])
                    if a > den:
                        den = a
            if num <= freeze_tol * den:
                frozen = True
                steady_from = k + 1
            else:
                Pprev = P.copy()
    return x, P, Pup, K, frozen, steady_from


@njit(cache=True)
def _kf_segment_full(Ad, Qd, C, Vs, Md, z, k0, k1, x, P,
                     xhat, Pdiag, nus, Ss, Pseq, Kseq):
    n = Ad.shape[0]
    I = np.eye(n)
    K = np.zeros((n, C.shape[0]))
    Pup = np.zeros((n, n))
    for k in range(k0, k1):
        nu = z[k] - C @ x
        S = C @ P @ C.T + Vs
        Sinv = np.linalg.inv(S)
        K = P @ C.T @ Sinv
        G = Md @ Sinv
        IKC = I - K @ C
        Pup = IKC @ P @ IKC.T + K @ Vs @ K.T
        x = x + K @ nu
        xhat[k] = x
        Pseq[k] = Pup
        Kseq[k] = K
        for i in range(n):
            Pdiag[k, i] = Pup[i, i]
        nus[k] = nu
        Ss[k] = S
        AK = Ad @ K
        P = Ad @ Pup @ Ad.T + Qd - AK @ Md.T - Md @ AK.T - G @ Md.T
        P = 0.5 * (P + P.T)
        x = Ad @ x + G @ nu
    return x, P, Pup, K


def run_filter(dsys: DiscreteModel, z: np.ndarray, x0: np.ndarray = None,
               P0: np.ndarray = None, t0: float = 0.0,
               store_covariances: bool = False,
               freeze_tol: float = 1e-12) -> FilterRun:
    """Filter a measurement record with the exact discrete recursion.

    x0 defaults to zero, P0 to the stationary (unconditional) covariance of
    the model, the natural prior for a record that starts in steady state.
    Schedule-driven measurement changes are honored; within a segment the
    covariance recursion freezes once P stops changing (relative tolerance
    freeze_tol), after which only the mean propagates.  Deterministic
    inputs are taken as zero.
    """
    z = np.ascontiguousarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    N = z.shape[0]
    n, m = dsys.n, dsys.m
    if z.shape[1] != m:
        raise ValueError(f"record has {z.shape[1]} channels, model emits {m}")
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n).copy()
    if P0 is None:
        if np.max(np.abs(np.linalg.eigvals(dsys.Ad))) >= 1.0:
            raise ValueError("Ad is not stable; supply an explicit prior P0")
        P = solve_discrete_lyapunov(dsys.Ad, dsys.Qd)
        P = 0.5 * (P + P.T)
    else:
        P = 0.5 * (np.asarray(P0, dtype=float).reshape(n, n)
                   + np.asarray(P0, dtype=float).reshape(n, n).T)

    xhat = np.empty((N, n))
    Pdiag = np.empty((N, n))
    nus = np.empty((N, m))
    Ss = np.empty((N, m, m))
    Pseq = np.empty((N, n, n)) if store_covariances else None
    Kseq = np.empty((N, n, m)) if store_covariances else None

    segments = schedule_segments(dsys, t0, N)
    Ad = np.ascontiguousarray(dsys.Ad)
    Qd = np.ascontiguousarray(dsys.Qd)
    Vs = np.ascontiguousarray(dsys.V)
    Md = np.ascontiguousarray(dsys.Md)

    steady_from = -1
    Pup = P.copy()
    K = np.zeros((n, m))
    for k0, k1, C, _D in segments:
        C = np.ascontiguousarray(C)
        if store_covariances:
            x, P, Pup, K = _kf_segment_full(
                Ad, Qd, C, Vs, Md, z, k0, k1, x, P,
                xhat, Pdiag, nus, Ss, Pseq, Kseq)
            steady_from = -1
        else:
            x, P, Pup, K, frozen, sf = _kf_segment(
                Ad, Qd, C, Vs, Md, z, k0, k1, x, P,
                xhat, Pdiag, nus, Ss, freeze_tol, False)
            # freezing is only meaningful if it happened in the last segment
            steady_from = sf if frozen else -1
    return FilterRun(dt=dsys.dt, t0=t0, xhat=xhat, innovations=nus, S_seq=Ss,
                     P_diag=Pdiag, P_final=0.5 * (Pup + Pup.T),
                     P_pred_final=0.5 * (P + P.T), gain_final=K,
                     steady_from=steady_from, P_seq=Pseq, gain_seq=Kseq)


def unconditional_covariance(P: np.ndarray, xhat: np.ndarray,
                             drop: int = 0) -> np.ndarray:
    """Reconstruct the unconditional state covariance P + cov(xhat) from a
    stationary stretch of estimates (transient rows dropped via `drop`)."""
    xs = np.asarray(xhat, dtype=float)[drop:]
    if xs.shape[0] < 2:
        raise ValueError("need at least two estimate samples")
    cov = np.cov(xs, rowvar=False)
    cov = np.atleast_2d(cov)
    return np.asarray(P, dtype=float) + cov


def uncertainty_ellipse(P: np.ndarray, indices=(0, 1),
                        confidence: float = 0.95):
    """Confidence ellipse of a covariance 2-subblock.

    Returns (semi_axes, angle): semi-axis lengths (descending) scaled by the
    chi-square(2 dof) quantile of `confidence`, and the orientation of the
    major axis in radians.
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence!r}")
    i, j = indices
    sub = np.asarray(P, dtype=float)[np.ix_([i, j], [i, j])]
    lam, U = np.linalg.eigh(0.5 * (sub + sub.T))
    if lam[0] < -1e-12 * max(abs(lam[1]), 1.0):
        raise ValueError(f"covariance block not PSD (eigenvalues {lam})")
    lam = np.clip(lam, 0.0, None)
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    vmax = U[:, order[0]]
    axes = np.sqrt(chi2.ppf(confidence, 2) * lam)
    angle = float(np.arctan2(vmax[1], vmax[0]))
    return axes, angle


_FRUN_MAGIC = b"OMKFRUN1"
_FRUN_VERSION = 1


def save_filter_run(run: FilterRun, path) -> None:
    """Binary layout (little endian): magic, version, n, m, N, dt, t0,
    steady_from, then xhat (N*n), P_diag (N*n), innovations (N*m),
    S_seq (N*m*m), P_final (n*n), P_pred_final (n*n), gain_final (n*m),
    all float64 row-major."""
    header = struct.pack("<8sIIIQddq", _FRUN_MAGIC, _FRUN_VERSION, run.n,
                         run.m, run.n_steps, run.dt, run.t0, run.steady_from)
    with open(path, "wb") as fh:
        fh.write(header)
        for a in (run.xhat, run.P_diag, run.innovations, run.S_seq,
                  run.P_final, run.P_pred_final, run.gain_final):
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_filter_run(path) -> FilterRun:
    head_size = struct.calcsize("<8sIIIQddq")
    with open(path, "rb") as fh:
        raw = fh.read(head_size)
        if len(raw) < head_size or raw[:8] != _FRUN_MAGIC:
            raise ValueError(f"not a filter-run file (bad magic in {path})")
        magic, version, n, m, N, dt, t0, steady = struct.unpack(
            "<8sIIIQddq", raw)
        if version != _FRUN_VERSION:
            raise ValueError(f"unsupported filter-run version {version}")

        def block(*shape):
            count = int(np.prod(shape))
            return np.frombuffer(fh.read(8 * count),
                                 dtype="<f8").reshape(shape).astype(float)

        xhat = block(N, n)
        Pdiag = block(N, n)
        nus = block(N, m)
        Ss = block(N, m, m)
        Pf = block(n, n)
        Ppf = block(n, n)
        gain = block(n, m)
    return FilterRun(dt=dt, t0=t0, xhat=xhat, innovations=nus, S_seq=Ss,
                     P_diag=Pdiag, P_final=Pf, P_pred_final=Ppf,
                     gain_final=gain, steady_from=steady)


def filter_run_to_csv(run: FilterRun, path, labels=None) -> None:
    n, m = run.n, run.m
    if labels is None:
        labels = [f"x{i}" for i in range(n)]
    cols = (["t"] + [f"xhat_{s}" for s in labels]
            + [f"P_{s}" for s in labels] + [f"innov{j}" for j in range(m)])
    data = np.column_stack([run.t, run.xhat, run.P_diag, run.innovations])
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="")
