import math

import numpy as np
import pytest
from scipy.linalg import solve_continuous_are, solve_lyapunov

from omkalman import (StateSpaceModel, discretize, kalman_gain, load_filter_run,
                      riccati_rhs, run_filter, save_filter_run, simulate,
                      stationary_covariance, steady_state_covariance,
                      steady_state_discrete, uncertainty_ellipse,
                      unconditional_covariance)

from conftest import random_model


def scalar_model(a=-1.0, c=1.0, w=1.0, v=1.0, m=0.0):
    return StateSpaceModel(
        A=[[a]], B=np.zeros((1, 0)), C=[[c]], D=np.zeros((1, 0)),
        L=[[1.0]], W=[[w]], V=[[v]], M=[[m]])


class TestContinuousRiccati:
    def test_scalar_fixed_point(self):
        P = steady_state_covariance(scalar_model())
        assert P[0, 0] == pytest.approx(math.sqrt(2.0) - 1.0, rel=1e-10)

    def test_scalar_with_cross_correlation(self):
        # a=-1, w=2, v=1, m=1/2: closed-form fixed point 1/2, gain 1
        sys = scalar_model(w=2.0, v=1.0, m=0.5)
        P = steady_state_covariance(sys)
        assert P[0, 0] == pytest.approx(0.5, rel=1e-10)
        K = kalman_gain(P, sys.C, sys.M, sys.V, sys.L)
        assert K[0, 0] == pytest.approx(1.0, rel=1e-10)

    def test_rhs_vanishes_at_fixed_point(self):
        rng = np.random.default_rng(7)
        sys = random_model(rng, 4, 0, 2, 3)
        P = steady_state_covariance(sys)
        scale = np.linalg.norm(P) * np.linalg.norm(sys.A, 2)
        assert np.linalg.norm(riccati_rhs(P, sys)) < 1e-9 * scale

    def test_matches_scipy_when_uncorrelated(self):
        rng = np.random.default_rng(3)
        sys = random_model(rng, 5, 0, 2, 4)
        sys = StateSpaceModel(A=sys.A, B=sys.B, C=sys.C, D=sys.D, L=sys.L,
                              W=sys.W, V=sys.V, M=np.zeros((sys.q, sys.m)))
        P = steady_state_covariance(sys)
        ref = solve_continuous_are(sys.A.T, sys.C.T, sys.L @ sys.W @ sys.L.T,
                                   sys.V)
        assert np.allclose(P, ref, rtol=1e-8)

    def test_large_noise_approaches_open_loop(self):
        sys = scalar_model(v=1e12)
        P = steady_state_covariance(sys)
        lyap = -solve_lyapunov(np.asarray(sys.A), sys.L @ sys.W @ sys.L.T)
        assert P[0, 0] == pytest.approx(lyap[0, 0], rel=1e-5)

    def test_worse_measurements_never_reduce_uncertainty(self):
        rng = np.random.default_rng(11)
        sys = random_model(rng, 4, 0, 2, 3)
        sys = StateSpaceModel(A=sys.A, B=sys.B, C=sys.C, D=sys.D, L=sys.L,
                              W=sys.W, V=sys.V, M=np.zeros((sys.q, sys.m)))
        P1 = steady_state_covariance(sys)
        noisier = StateSpaceModel(A=sys.A, B=sys.B, C=sys.C, D=sys.D,
                                  L=sys.L, W=sys.W, V=10.0 * sys.V, M=sys.M)
        P2 = steady_state_covariance(noisier)
        lam = np.linalg.eigvalsh(P2 - P1)
        assert lam.min() > -1e-10 * lam.max()


class TestDiscreteFixedPoint:
    def test_agrees_with_filter_convergence(self):
        rng = np.random.default_rng(5)
        sys = random_model(rng, 3, 0, 2, 3)
        dsys = discretize(sys, 0.01)
        traj = simulate(dsys, 4000, seed=2)
        run = run_filter(dsys, traj.z)
        Ppred, Pupd, S, K = steady_state_discrete(dsys)
        assert run.steady_from is not None
        assert np.allclose(run.P_final, Pupd, rtol=1e-9, atol=1e-12)
        assert np.allclose(run.P_pred_final, Ppred, rtol=1e-9, atol=1e-12)
        assert np.allclose(run.gain_final, K, rtol=1e-9, atol=1e-12)

    def test_convergence_from_inflated_prior(self):
        rng = np.random.default_rng(9)
        sys = random_model(rng, 3, 0, 1, 2)
        dsys = discretize(sys, 0.02)
        traj = simulate(dsys, 5000, seed=3)
        run = run_filter(dsys, traj.z, P0=1e6 * np.eye(3))
        _, Pupd, _, _ = steady_state_discrete(dsys)
        assert np.allclose(run.P_final, Pupd, rtol=1e-8)

    def test_small_step_matches_continuous_update(self):
        # at dt -> 0 the discrete posterior approaches the continuous one
        sys = scalar_model(w=2.0, v=1.0, m=0.5)
        Pc = steady_state_covariance(sys)[0, 0]
        _, Pupd, _, _ = steady_state_discrete(discretize(sys, 1e-5))
        assert Pupd[0, 0] == pytest.approx(Pc, rel=1e-3)

    def test_cross_term_changes_fixed_point(self):
        sys_m = scalar_model(w=2.0, v=1.0, m=0.5)
        sys_0 = scalar_model(w=2.0, v=1.0, m=0.0)
        _, P_m, _, _ = steady_state_discrete(discretize(sys_m, 1e-4))
        _, P_0, _, _ = steady_state_discrete(discretize(sys_0, 1e-4))
        # with m=0 the scalar fixed point is sqrt(3)-1
        assert P_m[0, 0] == pytest.approx(0.5, rel=1e-3)
        assert P_0[0, 0] == pytest.approx(math.sqrt(3.0) - 1.0, rel=1e-3)


class TestEquivalentReformulation:
    def test_shifted_drift_gives_same_estimates(self):
        # absorbing the cross correlation into the drift (A - L M V^-1 C,
        # W - M V^-1 M^T) must reproduce the same steady covariance
        rng = np.random.default_rng(21)
        sys = random_model(rng, 3, 0, 2, 2)
        P1 = steady_state_covariance(sys)
        Vinv = np.linalg.inv(sys.V)
        Abar = sys.A - sys.L @ sys.M @ Vinv @ sys.C
        Wbar = sys.W - sys.M @ Vinv @ sys.M.T
        shifted = StateSpaceModel(
            A=Abar, B=sys.B, C=sys.C, D=sys.D, L=sys.L, W=Wbar, V=sys.V,
            M=np.zeros((sys.q, sys.m)))
        P2 = steady_state_covariance(shifted)
        assert np.allclose(P1, P2, rtol=1e-8)


@pytest.fixture(scope="module")
def matched_run():
    rng = np.random.default_rng(13)
    sys = random_model(rng, 4, 0, 2, 3)
    dsys = discretize(sys, 0.005)
    traj = simulate(dsys, 400000, seed=17)
    return sys, dsys, traj, run_filter(dsys, traj.z)


class TestFilterRuns:

    def test_innovation_covariance_matches_prediction(self, matched_run):
        _, _, _, run = matched_run
        nu = run.innovations[2000:]
        emp = nu.T @ nu / len(nu)
        assert np.allclose(emp, run.S_seq[-1], rtol=0.05)

    def test_error_orthogonal_to_estimate(self, matched_run):
        _, _, traj, run = matched_run
        err = (traj.x - run.xhat)[2000:]
        est = run.xhat[2000:] - run.xhat[2000:].mean(axis=0)
        n = len(err)
        cross = err.T @ est / n
        norm = np.sqrt(np.outer(np.diag(err.T @ err / n),
                                np.diag(est.T @ est / n)))
        assert np.max(np.abs(cross / norm)) < 0.05

    def test_error_covariance_matches_P(self, matched_run):
        _, _, traj, run = matched_run
        err = (traj.x - run.xhat)[2000:]
        emp = err.T @ err / len(err)
        assert np.allclose(np.diag(emp), np.diag(run.P_final), rtol=0.1)

    def test_unconditional_covariance_identity(self, matched_run):
        sys, _, _, run = matched_run
        total = unconditional_covariance(run.P_final, run.xhat, drop=2000)
        ref = stationary_covariance(sys)
        assert np.allclose(np.diag(total), np.diag(ref), rtol=0.1)

    def test_store_covariances(self, matched_run):
        _, dsys, traj, _ = matched_run
        run = run_filter(dsys, traj.z[:200], store_covariances=True)
        assert run.P_seq.shape == (200, dsys.n, dsys.n)
        assert run.gain_seq.shape == (200, dsys.n, dsys.m)
        assert np.allclose(run.P_seq[-1], run.P_final)

    def test_gain_freeze_matches_unfrozen(self, matched_run):
        _, dsys, traj, _ = matched_run
        frozen = run_filter(dsys, traj.z[:20000])
        exact = run_filter(dsys, traj.z[:20000], freeze_tol=0.0)
        assert np.allclose(frozen.xhat, exact.xhat, rtol=1e-6, atol=1e-9)

    def test_save_load_roundtrip(self, matched_run, tmp_path):
        _, _, _, run = matched_run
        path = tmp_path / "run.bin"
        save_filter_run(run, path)
        back = load_filter_run(path)
        assert back.dt == run.dt
        assert np.array_equal(back.xhat, run.xhat)
        assert np.array_equal(back.innovations, run.innovations)
        assert np.array_equal(back.P_final, run.P_final)
        assert back.steady_from == run.steady_from

    def test_csv_export(self, matched_run, tmp_path):
        from omkalman import filter_run_to_csv
        _, _, _, run = matched_run
        path = tmp_path / "run.csv"
        filter_run_to_csv(run, path, labels=["a", "b", "c", "d"])
        header = path.read_text().splitlines()[0]
        assert "xhat_a" in header and "innov1" in header

    def test_rejects_wrong_width(self, matched_run):
        _, dsys, traj, _ = matched_run
        with pytest.raises(ValueError, match="channels"):
            run_filter(dsys, traj.z[:, :1])


class TestScheduledFilter:
    def test_covariance_reconverges_after_switch(self):
        # start at the pre-switch fixed point, then let the covariance relax
        # to the post-switch one; the 3 s tail at rate >= 8/s leaves < 1e-10
        sys = StateSpaceModel(
            A=[[-4.0, 1.0], [-1.0, -4.0]], B=np.zeros((2, 0)),
            C=[[1.0, 0.0], [0.0, 1.0]], D=np.zeros((2, 0)),
            L=np.eye(2), W=np.diag([0.3, 0.2]), V=np.diag([0.4, 0.5]),
            M=np.zeros((2, 2)),
            schedule=((0.5, [[2.0, 0.0], [0.0, 0.5]], np.zeros((2, 0))),))
        dsys = discretize(sys, 0.001)
        Ppred_a, Pupd_a, _, _ = steady_state_discrete(dsys)
        _, Pupd_b, _, _ = steady_state_discrete(dsys, C=sys.schedule[0].C)
        traj = simulate(dsys, 3500, seed=5, x_init=np.zeros(2))
        run = run_filter(dsys, traj.z, P0=Ppred_a, store_covariances=True)
        k_switch = 500
        assert np.allclose(run.P_seq[k_switch - 1], Pupd_a, rtol=1e-10)
        assert np.allclose(run.P_seq[-1], Pupd_b, rtol=1e-5)
        assert not np.allclose(Pupd_a, Pupd_b, rtol=1e-3)


class TestEllipse:
    def test_identity_gives_confidence_radius(self):
        axes, _ = uncertainty_ellipse(np.eye(2))
        assert axes[0] == pytest.approx(2.447746830680816, rel=1e-12)
        assert axes[1] == pytest.approx(axes[0], rel=1e-12)

    def test_axis_alignment(self):
        P = np.diag([4.0, 1.0, 9.0])
        axes, angle = uncertainty_ellipse(P, indices=(0, 1))
        assert axes[0] / axes[1] == pytest.approx(2.0, rel=1e-12)
        assert math.cos(angle) ** 2 == pytest.approx(1.0, abs=1e-12)
        axes2, _ = uncertainty_ellipse(P, indices=(2, 1))
        assert axes2[0] / axes2[1] == pytest.approx(3.0, rel=1e-12)

    def test_rejects_bad_confidence(self):
        with pytest.raises(ValueError):
            uncertainty_ellipse(np.eye(2), confidence=1.5)
