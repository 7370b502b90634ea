import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctlqr import lsde, matexp, sysid
from ctlqr.exceptions import DegenerateDataError, RecoveryDomainError
from ctlqr.io import matrices_from_csv

from conftest import random_stable, scaled_to


def noiseless_traj(rng, A, B, h, n):
    s = lsde.ContinuousSystem(A, B)
    return lsde.simulate_dithered_feedback(s, np.zeros((B.shape[1], A.shape[0])), n, h, lsde.NoiseModel(0.0), rng)


class TestDiscreteSingle:
    def test_noiseless_recovers_discrete_pair(self, rng):
        A = random_stable(rng, 3)
        B = rng.standard_normal((3, 2))
        tr = noiseless_traj(rng, A, B, 0.05, 12)
        disc = lsde.discretize(lsde.ContinuousSystem(A, B), 0.05)
        At, Bt, diag = sysid.estimate_discrete_single(tr)
        np.testing.assert_allclose(At, disc.Aprime, atol=1e-8)
        np.testing.assert_allclose(Bt, disc.Bprime, atol=1e-8)
        assert diag["n_samples"] == 12 and diag["gram_min_singular"] > 0

    @pytest.mark.parametrize("method", ["fixed-point", "single-pass"])
    def test_hand_example(self, method):
        tr = lsde.SampledTrajectory(1.0, np.array([[0.0], [1.0], [0.0]]), np.array([[1.0], [0.0]]))
        At, Bt, _ = sysid.estimate_discrete_single(tr, method)
        assert At[0, 0] == pytest.approx(0.0, abs=1e-15)
        assert Bt[0, 0] == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("method", ["fixed-point", "single-pass"])
    def test_zero_states_degenerate(self, method):
        tr = lsde.SampledTrajectory(1.0, np.zeros((5, 1)), np.ones((4, 1)))
        with pytest.raises(DegenerateDataError):
            sysid.estimate_discrete_single(tr, method)

    def test_empty_trajectory(self):
        tr = lsde.SampledTrajectory(1.0, np.zeros((1, 2)), np.zeros((0, 1)))
        with pytest.raises(DegenerateDataError):
            sysid.identify_single(tr)

    def test_single_pass_is_biased_on_noiseless_data(self, rng):
        # the one-pass two-stage fit ignores the x/u sample cross-correlation
        A = random_stable(rng, 3)
        tr = noiseless_traj(rng, A, np.eye(3), 1 / 30, 20)
        disc = lsde.discretize(lsde.ContinuousSystem(A, np.eye(3)), 1 / 30)
        At_sp, _, _ = sysid.estimate_discrete_single(tr, "single-pass")
        At_fp, _, _ = sysid.estimate_discrete_single(tr, "fixed-point")
        assert np.linalg.norm(At_fp - disc.Aprime) < 1e-10
        assert np.linalg.norm(At_sp - disc.Aprime) > 1e-6

    def test_fixed_point_is_limit_of_alternation(self, rng):
        A = random_stable(rng, 2)
        s = lsde.ContinuousSystem(A, np.eye(2))
        tr = lsde.simulate_dithered_feedback(s, np.zeros((2, 2)), 400, 0.1, lsde.NoiseModel(1.0), rng)
        X, Xn, U = tr.states[:-1], tr.states[1:], tr.actions
        Bt = np.zeros((2, 2))
        for _ in range(500):
            At = np.linalg.lstsq(X, Xn - U @ Bt.T, rcond=None)[0].T
            Bt = np.linalg.lstsq(U, Xn - X @ At.T, rcond=None)[0].T
        At_fp, Bt_fp, _ = sysid.estimate_discrete_single(tr)
        np.testing.assert_allclose(At, At_fp, atol=1e-9)
        np.testing.assert_allclose(Bt, Bt_fp, atol=1e-9)

    @given(st.integers(0, 2**32 - 1))
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        s = lsde.ContinuousSystem(random_stable(rng, 2), np.eye(2))
        tr = lsde.simulate_dithered_feedback(s, np.zeros((2, 2)), 40, 0.1, lsde.NoiseModel(1.0), rng)
        At, Bt, _ = sysid.estimate_discrete_single(tr)
        # the same transitions, shuffled, fed through the order-free normal equations
        perm = rng.permutation(40)
        X, Xn, U = tr.states[:-1][perm], tr.states[1:][perm], tr.actions[perm]
        Z = np.hstack([X, U])
        theta = np.linalg.solve(Z.T @ Z, Z.T @ Xn).T
        np.testing.assert_allclose(At, theta[:, :2], atol=1e-9)
        np.testing.assert_allclose(Bt, theta[:, 2:], atol=1e-9)
        # the multi-trajectory estimate is invariant to reordering the batch
        Xb = rng.standard_normal((12, 3, 2))
        Ub = rng.standard_normal((12, 2, 2))
        a = sysid.estimate_discrete_multi(sysid.MultiTrajectoryBatch(0.1, Xb, Ub))
        p = rng.permutation(12)
        b = sysid.estimate_discrete_multi(sysid.MultiTrajectoryBatch(0.1, Xb[p], Ub[p]))
        np.testing.assert_allclose(a[0], b[0], atol=1e-10)
        np.testing.assert_allclose(a[1], b[1], atol=1e-10)


class TestRecovery:
    def test_forward_map_inverse(self, rng):
        for _ in range(20):
            A = scaled_to(rng, 3, 2.0)
            B = rng.standard_normal((3, 3))
            h = 1 / 30
            Ah, Bh = sysid.recover_continuous(matexp.expm(A, h), matexp.exp_integral(A, h) @ B, h)
            np.testing.assert_allclose(Ah, A, atol=1e-9)
            np.testing.assert_allclose(Bh, B, atol=1e-9)

    def test_identity(self, rng):
        B = rng.standard_normal((2, 2))
        Ah, Bh = sysid.recover_continuous(np.eye(2), 0.1 * B, 0.1)
        np.testing.assert_allclose(Ah, 0.0, atol=1e-15)
        np.testing.assert_allclose(Bh, B, atol=1e-14)

    def test_recovery_on_norm_scaled_grid(self, rng):
        for _ in range(50):
            A = rng.uniform(-1, 1, (3, 3))
            h = 1 / (15 * np.linalg.norm(A, 2))
            sysid.recover_continuous(matexp.expm(A, h), matexp.exp_integral(A, h), h)

    def test_domain_error(self):
        with pytest.raises(RecoveryDomainError):
            sysid.recover_continuous(np.diag([2.0, 1.0]), np.eye(2), 0.1)


class TestMulti:
    def test_noiseless_exact_with_minimal_batch(self, rng):
        A = random_stable(rng, 3)
        B = rng.standard_normal((3, 2))
        disc = lsde.discretize(lsde.ContinuousSystem(A, B), 1 / 30)
        X, U = lsde.simulate_batch(disc, 5, 2, lsde.NoiseModel(0.0), rng, x0=rng.standard_normal(3))
        # nonzero common start keeps the final-transition regressors generic
        X[:, 0] = rng.standard_normal((5, 3))
        X[:, 1] = X[:, 0] @ disc.Aprime.T + U[:, 0] @ disc.Bprime.T
        X[:, 2] = X[:, 1] @ disc.Aprime.T + U[:, 1] @ disc.Bprime.T
        At, Bt, _ = sysid.estimate_discrete_multi(sysid.MultiTrajectoryBatch(1 / 30, X, U))
        np.testing.assert_allclose(At, disc.Aprime, atol=1e-8)
        np.testing.assert_allclose(Bt, disc.Bprime, atol=1e-8)

    def test_too_few_trajectories(self):
        batch = sysid.MultiTrajectoryBatch(0.1, np.ones((1, 3, 2)), np.ones((1, 2, 1)))
        with pytest.raises(DegenerateDataError):
            sysid.estimate_discrete_multi(batch)

    def test_from_trajectories(self, rng):
        trs = [lsde.SampledTrajectory(0.1, rng.standard_normal((3, 2)), rng.standard_normal((2, 1))) for _ in range(4)]
        b = sysid.MultiTrajectoryBatch.from_trajectories(trs)
        assert (b.H, b.T0) == (4, 2)


class TestBound:
    def test_examples(self):
        assert sysid.error_transfer_bound(0.0, 0.1, 1.0, 1.0) == 0.0
        assert sysid.error_transfer_bound(1 / 15, 1 / 15, 1.0, 1.0) == pytest.approx(3.0)

    def test_perturbation_sweep(self, rng):
        for _ in range(20):
            A = rng.uniform(-1, 1, (3, 3))
            B = np.eye(3)
            kA, kB = np.linalg.norm(A, 2), np.linalg.norm(B, 2)
            h = 1 / (15 * kA)
            At, Bt = matexp.expm(A, h), matexp.exp_integral(A, h) @ B
            for eps in (1e-4, 1e-2, 1 / 15):
                D = rng.standard_normal((3, 3))
                E = rng.standard_normal((3, 3))
                Ah, Bh = sysid.recover_continuous(
                    At + eps * D / np.linalg.norm(D, 2), Bt + eps * E / np.linalg.norm(E, 2), h
                )
                bound = sysid.error_transfer_bound(eps, h, kA, kB)
                assert np.linalg.norm(Ah - A, 2) <= bound
                assert np.linalg.norm(Bh - B, 2) <= bound


class TestEstimators:
    def test_identifier_api(self, rng):
        A = random_stable(rng, 3)
        tr = noiseless_traj(rng, A, np.eye(3), 1 / 30, 30)
        est = sysid.ContinuousTimeIdentifier(h=1 / 30).fit(tr.states, tr.actions)
        np.testing.assert_allclose(est.A_, A, atol=1e-8)
        assert est.get_params() == {"h": 1 / 30, "method": "fixed-point"}
        pred = est.predict(tr.states[:-1], tr.actions)
        np.testing.assert_allclose(pred, tr.states[1:], atol=1e-10)

    def test_not_fitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            sysid.ContinuousTimeIdentifier().predict(np.zeros((1, 3)), np.zeros((1, 3)))

    def test_multi_identifier(self, rng):
        A = random_stable(rng, 2)
        disc = lsde.discretize(lsde.ContinuousSystem(A, np.eye(2)), 0.1)
        X, U = lsde.simulate_batch(disc, 2000, 2, lsde.NoiseModel(1.0), rng)
        est = sysid.MultiTrajectoryIdentifier(h=0.1).fit(X, U)
        assert est.get_params() == {"h": 0.1}
        assert np.linalg.norm(est.A_ - A) < 2.0

    def test_csv_round_trip(self, rng):
        A = random_stable(rng, 2)
        est = sysid.identify_single(noiseless_traj(rng, A, np.eye(2), 0.1, 10))
        back = matrices_from_csv(sysid.estimate_to_csv(est))
        for name in ("Atilde", "Btilde", "Ahat", "Bhat"):
            np.testing.assert_array_equal(back[name], getattr(est, name))
