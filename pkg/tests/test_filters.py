import numpy as np
import pytest

from cooploc.geom import Pose2, wrap_angle
from cooploc.models import MotionInput, RelPosMeasurement, meas_jacobians, rel_pos_h
from cooploc.xform import to_transformed_cov, transformed_meas_jacobians, xform_T
from cooploc.filters.beliefs import (
    FRAME_ORIGINAL,
    FRAME_TRANSFORMED,
    CorrectionMessage,
    CrossCovTable,
    RobotBelief,
    assemble_joint,
)
from cooploc.filters.joint import (
    JointEkf,
    TransformedJointEkf,
    joint_ekf_update_landmark,
)
from cooploc.filters.naive import naive_update
from cooploc.filters.runtime import (
    ESTIMATOR_KINDS,
    JointRuntime,
    NaiveFilter,
    OsbFilter,
    TransformedJointRuntime,
    TsbFilter,
    make_filter,
)
from cooploc.filters.server import (
    UpdateBundleA,
    UpdateBundleB,
    landmark_update,
    osb_align_crosscov,
    osb_robot_apply,
    osb_robot_propagate,
    osb_server_corrections,
    osb_server_update_crosscov,
    schmidt_partial_update,
    tsb_robot_apply,
    tsb_robot_propagate,
    tsb_server_corrections,
    tsb_server_update_crosscov,
)

Q_STEP = np.diag([4e-4, 1e-6, 2.5e-5])
R_MEAS = np.diag([0.04, 0.04])


def _spd3(rng, scale=0.1):
    A = rng.standard_normal((3, 3)) * scale
    return A @ A.T + scale * np.eye(3)


def _team(rng, n):
    poses = [
        Pose2(position=rng.uniform(-5, 5, 2), heading=rng.uniform(-2, 2))
        for _ in range(n)
    ]
    P0s = [_spd3(rng) for _ in range(n)]
    return poses, P0s


def _blockdiag(blocks):
    n = len(blocks)
    P = np.zeros((3 * n, 3 * n))
    for i, B in enumerate(blocks):
        P[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = B
    return P


def _inputs(rng, n):
    return [
        MotionInput(v=np.array([rng.uniform(0.5, 2.0), 0.0]), omega=rng.uniform(-1, 1))
        for _ in range(n)
    ]


def _noisy_meas(rng, beliefs, a, b):
    y = rel_pos_h(beliefs[a].x_hat, beliefs[b].x_hat) + 0.05 * rng.standard_normal(2)
    return y, R_MEAS


class TestCrossCovTable:
    def test_transpose_semantics(self):
        t = CrossCovTable.zeros([0, 1, 2], FRAME_ORIGINAL)
        B = np.arange(9.0).reshape(3, 3)
        t.set(2, 0, B)
        assert np.array_equal(t.get(2, 0), B)
        assert np.array_equal(t.get(0, 2), B.T)

    def test_diagonal_rejected(self):
        t = CrossCovTable.zeros([0, 1], FRAME_ORIGINAL)
        with pytest.raises(KeyError):
            t.get(1, 1)

    def test_unknown_robot(self):
        t = CrossCovTable.zeros([0, 1], FRAME_ORIGINAL)
        with pytest.raises(KeyError):
            t.get(0, 5)

    def test_missing_block(self):
        t = CrossCovTable([0, 1], FRAME_ORIGINAL)
        with pytest.raises(KeyError):
            t.get(0, 1)

    def test_copy_is_independent(self):
        t = CrossCovTable.zeros([0, 1], FRAME_ORIGINAL)
        c = t.copy()
        c.set(0, 1, np.ones((3, 3)))
        assert np.array_equal(t.get(0, 1), np.zeros((3, 3)))

    def test_frame_validation(self):
        with pytest.raises(ValueError):
            CrossCovTable([0, 1], "sideways")


class TestAssembleJoint:
    def test_original_frame_layout(self):
        rng = np.random.default_rng(0)
        poses, P0s = _team(rng, 3)
        beliefs = [
            RobotBelief(i, poses[i], P0s[i], FRAME_ORIGINAL) for i in range(3)
        ]
        cross = CrossCovTable.zeros([0, 1, 2], FRAME_ORIGINAL)
        B = rng.standard_normal((3, 3)) * 0.01
        cross.set(0, 2, B)
        jb = assemble_joint(beliefs, cross)
        assert np.allclose(jb.x_hat[3:6], poses[1].as_vector())
        assert np.array_equal(jb.P[0:3, 6:9], B)
        assert np.array_equal(jb.P[6:9, 0:3], B.T)
        assert np.array_equal(jb.P[3:6, 3:6], P0s[1])

    def test_transformed_frame_maps_back(self):
        rng = np.random.default_rng(1)
        poses, P0s = _team(rng, 2)
        anchors = [p.position for p in poses]
        calP = to_transformed_cov(_blockdiag(P0s), anchors)
        beliefs = [
            RobotBelief(i, poses[i], calP[3 * i : 3 * i + 3, 3 * i : 3 * i + 3],
                        FRAME_TRANSFORMED)
            for i in range(2)
        ]
        cross = CrossCovTable.zeros([0, 1], FRAME_TRANSFORMED)
        jb = assemble_joint(beliefs, cross)
        assert np.max(np.abs(jb.P - _blockdiag(P0s))) < 1e-10

    def test_frame_mismatch_rejected(self):
        rng = np.random.default_rng(2)
        poses, P0s = _team(rng, 2)
        beliefs = [RobotBelief(i, poses[i], P0s[i], FRAME_ORIGINAL) for i in range(2)]
        cross = CrossCovTable.zeros([0, 1], FRAME_TRANSFORMED)
        with pytest.raises(ValueError):
            assemble_joint(beliefs, cross)


def _run_tsb_pipeline(rng, n, steps):
    """Run the distributed transformed pipeline next to the monolithic oracle."""
    poses, P0s = _team(rng, n)
    beliefs = {}
    for i in range(n):
        T = xform_T(poses[i].position)
        beliefs[i] = RobotBelief(i, poses[i], T @ P0s[i] @ T.T, FRAME_TRANSFORMED)
    cross = CrossCovTable.zeros(range(n), FRAME_TRANSFORMED)
    anchors = [p.position for p in poses]
    oracle = TransformedJointEkf(
        np.concatenate([p.as_vector() for p in poses]),
        to_transformed_cov(_blockdiag(P0s), anchors),
    )
    for _ in range(steps):
        us = _inputs(rng, n)
        beliefs = {
            i: tsb_robot_propagate(beliefs[i], us[i], Q_STEP, 0.1) for i in range(n)
        }
        oracle.propagate(us, [Q_STEP] * n, 0.1)
        a, b = rng.choice(n, size=2, replace=False)
        y, R = _noisy_meas(rng, beliefs, a, b)
        bundle_a = UpdateBundleA(a, beliefs[a].x_hat, beliefs[a].P_own, y, R)
        bundle_b = UpdateBundleB(b, beliefs[b].x_hat, beliefs[b].P_own)
        msgs, S, K = tsb_server_corrections(bundle_a, bundle_b, cross)
        for msg in msgs:
            beliefs[msg.robot_id] = tsb_robot_apply(beliefs[msg.robot_id], msg)
        cross = tsb_server_update_crosscov(cross, K, S)
        oracle.update(RelPosMeasurement(observer_id=int(a), target_id=int(b), y=y, R=R))
    return beliefs, cross, oracle


def _run_osb_pipeline(rng, n, steps):
    poses, P0s = _team(rng, n)
    beliefs = {i: RobotBelief(i, poses[i], P0s[i], FRAME_ORIGINAL) for i in range(n)}
    cross = CrossCovTable.zeros(range(n), FRAME_ORIGINAL)
    phis = {i: np.eye(3) for i in range(n)}
    oracle = JointEkf(
        np.concatenate([p.as_vector() for p in poses]), _blockdiag(P0s)
    )
    for _ in range(steps):
        us = _inputs(rng, n)
        for i in range(n):
            beliefs[i], F = osb_robot_propagate(beliefs[i], us[i], Q_STEP, 0.1)
            phis[i] = F @ phis[i]
        oracle.propagate(us, [Q_STEP] * n, 0.1)
        a, b = rng.choice(n, size=2, replace=False)
        y, R = _noisy_meas(rng, beliefs, a, b)
        cross = osb_align_crosscov(cross, phis)
        phis = {i: np.eye(3) for i in range(n)}
        bundle_a = UpdateBundleA(a, beliefs[a].x_hat, beliefs[a].P_own, y, R)
        bundle_b = UpdateBundleB(b, beliefs[b].x_hat, beliefs[b].P_own)
        msgs, S, K = osb_server_corrections(bundle_a, bundle_b, cross)
        for msg in msgs:
            beliefs[msg.robot_id] = osb_robot_apply(beliefs[msg.robot_id], msg)
        cross = osb_server_update_crosscov(cross, K, S)
        oracle.update(RelPosMeasurement(observer_id=int(a), target_id=int(b), y=y, R=R))
    return beliefs, cross, oracle


class TestTsbPipeline:
    def test_matches_monolithic_oracle(self):
        """Distributed message passing reproduces the joint transformed EKF."""
        rng = np.random.default_rng(10)
        beliefs, cross, oracle = _run_tsb_pipeline(rng, 4, 12)
        jb = assemble_joint(beliefs.values(), cross)
        ob = oracle.joint_original()
        assert np.max(np.abs(jb.x_hat - ob.x_hat)) < 1e-9
        assert np.max(np.abs(jb.P - ob.P)) < 1e-9

    def test_posterior_joint_psd(self):
        rng = np.random.default_rng(11)
        beliefs, cross, _ = _run_tsb_pipeline(rng, 3, 10)
        jb = assemble_joint(beliefs.values(), cross)
        assert np.min(np.linalg.eigvalsh(jb.P)) > -1e-10
        for rb in beliefs.values():
            rb.check()

    def test_frame_guard(self):
        rb = RobotBelief(0, Pose2(position=(0, 0), heading=0.0), np.eye(3),
                         FRAME_ORIGINAL)
        with pytest.raises(ValueError):
            tsb_robot_propagate(rb, MotionInput(v=np.zeros(2), omega=0.0), Q_STEP, 0.1)

    def test_indefinite_correction_rejected(self):
        rb = RobotBelief(0, Pose2(position=(0, 0), heading=0.0), np.eye(3),
                         FRAME_TRANSFORMED)
        msg = CorrectionMessage(robot_id=0, r=np.zeros(3), Gamma=10 * np.eye(3))
        with pytest.raises(ValueError):
            tsb_robot_apply(rb, msg)


class TestOsbPipeline:
    def test_matches_monolithic_oracle(self):
        """Lazy cross-block alignment is exact: same posterior as the joint EKF."""
        rng = np.random.default_rng(20)
        beliefs, cross, oracle = _run_osb_pipeline(rng, 4, 12)
        jb = assemble_joint(beliefs.values(), cross)
        ob = oracle.belief
        assert np.max(np.abs(jb.x_hat - ob.x_hat)) < 1e-9
        # cross blocks are stale between updates; the last event was an
        # update, so the whole joint covariance agrees
        assert np.max(np.abs(jb.P - ob.P)) < 1e-9

    def test_alignment_exact_over_many_silent_steps(self):
        """Cross blocks aligned once after k steps equal eager propagation."""
        rng = np.random.default_rng(21)
        n = 3
        poses, P0s = _team(rng, n)
        cross = CrossCovTable.zeros(range(n), FRAME_ORIGINAL)
        B01 = rng.standard_normal((3, 3)) * 0.01
        cross.set(0, 1, B01)
        beliefs = {i: RobotBelief(i, poses[i], P0s[i], FRAME_ORIGINAL) for i in range(n)}
        phis = {i: np.eye(3) for i in range(n)}
        eager = cross.copy()
        for _ in range(7):
            us = _inputs(rng, n)
            Fs = {}
            for i in range(n):
                beliefs[i], F = osb_robot_propagate(beliefs[i], us[i], Q_STEP, 0.1)
                phis[i] = F @ phis[i]
                Fs[i] = F
            eager = osb_align_crosscov(eager, Fs)
        lazy = osb_align_crosscov(cross, phis)
        assert np.max(np.abs(lazy.get(0, 1) - eager.get(0, 1))) < 1e-12


class TestSchmidtPartialUpdate:
    def _correlated_state(self, rng):
        beliefs, cross, _ = _run_tsb_pipeline(rng, 4, 6)
        return beliefs, cross

    def test_full_set_equals_optimal(self):
        rng = np.random.default_rng(30)
        beliefs, cross = self._correlated_state(rng)
        a, b = 0, 2
        y, R = _noisy_meas(rng, beliefs, a, b)
        bundle_a = UpdateBundleA(a, beliefs[a].x_hat, beliefs[a].P_own, y, R)
        bundle_b = UpdateBundleB(b, beliefs[b].x_hat, beliefs[b].P_own)
        msgs_opt, S, K = tsb_server_corrections(bundle_a, bundle_b, cross)
        cross_opt = tsb_server_update_crosscov(cross, K, S)
        msgs_par, cross_par = schmidt_partial_update(
            bundle_a, bundle_b, cross, updating_set=range(4)
        )
        for mo, mp in zip(msgs_opt, msgs_par):
            assert mo.robot_id == mp.robot_id
            assert np.max(np.abs(mo.r - mp.r)) < 1e-12
            assert np.max(np.abs(mo.Gamma - mp.Gamma)) < 1e-12
        for i in range(4):
            for j in range(i + 1, 4):
                assert np.max(np.abs(cross_opt.get(i, j) - cross_par.get(i, j))) < 1e-12

    def test_partial_matches_joint_matrix_oracle(self):
        """Zeroed-gain update equals the generalized Joseph form on the full matrix."""
        rng = np.random.default_rng(31)
        beliefs, cross = self._correlated_state(rng)
        n, a, b = 4, 1, 3
        updating = {1, 2, 3}
        y, R = _noisy_meas(rng, beliefs, a, b)
        # full-matrix oracle in the transformed frame
        P = np.zeros((3 * n, 3 * n))
        for i in range(n):
            P[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = beliefs[i].P_own
            for j in range(i + 1, n):
                blk = cross.get(i, j)
                P[3 * i : 3 * i + 3, 3 * j : 3 * j + 3] = blk
                P[3 * j : 3 * j + 3, 3 * i : 3 * i + 3] = blk.T
        Ha, Hb = transformed_meas_jacobians(beliefs[a].x_hat, beliefs[b].x_hat)
        H = np.zeros((2, 3 * n))
        H[:, 3 * a : 3 * a + 3] = Ha
        H[:, 3 * b : 3 * b + 3] = Hb
        S = H @ P @ H.T + R
        C = P @ H.T
        K = C @ np.linalg.inv(S)
        for i in range(n):
            if i not in updating:
                K[3 * i : 3 * i + 3] = 0.0
        P_post = P - K @ C.T - C @ K.T + K @ S @ K.T

        bundle_a = UpdateBundleA(a, beliefs[a].x_hat, beliefs[a].P_own, y, R)
        bundle_b = UpdateBundleB(b, beliefs[b].x_hat, beliefs[b].P_own)
        msgs, new_cross = schmidt_partial_update(bundle_a, bundle_b, cross, updating)
        assert sorted(m.robot_id for m in msgs) == sorted(updating)
        post_own = {i: beliefs[i].P_own.copy() for i in range(n)}
        for m in msgs:
            post_own[m.robot_id] = beliefs[m.robot_id].P_own - m.Gamma
        for i in range(n):
            assert np.max(np.abs(post_own[i] - P_post[3 * i : 3 * i + 3, 3 * i : 3 * i + 3])) < 1e-10
            for j in range(i + 1, n):
                assert np.max(np.abs(new_cross.get(i, j) - P_post[3 * i : 3 * i + 3, 3 * j : 3 * j + 3])) < 1e-10
        # the partial posterior stays PSD
        assert np.min(np.linalg.eigvalsh((P_post + P_post.T) / 2)) > -1e-10

    def test_empty_set_rejected(self):
        rng = np.random.default_rng(32)
        beliefs, cross = self._correlated_state(rng)
        y, R = _noisy_meas(rng, beliefs, 0, 1)
        bundle_a = UpdateBundleA(0, beliefs[0].x_hat, beliefs[0].P_own, y, R)
        bundle_b = UpdateBundleB(1, beliefs[1].x_hat, beliefs[1].P_own)
        with pytest.raises(ValueError):
            schmidt_partial_update(bundle_a, bundle_b, cross, set())


class TestGainOptimality:
    def test_perturbed_gain_increases_posterior_trace(self):
        """The computed gain is a local minimizer of the posterior trace."""
        rng = np.random.default_rng(40)
        beliefs, cross, _ = _run_tsb_pipeline(rng, 3, 5)
        a, b = 0, 1
        P = assemble_joint(beliefs.values(), cross).P  # original frame
        oposes = [beliefs[i].x_hat for i in range(3)]
        Ha, Hb = meas_jacobians(oposes[a], oposes[b])
        H = np.zeros((2, 9))
        H[:, 0:3] = Ha
        H[:, 3:6] = Hb
        R = R_MEAS
        S = H @ P @ H.T + R
        C = P @ H.T
        K_opt = C @ np.linalg.inv(S)

        def post_trace(K):
            return np.trace(P - K @ C.T - C @ K.T + K @ S @ K.T)

        base = post_trace(K_opt)
        for _ in range(10):
            D = rng.standard_normal(K_opt.shape)
            D /= np.max(np.abs(D))
            assert post_trace(K_opt + 1e-4 * D) >= base - 1e-15


class TestNaive:
    def test_matches_zero_cross_joint_oracle(self):
        rng = np.random.default_rng(50)
        poses, P0s = _team(rng, 2)
        rb_a = RobotBelief(0, poses[0], P0s[0], FRAME_ORIGINAL)
        rb_b = RobotBelief(1, poses[1], P0s[1], FRAME_ORIGINAL)
        y = rel_pos_h(poses[0], poses[1]) + np.array([0.05, -0.02])
        m = RelPosMeasurement(observer_id=0, target_id=1, y=y, R=R_MEAS)
        na, nb = naive_update(rb_a, rb_b, m)
        oracle = JointEkf(
            np.concatenate([poses[0].as_vector(), poses[1].as_vector()]),
            _blockdiag(P0s),
        )
        oracle.update(m)
        ob = oracle.belief
        assert np.max(np.abs(na.x_hat.as_vector() - ob.x_hat[:3])) < 1e-12
        assert np.max(np.abs(nb.x_hat.as_vector() - ob.x_hat[3:])) < 1e-12
        assert np.max(np.abs(na.P_own - ob.P[:3, :3])) < 1e-12
        assert np.max(np.abs(nb.P_own - ob.P[3:, 3:])) < 1e-12

    def test_reported_covariance_shrinks(self):
        rng = np.random.default_rng(51)
        poses, P0s = _team(rng, 2)
        rb_a = RobotBelief(0, poses[0], P0s[0], FRAME_ORIGINAL)
        rb_b = RobotBelief(1, poses[1], P0s[1], FRAME_ORIGINAL)
        y = rel_pos_h(poses[0], poses[1])
        m = RelPosMeasurement(observer_id=0, target_id=1, y=y, R=R_MEAS)
        na, nb = naive_update(rb_a, rb_b, m)
        assert np.trace(na.P_own) < np.trace(P0s[0]) + 1e-12
        assert np.trace(nb.P_own) < np.trace(P0s[1]) + 1e-12

    def test_repeated_reuse_is_overconfident(self):
        """Feeding the same measurement repeatedly collapses the reported
        covariance even though no new information arrives."""
        rng = np.random.default_rng(52)
        poses, P0s = _team(rng, 2)
        rb_a = RobotBelief(0, poses[0], P0s[0], FRAME_ORIGINAL)
        rb_b = RobotBelief(1, poses[1], P0s[1], FRAME_ORIGINAL)
        y = rel_pos_h(poses[0], poses[1])
        start = np.trace(rb_a.P_own) + np.trace(rb_b.P_own)
        for _ in range(20):
            m = RelPosMeasurement(observer_id=0, target_id=1, y=y, R=R_MEAS)
            rb_a, rb_b = naive_update(rb_a, rb_b, m)
        end = np.trace(rb_a.P_own) + np.trace(rb_b.P_own)
        assert end < 0.5 * start


class TestLandmarkUpdate:
    def _osb_state(self, rng, n=3):
        beliefs, cross, oracle = _run_osb_pipeline(rng, n, 6)
        return beliefs, cross, oracle

    def test_original_frame_matches_joint_oracle(self):
        rng = np.random.default_rng(60)
        beliefs, cross, oracle = self._osb_state(rng)
        p_L = np.array([3.0, -1.0])
        rb = beliefs[1]
        from cooploc.geom import rot

        y = rot(rb.x_hat.heading).T @ (p_L - rb.x_hat.position) + 0.03 * rng.standard_normal(2)
        new_beliefs, new_cross = landmark_update(beliefs, cross, 1, p_L, y, R_MEAS)
        ob = joint_ekf_update_landmark(oracle.belief, 1, p_L, y, R_MEAS)
        jb = assemble_joint(new_beliefs.values(), new_cross)
        assert np.max(np.abs(jb.x_hat - ob.x_hat)) < 1e-9
        assert np.max(np.abs(jb.P - ob.P)) < 1e-9

    def test_transformed_frame_matches_joint_oracle(self):
        rng = np.random.default_rng(61)
        beliefs, cross, oracle = _run_tsb_pipeline(rng, 3, 6)
        p_L = np.array([-2.0, 4.0])
        rb = beliefs[2]
        from cooploc.geom import rot

        y = rot(rb.x_hat.heading).T @ (p_L - rb.x_hat.position) + 0.03 * rng.standard_normal(2)
        new_beliefs, new_cross = landmark_update(beliefs, cross, 2, p_L, y, R_MEAS)
        oracle.update_landmark(2, p_L, y, R_MEAS)
        jb = assemble_joint(new_beliefs.values(), new_cross)
        ob = oracle.joint_original()
        assert np.max(np.abs(jb.x_hat - ob.x_hat)) < 1e-9
        assert np.max(np.abs(jb.P - ob.P)) < 1e-9

    def test_partial_updating_set_only_touches_members(self):
        rng = np.random.default_rng(62)
        beliefs, cross, _ = self._osb_state(rng)
        p_L = np.array([1.0, 1.0])
        rb = beliefs[0]
        from cooploc.geom import rot

        y = rot(rb.x_hat.heading).T @ (p_L - rb.x_hat.position) + np.array([0.1, -0.05])
        new_beliefs, _ = landmark_update(beliefs, cross, 0, p_L, y, R_MEAS,
                                         updating_set={0, 2})
        assert new_beliefs[1] is beliefs[1]
        assert not np.allclose(new_beliefs[0].x_hat.as_vector(),
                               beliefs[0].x_hat.as_vector())


class TestRuntimeClasses:
    def _episode(self, filt, rng, n, steps, landmark_every=4):
        dt = 0.1
        for k in range(steps):
            inputs = np.column_stack(
                [rng.uniform(0.5, 2.0, n), np.zeros(n), rng.uniform(-1, 1, n)]
            )
            filt.propagate(inputs, dt)
            a, b = rng.choice(n, size=2, replace=False)
            X = filt.poses()
            pa = Pose2(position=X[a, :2], heading=X[a, 2])
            pb = Pose2(position=X[b, :2], heading=X[b, 2])
            y = rel_pos_h(pa, pb) + 0.05 * rng.standard_normal(2)
            m = RelPosMeasurement(observer_id=int(a), target_id=int(b), y=y, R=R_MEAS)
            filt.update_relpos(m)
            if k % landmark_every == 3:
                from cooploc.geom import rot

                p_L = np.array([2.0, 2.0])
                y_L = rot(X[0, 2]).T @ (p_L - X[0, :2]) + 0.03 * rng.standard_normal(2)
                filt.update_landmark(0, p_L, y_L, R_MEAS)

    def _initial(self, rng, n):
        x0 = np.column_stack(
            [rng.uniform(-5, 5, n), rng.uniform(-5, 5, n), rng.uniform(-2, 2, n)]
        )
        P0 = np.stack([_spd3(rng) for _ in range(n)])
        return x0, P0

    def test_tsb_array_filter_matches_transformed_joint(self):
        n = 3
        x0, P0 = self._initial(np.random.default_rng(70), n)
        f1 = TsbFilter(x0, P0, Q_STEP)
        f2 = TransformedJointRuntime(x0, P0, Q_STEP)
        self._episode(f1, np.random.default_rng(71), n, 10)
        self._episode(f2, np.random.default_rng(71), n, 10)
        j1, j2 = f1.joint_original(), f2.joint_original()
        assert np.max(np.abs(j1.x_hat - j2.x_hat)) < 1e-9
        assert np.max(np.abs(j1.P - j2.P)) < 1e-9

    def test_osb_array_filter_matches_joint(self):
        n = 3
        x0, P0 = self._initial(np.random.default_rng(72), n)
        f1 = OsbFilter(x0, P0, Q_STEP)
        f2 = JointRuntime(x0, P0, Q_STEP)
        self._episode(f1, np.random.default_rng(73), n, 10)
        self._episode(f2, np.random.default_rng(73), n, 10)
        j1, j2 = f1.joint_original(), f2.joint_original()
        assert np.max(np.abs(j1.x_hat - j2.x_hat)) < 1e-9
        assert np.max(np.abs(j1.P - j2.P)) < 1e-9

    def test_masked_update_matches_joint_matrix_oracle(self):
        n = 3
        rng = np.random.default_rng(74)
        x0, P0 = self._initial(rng, n)
        f = TsbFilter(x0, P0, Q_STEP)
        self._episode(f, np.random.default_rng(75), n, 5)
        P = f.P.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n).copy()
        a, b, updating = 0, 2, {0, 2}
        X = f.poses()
        pa = Pose2(position=X[a, :2], heading=X[a, 2])
        pb = Pose2(position=X[b, :2], heading=X[b, 2])
        Ha, Hb = transformed_meas_jacobians(pa, pb)
        H = np.zeros((2, 3 * n))
        H[:, 3 * a : 3 * a + 3] = Ha
        H[:, 3 * b : 3 * b + 3] = Hb
        S = H @ P @ H.T + R_MEAS
        C = P @ H.T
        K = C @ np.linalg.inv(S)
        for i in range(n):
            if i not in updating:
                K[3 * i : 3 * i + 3] = 0.0
        P_post = P - K @ C.T - C @ K.T + K @ S @ K.T
        y = rel_pos_h(pa, pb) + np.array([0.02, -0.03])
        m = RelPosMeasurement(observer_id=a, target_id=b, y=y, R=R_MEAS)
        f.update_relpos(m, updating_set=updating)
        P_new = f.P.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)
        assert np.max(np.abs(P_new - P_post)) < 1e-10
        # the skipped robot's estimate must not move
        assert np.array_equal(f.poses()[1], X[1])

    def test_naive_filter_matches_block_function(self):
        n = 2
        rng = np.random.default_rng(76)
        x0, P0 = self._initial(rng, n)
        f = NaiveFilter(x0, P0.copy(), Q_STEP)
        pa = Pose2(position=x0[0, :2], heading=x0[0, 2])
        pb = Pose2(position=x0[1, :2], heading=x0[1, 2])
        y = rel_pos_h(pa, pb) + np.array([0.05, 0.01])
        m = RelPosMeasurement(observer_id=0, target_id=1, y=y, R=R_MEAS)
        f.update_relpos(m)
        rb_a, rb_b = naive_update(
            RobotBelief(0, pa, P0[0], FRAME_ORIGINAL),
            RobotBelief(1, pb, P0[1], FRAME_ORIGINAL),
            m,
        )
        assert np.max(np.abs(f.poses()[0] - rb_a.x_hat.as_vector())) < 1e-12
        assert np.max(np.abs(f.P[1] - rb_b.P_own)) < 1e-12

    def test_make_filter_kinds(self):
        rng = np.random.default_rng(77)
        x0, P0 = self._initial(rng, 2)
        types = {
            "tsb": TsbFilter,
            "osb": OsbFilter,
            "naive": NaiveFilter,
            "central": JointRuntime,
            "joint": JointRuntime,
            "tjoint": TransformedJointRuntime,
        }
        assert set(types) == set(ESTIMATOR_KINDS)
        for kind, cls in types.items():
            assert isinstance(make_filter(kind, x0, P0, Q_STEP), cls)
        assert make_filter("central", x0, P0, Q_STEP).ekf.ground_truth_jacobians
        assert not make_filter("joint", x0, P0, Q_STEP).ekf.ground_truth_jacobians
        with pytest.raises(ValueError):
            make_filter("kalman", x0, P0, Q_STEP)
