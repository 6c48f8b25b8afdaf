"""Planar similarity and gravity alignment tests."""

import math

import numpy as np
import pytest

from planealign.errors import DegenerateSample, EmptyInput, NotUnit
from planealign.geom import (
    CameraPose,
    Sim2,
    align_scene,
    camera_yaw,
    gravity_rotation,
    make_rng,
    medoid_direction,
    sim2_apply,
    sim2_compose,
    sim2_from_two_pairs,
    sim2_inverse,
    sim2_umeyama,
    wrap_angle,
    yaw_rotation,
)


def random_sim2(rng):
    return Sim2(
        s=math.exp(rng.uniform(-1.0, 1.0)),
        theta=rng.uniform(-math.pi, math.pi),
        t=tuple(rng.uniform(-50, 50, 2)),
    )


class TestMedoid:
    def test_majority_identical_votes(self):
        votes = [(0, 1, 0), (0, 1, 0), (1, 0, 0)]
        assert np.allclose(medoid_direction(votes), (0, 1, 0))

    def test_single_vote(self):
        assert np.allclose(medoid_direction([(0, 1, 0)]), (0, 1, 0))

    def test_matches_exhaustive_argmin(self):
        # independent O(n^2) oracle over explicit loops
        rng = make_rng(42)
        votes = rng.normal(size=(7, 3))
        votes /= np.linalg.norm(votes, axis=1, keepdims=True)
        best, best_sum = None, np.inf
        for i in range(7):
            total = 0.0
            for j in range(7):
                c = min(1.0, max(-1.0, float(votes[i] @ votes[j])))
                total += math.acos(c)
            if total < best_sum:
                best, best_sum = i, total
        assert np.array_equal(medoid_direction(votes), votes[best])

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            medoid_direction([])

    def test_non_unit_raises(self):
        with pytest.raises(NotUnit):
            medoid_direction([(0, 2, 0)])

    def test_output_is_input_element(self):
        rng = make_rng(3)
        for _ in range(20):
            votes = rng.normal(size=(5, 3))
            votes /= np.linalg.norm(votes, axis=1, keepdims=True)
            out = medoid_direction(votes)
            assert any(np.array_equal(out, v) for v in votes)


class TestGravityRotation:
    def test_identity_when_already_up(self):
        assert np.allclose(gravity_rotation([0, 1, 0]), np.eye(3))

    def test_antipodal(self):
        r = gravity_rotation([0, -1, 0])
        assert np.allclose(r @ [0, -1, 0], [0, 1, 0], atol=1e-9)
        assert abs(np.linalg.det(r) - 1.0) < 1e-9

    def test_x_axis_gravity(self):
        r = gravity_rotation([1, 0, 0])
        assert np.allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-9)

    def test_random_units_incl_near_antipodal(self):
        rng = make_rng(11)
        for i in range(1000):
            g = rng.normal(size=3)
            if i % 5 == 0:  # force near-antipodal cases
                g = np.array([rng.normal(0, 1e-4), -1.0, rng.normal(0, 1e-4)])
            g /= np.linalg.norm(g)
            r = gravity_rotation(g)
            assert np.allclose(r @ g, [0, 1, 0], atol=1e-9)
            assert np.abs(r.T @ r - np.eye(3)).max() < 1e-9
            assert abs(np.linalg.det(r) - 1.0) < 1e-9

    def test_non_unit_raises(self):
        with pytest.raises(NotUnit):
            gravity_rotation([0, 0.5, 0])


class TestSim2Apply:
    def test_identity(self):
        assert np.allclose(sim2_apply(Sim2.identity(), (3, 4)), (3, 4))

    def test_quarter_turn_scale(self):
        m = Sim2(2.0, math.pi / 2, (2.0, 0.0))
        assert np.allclose(sim2_apply(m, (1, 0)), (2, 2), atol=1e-12)

    def test_matches_matrix_oracle(self):
        rng = make_rng(5)
        for _ in range(50):
            m = random_sim2(rng)
            p = rng.uniform(-10, 10, 2)
            hom = m.matrix @ np.array([p[0], p[1], 1.0])
            assert np.allclose(sim2_apply(m, p), hom[:2], atol=1e-9)

    def test_composition_law(self):
        rng = make_rng(6)
        for _ in range(1000):
            m1, m2 = random_sim2(rng), random_sim2(rng)
            p = rng.uniform(-20, 20, 2)
            lhs = sim2_apply(m2, sim2_apply(m1, p))
            rhs = sim2_apply(sim2_compose(m2, m1), p)
            assert np.allclose(lhs, rhs, atol=1e-9)

    def test_inverse_round_trip(self):
        rng = make_rng(7)
        for _ in range(100):
            m = random_sim2(rng)
            p = rng.uniform(-20, 20, 2)
            assert np.allclose(sim2_apply(sim2_inverse(m), sim2_apply(m, p)), p, atol=1e-9)


class TestSim2FromTwoPairs:
    def test_hand_checked_case(self):
        m = sim2_from_two_pairs((0, 0), (1, 0), (2, 0), (2, 2))
        assert m.s == pytest.approx(2.0, abs=1e-12)
        assert m.theta == pytest.approx(math.pi / 2, abs=1e-12)
        assert np.allclose(m.t, (2, 0), atol=1e-12)

    def test_identity_pairs(self):
        m = sim2_from_two_pairs((1, 2), (3, -1), (1, 2), (3, -1))
        assert m.s == pytest.approx(1.0, abs=1e-12)
        assert abs(m.theta) < 1e-12
        assert np.allclose(m.t, (0, 0), atol=1e-12)

    def test_round_trip_random(self):
        rng = make_rng(8)
        for _ in range(100):
            m = random_sim2(rng)
            a1, a2 = rng.uniform(-10, 10, 2), rng.uniform(-10, 10, 2)
            est = sim2_from_two_pairs(a1, a2, sim2_apply(m, a1), sim2_apply(m, a2))
            assert est.s == pytest.approx(m.s, rel=1e-9)
            assert wrap_angle(est.theta - m.theta) == pytest.approx(0.0, abs=1e-9)
            assert np.allclose(est.t, m.t, atol=1e-8)

    def test_degenerate_raises(self):
        with pytest.raises(DegenerateSample):
            sim2_from_two_pairs((1, 1), (1, 1), (0, 0), (1, 0))


class TestUmeyama:
    def test_recovers_noise_free_similarity(self):
        rng = make_rng(9)
        m = random_sim2(rng)
        src = rng.uniform(-10, 10, (20, 2))
        est = sim2_umeyama(src, sim2_apply(m, src))
        resid = np.linalg.norm(sim2_apply(est, src) - sim2_apply(m, src), axis=1)
        assert resid.max() < 1e-9

    def test_identity_when_src_equals_dst(self):
        rng = make_rng(10)
        src = rng.uniform(-5, 5, (8, 2))
        est = sim2_umeyama(src, src)
        assert est.s == pytest.approx(1.0, abs=1e-12)
        assert abs(est.theta) < 1e-12
        assert np.allclose(est.t, (0, 0), atol=1e-12)

    def test_two_points_agrees_with_minimal_solver(self):
        rng = make_rng(12)
        a = rng.uniform(-5, 5, (2, 2))
        b = rng.uniform(-5, 5, (2, 2))
        full = sim2_umeyama(a, b)
        minimal = sim2_from_two_pairs(a[0], a[1], b[0], b[1])
        assert full.s == pytest.approx(minimal.s, rel=1e-9)
        assert wrap_angle(full.theta - minimal.theta) == pytest.approx(0.0, abs=1e-9)
        assert np.allclose(full.t, minimal.t, atol=1e-9)

    def test_weight_scaling_invariance(self):
        rng = make_rng(13)
        src = rng.uniform(-5, 5, (12, 2))
        dst = rng.uniform(-5, 5, (12, 2))
        w = rng.uniform(0.1, 1.0, 12)
        a = sim2_umeyama(src, dst, w)
        b = sim2_umeyama(src, dst, 37.5 * w)
        assert a.s == pytest.approx(b.s, rel=1e-9)
        assert a.theta == pytest.approx(b.theta, abs=1e-9)
        assert np.allclose(a.t, b.t, atol=1e-9)

    def test_too_few_or_degenerate(self):
        with pytest.raises(DegenerateSample):
            sim2_umeyama(np.zeros((1, 2)), np.zeros((1, 2)))
        with pytest.raises(DegenerateSample):
            sim2_umeyama(np.ones((4, 2)), np.random.rand(4, 2))


def make_pose(rng, image_id=0):
    from planealign.synth import _random_rotation

    return CameraPose(rotation=_random_rotation(rng), center=rng.uniform(-5, 5, 3), image_id=image_id)


class TestAlignScene:
    def test_identity_leaves_scene(self):
        rng = make_rng(14)
        pts = rng.uniform(-5, 5, (30, 3))
        poses = [make_pose(rng)]
        out_pts, out_poses = align_scene(pts, poses, Sim2.identity())
        assert np.allclose(out_pts, pts)
        assert np.allclose(out_poses[0].rotation, poses[0].rotation)
        assert np.allclose(out_poses[0].center, poses[0].center)

    def test_pure_scale_scales_everything(self):
        out_pts, _ = align_scene(np.array([[1.0, 3.0, 1.0]]), [], Sim2(2.0, 0.0, (0, 0)))
        assert np.allclose(out_pts, [[2.0, 6.0, 2.0]])

    def test_yaw_advances_by_theta(self):
        rng = make_rng(15)
        for _ in range(50):
            m = random_sim2(rng)
            pose = make_pose(rng)
            _, out = align_scene(np.zeros((0, 3)), [pose], m)
            dyaw = wrap_angle(camera_yaw(out[0]) - camera_yaw(pose))
            assert dyaw == pytest.approx(wrap_angle(m.theta), abs=1e-9)

    def test_yaw_rotation_matches_planar_rotation(self):
        rng = make_rng(16)
        for _ in range(20):
            theta = rng.uniform(-math.pi, math.pi)
            v = rng.uniform(-3, 3, 3)
            rotated = yaw_rotation(theta) @ v
            planar = Sim2(1.0, theta, (0, 0))
            assert np.allclose(rotated[[0, 2]], sim2_apply(planar, v[[0, 2]]), atol=1e-12)
            assert rotated[1] == pytest.approx(v[1])


class TestSim2Json:
    def test_round_trip_precision(self):
        rng = make_rng(17)
        import json

        for _ in range(50):
            m = random_sim2(rng)
            back = Sim2.from_json_dict(json.loads(json.dumps(m.to_json_dict())))
            assert back.s == m.s and back.theta == m.theta and back.t == m.t
