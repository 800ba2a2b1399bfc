import numpy as np
import pytest

from egolabel import (DegenerateBone, JointSet15, PoseSequence, bone_lengths,
                      default_topology, load_pose_sequence, rescale_to_skeleton,
                      save_pose_sequence)
from egolabel.skeleton import JOINT_NAMES, N_JOINTS

from conftest import random_rotation


def reference_pose(topo):
    """A pose sitting exactly at the reference bone lengths."""
    rng = np.random.default_rng(42)
    joints = np.zeros((N_JOINTS, 3))
    for k, (p, c) in enumerate(topo.walk_order()):
        direction = rng.normal(0.0, 1.0, 3)
        direction /= np.linalg.norm(direction)
        ref = dict(zip(topo.edges, topo.reference_lengths))[(p, c)]
        joints[c] = joints[p] + ref * direction
    return JointSet15(joints)


def test_joint_table():
    assert len(JOINT_NAMES) == 15
    assert JOINT_NAMES[0] == "neck"
    topo = default_topology()
    assert len(topo.edges) == 14
    assert all(length > 0 for length in topo.reference_lengths)


class TestBoneLengths:
    def test_all_zero(self, topo):
        pose = JointSet15(np.zeros((N_JOINTS, 3)))
        np.testing.assert_allclose(bone_lengths(pose, topo), np.zeros(14))

    def test_single_bone_along_x(self, topo):
        joints = np.zeros((N_JOINTS, 3))
        joints[1] = [250.0, 0.0, 0.0]  # neck -> right shoulder
        lengths = bone_lengths(JointSet15(joints), topo)
        assert lengths[0] == 250.0

    def test_matches_scalar_loop_oracle(self, topo):
        rng = np.random.default_rng(0)
        pose = JointSet15(rng.normal(0.0, 300.0, (N_JOINTS, 3)))
        got = bone_lengths(pose, topo)
        for k, (p, c) in enumerate(topo.edges):
            d = pose.joints[c] - pose.joints[p]
            expected = np.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
            assert abs(got[k] - expected) < 1e-12


class TestRescale:
    def test_fixed_point(self, topo):
        pose = reference_pose(topo)
        out = rescale_to_skeleton(pose, topo)
        np.testing.assert_allclose(out.joints, pose.joints, atol=1e-12)

    def test_uniform_scale_removed(self, topo):
        pose = reference_pose(topo)
        scaled = JointSet15(2.0 * pose.joints)
        out = rescale_to_skeleton(scaled, topo)
        # root anchored at the scaled root; shape matches the reference pose
        expected = pose.joints - pose.joints[0] + 2.0 * pose.joints[0]
        np.testing.assert_allclose(out.joints, expected, atol=1e-9)

    def test_random_pose_lengths_and_directions(self, topo):
        rng = np.random.default_rng(1)
        pose = JointSet15(rng.normal(0.0, 250.0, (N_JOINTS, 3)))
        out = rescale_to_skeleton(pose, topo)
        np.testing.assert_allclose(bone_lengths(out, topo),
                                   topo.reference_lengths, atol=1e-9)
        for p, c in topo.edges:
            u = pose.joints[c] - pose.joints[p]
            v = out.joints[c] - out.joints[p]
            cosang = u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
            assert np.arccos(np.clip(cosang, -1, 1)) < 1e-9

    def test_idempotent(self, topo):
        rng = np.random.default_rng(2)
        pose = JointSet15(rng.normal(0.0, 250.0, (N_JOINTS, 3)))
        once = rescale_to_skeleton(pose, topo)
        twice = rescale_to_skeleton(once, topo)
        np.testing.assert_allclose(twice.joints, once.joints, atol=1e-12)

    def test_commutes_with_rotation_about_root(self, topo):
        rng = np.random.default_rng(3)
        pose = JointSet15(rng.normal(0.0, 250.0, (N_JOINTS, 3)))
        r = random_rotation(rng)
        rotated = JointSet15(pose.joints @ r.T)
        left = rescale_to_skeleton(rotated, topo).joints
        right = rescale_to_skeleton(pose, topo).joints @ r.T
        np.testing.assert_allclose(left, right, atol=1e-9)

    def test_degenerate_bone_raises(self, topo):
        joints = np.zeros((N_JOINTS, 3))  # every bone has zero length
        with pytest.raises(DegenerateBone):
            rescale_to_skeleton(JointSet15(joints), topo)


class TestValidation:
    def test_wrong_joint_count(self):
        with pytest.raises(ValueError):
            JointSet15(np.zeros((14, 3)))

    def test_confidence_range(self):
        with pytest.raises(ValueError):
            JointSet15(np.zeros((N_JOINTS, 3)), np.full(N_JOINTS, 1.5))

    def test_empty_sequence(self):
        with pytest.raises(ValueError):
            PoseSequence(())


def test_pose_json_round_trip(tmp_path, topo):
    rng = np.random.default_rng(4)
    frames = [JointSet15(rng.normal(0.0, 200.0, (N_JOINTS, 3)),
                         rng.uniform(0.0, 1.0, N_JOINTS)) for _ in range(3)]
    seq = PoseSequence(tuple(frames), frame_rate=30.0)
    path = tmp_path / "pose.json"
    save_pose_sequence(path, seq, tags=["walk", "walk", "turn"])
    loaded, tags = load_pose_sequence(path)
    assert tags == ["walk", "walk", "turn"]
    assert loaded.frame_rate == 30.0
    np.testing.assert_allclose(loaded.as_array(), seq.as_array())
    np.testing.assert_allclose(loaded.conf_array(), seq.conf_array())
