import json

import numpy as np
import pytest

from neuralcloth import synthetic
from neuralcloth.body import (
    BodyModel,
    BodySurface,
    Pose,
    PoseSequence,
    Skeleton,
    forward_kinematics,
    resample_slerp,
    signed_distance,
    skin_lbs,
    transfer_weights,
)
from neuralcloth.errors import ConfigError
from neuralcloth.rotations import quat_angle_between, quat_from_axis_angle, quat_normalize, quat_to_matrix


def chain(k=3, seed=0):
    rng = np.random.default_rng(seed)
    offsets = rng.normal(size=(k, 3))
    rest = quat_normalize(rng.normal(size=(k, 4)))
    return Skeleton(tuple(f"j{i}" for i in range(k)), [-1] + list(range(k - 1)), offsets, rest, np.arange(k))


def symmetric_skeleton():
    names = ("root", "left", "right", "left_tip", "right_tip")
    offsets = [[0, 1, 0], [0.2, 0, 0], [-0.2, 0, 0], [0.1, -0.3, 0.05], [-0.1, -0.3, 0.05]]
    return Skeleton(names, [-1, 0, 0, 1, 2], offsets, np.tile([1.0, 0, 0, 0], (5, 1)), [0, 2, 1, 4, 3], "x")


def random_pose(rng, k):
    return Pose(quat_normalize(rng.normal(size=(k, 4))), rng.normal(size=3))


def test_identity_pose_gives_rest_transforms():
    s = chain()
    g = forward_kinematics(s, Pose.identity(3))
    assert np.allclose(g, s.rest_globals, atol=1e-14)


def test_root_yaw_rotates_every_joint():
    s = synthetic.pendulum_skeleton()
    q = np.tile([1.0, 0, 0, 0], (4, 1))
    q[0] = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), np.pi / 2)
    # tilt a child so the chain is not vertical
    q[2] = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), 0.4)
    base = forward_kinematics(s, Pose(np.where(np.arange(4)[:, None] == 0, [1.0, 0, 0, 0], q), np.zeros(3)))
    rot = forward_kinematics(s, Pose(q, np.zeros(3)))
    r = quat_to_matrix(q[0])
    pivot = base[0, :3, 3]
    assert np.allclose(rot[:, :3, 3] - pivot, (base[:, :3, 3] - pivot) @ r.T, atol=1e-12)


def test_fk_matches_matrix_chain(rng):
    s = chain(3, 1)
    pose = random_pose(rng, 3)
    g = forward_kinematics(s, pose)
    m = np.eye(4)
    for j in range(3):
        local = np.eye(4)
        local[:3, :3] = quat_to_matrix(s.rest_rotations[j]) @ quat_to_matrix(pose.rotations[j])
        local[:3, 3] = s.offsets[j] + (pose.root_translation if j == 0 else 0.0)
        m = m @ local
        assert np.max(np.abs(g[j] - m)) < 1e-10
    r = g[:, :3, :3]
    assert np.max(np.abs(np.einsum("kji,kjl->kil", r, r) - np.eye(3))) < 1e-9


def test_lbs_identity_and_rigid(rng):
    s = chain(3, 2)
    v = rng.normal(size=(20, 3))
    w = rng.dirichlet(np.ones(3), size=20)
    assert np.max(np.abs(skin_lbs(v, w, s.rest_globals, s) - v)) < 1e-9
    pose = random_pose(rng, 3)
    g = forward_kinematics(s, pose)
    one = np.zeros((20, 3))
    one[:, 1] = 1.0
    m = g[1] @ np.linalg.inv(s.rest_globals[1])
    assert np.allclose(skin_lbs(v, one, g, s), v @ m[:3, :3].T + m[:3, 3])


def test_lbs_blend_of_two_joints():
    s = Skeleton(("a", "b"), [-1, 0], [[0, 0, 0], [1, 0, 0]], np.tile([1.0, 0, 0, 0], (2, 1)), [0, 1])
    q = np.tile([1.0, 0, 0, 0], (2, 1))
    q[1] = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), np.pi / 2)
    g = forward_kinematics(s, Pose(q, np.zeros(3)))
    v = np.array([[2.0, 0.0, 0.0]])
    out = skin_lbs(v, np.array([[0.5, 0.5]]), g, s)
    # joint a keeps (2,0,0); joint b maps it to (1,1,0)
    assert np.allclose(out, [[1.5, 0.5, 0.0]], atol=1e-12)


def test_skeleton_validation():
    with pytest.raises(ConfigError):
        Skeleton(("a", "b"), [-1, 1], np.zeros((2, 3)), np.tile([1.0, 0, 0, 0], (2, 1)), [0, 1])
    with pytest.raises(ConfigError):
        Skeleton(("a", "b", "c"), [-1, 0, 0], np.zeros((3, 3)), np.tile([1.0, 0, 0, 0], (3, 1)), [1, 2, 0])


def test_pose_validation():
    with pytest.raises(ConfigError):
        Pose(np.array([[2.0, 0, 0, 0]]), np.zeros(3))
    p = Pose(np.array([[-1.0, 0, 0, 0]]), np.zeros(3))
    assert p.rotations[0, 0] == 1.0


def test_skeleton_and_sequence_json(tmp_path, rng):
    s = symmetric_skeleton()
    s.to_json(tmp_path / "s.json")
    s2 = Skeleton.from_json(tmp_path / "s.json")
    assert s2.names == s.names and np.array_equal(s2.mirror_map, s.mirror_map)
    assert np.allclose(s2.offsets, s.offsets)
    seq = PoseSequence(quat_normalize(rng.normal(size=(4, 5, 4))), rng.normal(size=(4, 3)), 30.0)
    seq.to_json(tmp_path / "q.json", s)
    seq2 = PoseSequence.from_json(tmp_path / "q.json", s)
    assert np.allclose(seq2.rotations, seq.rotations) and np.allclose(seq2.root_translations, seq.root_translations)
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["mirror_pairs"] == [["left", "right"], ["left_tip", "right_tip"]]


# -- signed distance ----------------------------------------------------------


def test_signed_distance_along_vertex_normal(sphere_surface):
    s = sphere_surface
    i = 17
    p = s.vertices[i] + 0.05 * s.vertex_normals[i]
    assert signed_distance(p, s) == pytest.approx(0.05, abs=1e-3)
    assert signed_distance(s.vertices[i], s) == pytest.approx(0.0, abs=1e-15)
    assert signed_distance(np.zeros(3), s) < 0


def test_bvh_matches_brute_force(sphere_surface, rng):
    pts = rng.normal(size=(1000, 3)) * 0.5
    d_bvh, _, _ = sphere_surface.signed_distance(pts, "bvh")
    d_brute, _, _ = sphere_surface.signed_distance(pts, "brute")
    d_kd, _, _ = sphere_surface.signed_distance(pts, "kdtree")
    assert np.array_equal(np.sign(d_bvh), np.sign(d_brute))
    assert np.max(np.abs(d_bvh - d_brute)) < 1e-9
    assert np.max(np.abs(d_kd - d_brute)) < 1e-9


def test_signed_distance_continuous_outside(sphere_surface):
    t = np.linspace(0, 1, 400)
    seg = np.stack([0.55 * np.cos(t), 0.1 + 0.0 * t, 0.55 * np.sin(t)], axis=1)
    d, _, _ = sphere_surface.signed_distance(seg)
    assert np.all(d > 0) and np.max(np.abs(np.diff(d))) < 1e-2


def test_signed_distance_on_concave_body(pendulum, rng):
    # points just outside the lathe surface along its normals stay positive
    surf = pendulum.pose(Pose.identity(4)).surface
    idx = rng.choice(len(surf.vertices), 100, replace=False)
    d, _, _ = surf.signed_distance(surf.vertices[idx] + 2e-3 * surf.vertex_normals[idx])
    assert np.all(d > 0)
    d, _, _ = surf.signed_distance(surf.vertices[idx] - 2e-3 * surf.vertex_normals[idx])
    assert np.all(d < 0)


def test_empty_body_rejected():
    with pytest.raises(ConfigError):
        BodySurface(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


# -- sequences -----------------------------------------------------------------


def test_resample_slerp_round_trip():
    seq = synthetic.motion("swing", 31, 30.0, seed=2)
    up = resample_slerp(seq, 60.0)
    assert len(up) == 61
    assert np.array_equal(up.rotations[0], seq.rotations[0])
    down = resample_slerp(up, 30.0)
    assert len(down) == len(seq)
    assert np.max(quat_angle_between(down.rotations, seq.rotations)) < 1e-6
    assert np.allclose(np.linalg.norm(up.rotations, axis=-1), 1.0)


def test_resample_midpoint():
    q0 = np.array([[1.0, 0, 0, 0]])
    q1 = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), np.pi / 2)[None]
    seq = PoseSequence(np.stack([q0, q1]), np.zeros((2, 3)), 1.0)
    mid = resample_slerp(seq, 2.0)
    assert quat_angle_between(mid.rotations[1, 0], quat_from_axis_angle(np.array([0.0, 0, 1]), np.pi / 4)) < 1e-9


def test_transfer_weights(rng):
    body_v = rng.normal(size=(50, 3))
    body_w = rng.dirichlet(np.ones(4), size=50)
    garment_v = body_v[[3, 7, 11]] + 1e-9
    assert np.allclose(transfer_weights(garment_v, body_v, body_w), body_w[[3, 7, 11]])
    g = rng.normal(size=(30, 3))
    brute = np.argmin(np.linalg.norm(g[:, None] - body_v[None], axis=-1), axis=1)
    assert np.array_equal(transfer_weights(g, body_v, body_w), body_w[brute])


def test_body_model_shapes(pendulum):
    posed = pendulum.pose(Pose.identity(4))
    assert posed.skin_vertices.shape == pendulum.vertices.shape
    assert np.allclose(np.linalg.norm(posed.skin_normals, axis=1), 1.0)
    with pytest.raises(ConfigError):
        BodyModel(pendulum.skeleton, pendulum.vertices, pendulum.faces, pendulum.weights[:, :2])
