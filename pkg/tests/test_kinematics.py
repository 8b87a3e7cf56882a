import json

import numpy as np
import pytest

from selfcal.errors import ConfigError
from selfcal.kinematics import (DHLink, KinematicChain, angle_diff, dh_transform,
                                forward_kinematics, icosahedron_layout, is_rigid, link_frames,
                                marker_world_pose, model_from_dict, model_to_dict, save_model,
                                load_model, wrap_angle, N_JOINTS)


def dh_oracle(a, d, alpha, theta):
    # written out as Rz(theta) Tz(d) Tx(a) Rx(alpha), multiplied explicitly
    Rz = np.array([[np.cos(theta), -np.sin(theta), 0, 0], [np.sin(theta), np.cos(theta), 0, 0],
                   [0, 0, 1, 0], [0, 0, 0, 1]])
    Tz = np.eye(4); Tz[2, 3] = d
    Tx = np.eye(4); Tx[0, 3] = a
    Rx = np.array([[1, 0, 0, 0], [0, np.cos(alpha), -np.sin(alpha), 0],
                   [0, np.sin(alpha), np.cos(alpha), 0], [0, 0, 0, 1]])
    return Rz @ Tz @ Tx @ Rx


def test_l1_link_matches_matrix_oracle(model):
    L1 = model.links["L1"]
    for enc in (0.0, 0.3, -1.2):
        T = dh_transform(L1, enc)
        np.testing.assert_allclose(T, dh_oracle(0.614, 0.0, 3.142, enc - 1.571), atol=1e-15)


def test_non_actuated_link_ignores_angle(model):
    ee = model.links["EE1"]
    np.testing.assert_array_equal(dh_transform(ee, 1.0), dh_transform(ee, 0.0))


def test_zero_link_is_identity():
    link = DHLink("X", 0.0, 0.0, 0.0, 0.0, True, 1)
    np.testing.assert_allclose(dh_transform(link, 0.0), np.eye(4))


def test_forward_kinematics_matches_product(model, rng):
    chain = model.arm(1)
    q = rng.uniform(-1, 1, N_JOINTS)
    T = np.eye(4)
    for link in chain.links:
        theta = (q[link.joint] if link.actuated else 0.0) + link.offset
        T = T @ dh_oracle(link.a, link.d, link.alpha, theta)
    np.testing.assert_allclose(forward_kinematics(chain, q), T, atol=1e-13)
    assert is_rigid(T)


def test_batched_equals_single(model, rng):
    q = rng.uniform(-1, 1, (5, N_JOINTS))
    chain = model.arm(2)
    batch = forward_kinematics(chain, q)
    for i in range(5):
        np.testing.assert_allclose(batch[i], forward_kinematics(chain, q[i]), atol=1e-14)
    frames = link_frames(chain, q)
    assert frames.shape == (len(chain.links) + 1, 5, 4, 4)
    np.testing.assert_allclose(frames[-1], batch, atol=1e-14)


def test_wrong_joint_count_is_config_error(model):
    with pytest.raises(ConfigError):
        forward_kinematics(model.arm(1), np.zeros(7))


def test_empty_chain_is_identity():
    np.testing.assert_array_equal(forward_kinematics(KinematicChain("e", ()), np.zeros(N_JOINTS)),
                                  np.eye(4))


def test_turntable_rotates_everything(model):
    q = np.zeros(N_JOINTS)
    q2 = q.copy(); q2[0] = 0.4
    for name in ("right_arm", "left_arm", "right_camera"):
        p0 = forward_kinematics(model.chain(name), q)[:3, 3]
        p1 = forward_kinematics(model.chain(name), q2)[:3, 3]
        # rotation about the base z axis preserves the height and the radius
        assert p1[2] == pytest.approx(p0[2], abs=1e-12)
        assert np.hypot(*p1[:2]) == pytest.approx(np.hypot(*p0[:2]), abs=1e-12)


def test_with_values_and_get(model):
    m2 = model.with_values({("EE1", "d"): 0.4, ("L1", "offset"): 0.1})
    assert m2.get("EE1", "d") == 0.4 and m2.get("L1", "offset") == 0.1
    assert model.get("EE1", "d") == 0.35
    # shared link: the tracker chain sees the same L1
    assert m2.chain("right_tracker").links[2].offset == 0.1
    with pytest.raises(ConfigError):
        model.with_values({("nope", "d"): 1.0})


def test_wrap_and_angle_diff():
    assert wrap_angle(3 * np.pi) == pytest.approx(np.pi)
    assert angle_diff(np.pi - 0.01, -np.pi + 0.01) == pytest.approx(-0.02)


def test_marker_layout_is_rigid_and_on_sphere():
    layout = icosahedron_layout(0.05)
    assert layout.faces == list(range(20))
    for f in layout.faces:
        T = layout[f]
        assert is_rigid(T)
        assert np.linalg.norm(T[:3, 3]) == pytest.approx(0.05)
        # marker z axis points outwards
        assert T[:3, 2] @ T[:3, 3] == pytest.approx(0.05)


def test_marker_world_pose(model):
    q = np.zeros(N_JOINTS)
    M = marker_world_pose(model, 1, 3, q)
    E = forward_kinematics(model.arm(1), q)
    assert np.linalg.norm(M[:3, 3] - E[:3, 3]) == pytest.approx(0.05)


def test_model_round_trip(model, tmp_path):
    path = tmp_path / "m.json"
    save_model(model, path)
    m2 = load_model(path)
    assert model_to_dict(m2) == model_to_dict(model)
    json.loads(path.read_text())


def test_malformed_model_is_config_error(model):
    d = model_to_dict(model)
    del d["links"]["L1"]
    with pytest.raises(ConfigError):
        model_from_dict(d)
