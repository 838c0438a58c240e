import numpy as np
import pytest

from eaic.lie import Transform, Twist, exp_se3, transform_wrench
from eaic.spring import (
    SpringState,
    StiffnessSet,
    apply_energy_scale,
    co_stiffness,
    elastic_wrench,
    potential_energy,
    wrench_to_base,
)

from conftest import random_rotation, random_transform

TABLE1 = StiffnessSet.diagonal(900.0, 40.0)


def perturbed(state, xi):
    """State with the end-effector moved by body twist coordinates ``xi``."""
    step = exp_se3(xi)
    cur = state.current @ Transform(step.rotation, step.translation, "EE", "EE")
    return SpringState(cur, state.desired)


def fd_gradient(state, stiffness, h=1e-6):
    g = np.empty(6)
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        g[i] = (potential_energy(perturbed(state, e), stiffness) - potential_energy(perturbed(state, -e), stiffness)) / (2 * h)
    return g


def random_state(rng, max_p=0.2, max_angle=0.5):
    desired = random_transform(rng, base="0", target="d")
    p = rng.normal(size=3)
    p *= rng.uniform(0, max_p) / np.linalg.norm(p)
    rel = Transform(random_rotation(rng, max_angle), p, "d", "EE")
    return SpringState(desired @ rel, desired)


def test_co_stiffness_examples():
    assert np.array_equal(co_stiffness(np.zeros((3, 3))), np.zeros((3, 3)))
    assert np.allclose(co_stiffness(900 * np.eye(3)), 450 * np.eye(3))
    assert np.allclose(co_stiffness(np.diag([2.0, 4.0, 6.0])), np.diag([4.0, 2.0, 0.0]))


def test_stiffness_validation():
    with pytest.raises(ValueError):
        StiffnessSet(np.array([[1.0, 2.0, 0], [0, 1, 0], [0, 0, 1]]), np.eye(3))
    with pytest.raises(ValueError):
        StiffnessSet(np.eye(3), np.eye(2))
    with pytest.raises(ValueError):
        StiffnessSet(np.eye(3), np.eye(3), scale=1.5)


def test_equilibrium_has_zero_wrench_and_energy(rng):
    T = random_transform(rng, base="0", target="EE")
    s = SpringState(T, Transform(T.rotation, T.translation, "0", "d"))
    assert np.allclose(elastic_wrench(s, TABLE1).vector(), 0, atol=1e-12)
    assert abs(potential_energy(s, TABLE1)) < 1e-12


def test_small_translation_restores_with_Kt():
    d = Transform.identity("0", "d")
    s = SpringState(Transform(np.eye(3), [0, 0, 0.001], "0", "EE"), d)
    w = elastic_wrench(s, TABLE1)
    assert np.allclose(w.force, [0, 0, -0.9], rtol=1e-6)
    assert np.allclose(w.moment, 0, atol=1e-9)


def test_translation_energy_hand_value():
    d = Transform.identity("0", "d")
    s = SpringState(Transform(np.eye(3), [0, 0, 0.1], "0", "EE"), d)
    assert potential_energy(s, TABLE1) == pytest.approx(4.5, rel=1e-12)


def test_small_rotation_restores_with_Kr():
    d = Transform.identity("0", "d")
    R = exp_se3([0, 0, 0, 0, 0, 1e-4])
    s = SpringState(Transform(R.rotation, np.zeros(3), "0", "EE"), d)
    assert np.allclose(elastic_wrench(s, TABLE1).moment, [0, 0, -40e-4], rtol=1e-6)


def test_lambda_zero_gives_zero_spring(rng):
    s = random_state(rng)
    zero = apply_energy_scale(TABLE1, 0.0)
    assert np.array_equal(elastic_wrench(s, zero).vector(), np.zeros(6))
    assert potential_energy(s, zero) == 0.0


def test_wrench_matches_negative_energy_gradient(rng):
    for _ in range(200):
        s = random_state(rng)
        w = elastic_wrench(s, TABLE1).vector()
        g = fd_gradient(s, TABLE1)
        assert np.linalg.norm(w + g) <= 1e-4 * max(np.linalg.norm(w), 1e-3)


def test_gradient_with_coupling_and_full_matrices(rng):
    for _ in range(100):
        A, B, C = (rng.normal(size=(3, 3)) for _ in range(3))
        K = StiffnessSet(A @ A.T * 100, B @ B.T * 10, (C + C.T) * 5)
        s = random_state(rng)
        w = elastic_wrench(s, K).vector()
        assert np.linalg.norm(w + fd_gradient(s, K)) <= 1e-4 * max(np.linalg.norm(w), 1e-3)


def test_energy_nonnegative_and_restoring(rng):
    for _ in range(200):
        s = random_state(rng, 0.05, 0.3)
        assert potential_energy(s, TABLE1) >= 0
        # body twist pointing back to the desired frame
        w = elastic_wrench(s, TABLE1)
        R, p = s.relative()
        back = Twist(-_log_rot(R), -R.T @ p, "EE")
        assert w.power(back) > 0


def _log_rot(R):
    angle = np.arccos(np.clip((np.trace(R) - 1) / 2, -1, 1))
    if angle < 1e-12:
        return np.zeros(3)
    return angle / (2 * np.sin(angle)) * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])


def test_energy_scale_is_linear_and_not_compounded(rng):
    s = random_state(rng)
    half = apply_energy_scale(TABLE1, 0.5)
    again = apply_energy_scale(half, 0.5)
    assert np.allclose(again.G_t, 0.5 * co_stiffness(TABLE1.K_t))
    assert potential_energy(s, half) == pytest.approx(0.5 * potential_energy(s, TABLE1), rel=1e-10)
    assert np.allclose(elastic_wrench(s, half).vector(), 0.5 * elastic_wrench(s, TABLE1).vector(), rtol=1e-12)
    assert apply_energy_scale(TABLE1, 1.0).scale == 1.0
    for bad in (-0.1, 1.1):
        with pytest.raises(ValueError):
            apply_energy_scale(TABLE1, bad)


def test_wrench_to_base(rng):
    w = elastic_wrench(random_state(rng), TABLE1)
    same = wrench_to_base(w, Transform.identity("0", "EE"))
    assert np.allclose(same.vector(), w.vector())
    rot = Transform(random_rotation(rng), np.zeros(3), "0", "EE")
    b = wrench_to_base(w, rot)
    assert np.linalg.norm(b.force) == pytest.approx(np.linalg.norm(w.force), abs=1e-10)
    T = random_transform(rng, base="0", target="EE")
    back = transform_wrench(wrench_to_base(w, T), T.inverse())
    assert np.allclose(back.vector(), w.vector(), atol=1e-10)
