import numpy as np
import pytest

from eaic import robot as rb
from eaic.lie import Transform, skew

G = 9.81


def rk4(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def random_q(rng, model):
    lo = np.maximum(model.lower_limits, -np.pi)
    hi = np.minimum(model.upper_limits, np.pi)
    return rng.uniform(lo, hi)


MODELS = [rb.planar3(), rb.panda7(), rb.pendulum(2.0, 0.7, 0.5, 0.03)]


def test_zero_configuration_is_product_of_offsets():
    m = rb.panda7()
    T = Transform.identity()
    for j in m.joints:
        T = T @ j.offset
    T = T @ m.tool
    assert np.allclose(rb.forward_kinematics(m, np.zeros(7)).matrix(), T.matrix(), atol=1e-12)


def test_planar_two_link_hand_value():
    m = rb.planar([1.0, 1.0], [1.0, 1.0])
    assert np.allclose(rb.forward_kinematics(m, [np.pi / 2, 0.0]).translation, [0, 2, 0], atol=1e-12)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_position_matches_jacobian_path_integral(model, rng):
    qa, qb = random_q(rng, model), random_q(rng, model)
    x = rb.forward_kinematics(model, qa).translation
    n = 2000
    for i in range(n):
        # midpoint rule on the straight joint path
        q = qa + (i + 0.5) / n * (qb - qa)
        x = x + rb.jacobian(model, q)[:3] @ (qb - qa) / n
    assert np.allclose(x, rb.forward_kinematics(model, qb).translation, atol=1e-6)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_jacobian_matches_finite_differences(model, rng):
    for _ in range(5):
        q = random_q(rng, model)
        J = rb.jacobian(model, q)
        T = rb.forward_kinematics(model, q)
        h = 1e-6
        for i in range(model.n):
            dq = np.zeros(model.n)
            dq[i] = h
            Tp, Tm = rb.forward_kinematics(model, q + dq), rb.forward_kinematics(model, q - dq)
            v = (Tp.translation - Tm.translation) / (2 * h)
            W = (Tp.rotation - Tm.rotation) / (2 * h) @ T.rotation.T
            w = np.array([W[2, 1], W[0, 2], W[1, 0]])
            assert np.allclose(J[:3, i], v, atol=1e-6)
            assert np.allclose(J[3:, i], w, atol=1e-6)


def test_spatial_jacobian_relation(rng):
    m = rb.panda7()
    q = random_q(rng, m)
    s = rb.Snapshot(m, q)
    p = s.ee.translation
    assert np.allclose(s.spatial_jacobian[:3], s.jacobian[:3] + skew(p) @ s.jacobian[3:], atol=1e-12)
    assert np.allclose(s.spatial_jacobian[3:], s.jacobian[3:])


def test_pendulum_jacobian_and_inertia():
    m, l, lc, I = 2.0, 0.7, 0.5, 0.03
    model = rb.pendulum(m, l, lc, I)
    for q in (0.0, 0.4, 2.0):
        J = rb.jacobian(model, [q])
        tip = rb.forward_kinematics(model, [q]).translation
        tangent = np.cross([0, 1.0, 0], tip)
        assert np.allclose(J[:3, 0], tangent, atol=1e-12)
        assert np.linalg.norm(J[:3, 0]) == pytest.approx(l)
        assert rb.mass_matrix(model, [q])[0, 0] == pytest.approx(m * lc**2 + I, rel=1e-8)
    st = rb.RobotState([0.3], [1.7])
    assert rb.kinetic_coenergy(model, st) == pytest.approx(0.5 * (m * lc**2 + I) * 1.7**2, rel=1e-8)
    assert np.allclose(rb.jacobian(model, [0.3]) @ [0.0], 0)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_mass_matrix_spd_and_matches_newton_euler(model, rng):
    q = random_q(rng, model)
    M = rb.mass_matrix(model, q)
    assert np.abs(M - M.T).max() < 1e-9
    for _ in range(100):
        x = rng.normal(size=model.n)
        assert x @ M @ x > 0
    cols = np.column_stack(
        [rb.inverse_dynamics(model, q, np.zeros(model.n), e, gravity=False) for e in np.eye(model.n)]
    )
    assert np.allclose(M, cols, atol=1e-12)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_coriolis_and_gravity_match_newton_euler(model, rng):
    q, qd = random_q(rng, model), rng.normal(size=model.n)
    C = rb.coriolis_matrix(model, rb.RobotState(q, qd))
    assert np.allclose(C @ qd, rb.inverse_dynamics(model, q, qd, np.zeros(model.n), gravity=False), atol=1e-12)
    assert np.allclose(rb.gravity_vector(model, q), rb.inverse_dynamics(model, q, np.zeros(model.n), np.zeros(model.n)), atol=1e-12)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_mdot_minus_2c_is_skew(model, rng):
    for _ in range(10):
        q, qd = random_q(rng, model), rng.normal(size=model.n)
        h = 1e-6
        Mdot = (rb.mass_matrix(model, q + h * qd) - rb.mass_matrix(model, q - h * qd)) / (2 * h)
        N = Mdot - 2 * rb.coriolis_matrix(model, rb.RobotState(q, qd))
        assert np.abs(N + N.T).max() < 1e-8
        assert abs(qd @ N @ qd) < 1e-8


def test_gravity_examples():
    assert np.allclose(rb.gravity_vector(rb.planar3(), [0.3, -1.0, 2.0]), 0, atol=1e-12)
    m, lc = 2.0, 0.5
    model = rb.pendulum(m, 0.7, lc, 0.03)
    assert rb.gravity_vector(model, [0.0])[0] == pytest.approx(0, abs=1e-12)
    assert rb.gravity_vector(model, [np.pi / 2])[0] == pytest.approx(m * G * lc, rel=1e-12)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_gravity_is_potential_gradient(model, rng):
    q = random_q(rng, model)
    h = 1e-6
    fd = [
        (rb.gravity_potential(model, q + h * e) - rb.gravity_potential(model, q - h * e)) / (2 * h)
        for e in np.eye(model.n)
    ]
    assert np.allclose(rb.gravity_vector(model, q), fd, atol=1e-6)


def test_forward_dynamics_at_rest_without_gravity():
    m = rb.panda7()
    free = rb.ChainModel(m.joints, m.tool, np.zeros(3))
    qdd = rb.forward_dynamics(free, rb.RobotState(rb.PANDA_READY, np.zeros(7)), np.zeros(7))
    assert np.allclose(qdd, 0)


def test_kinetic_energy_conserved_without_torque_or_gravity(rng):
    m = rb.panda7()
    free = rb.ChainModel(m.joints, m.tool, np.zeros(3))
    n = free.n

    def f(y):
        return np.concatenate([y[n:], rb.forward_dynamics(free, rb.RobotState(y[:n], y[n:]), np.zeros(n))])

    y = np.concatenate([rb.PANDA_READY, 0.5 * rng.normal(size=n)])
    E0 = rb.kinetic_coenergy(free, rb.RobotState(y[:n], y[n:]))
    dt = 1e-4
    for _ in range(int(0.2 / dt)):
        y = rk4(f, y, dt)
    drift = abs(rb.kinetic_coenergy(free, rb.RobotState(y[:n], y[n:])) - E0) / 0.2
    assert drift < 1e-6


def test_power_balance_with_torque_and_gravity(rng):
    model = rb.planar([0.5, 0.4], [2.0, 1.0], gravity=np.array([0.0, -9.81, 0.0]))
    tau = np.array([0.7, -0.4])

    def f(y):
        return np.concatenate([y[2:], rb.forward_dynamics(model, rb.RobotState(y[:2], y[2:]), tau)])

    def energy(y):
        return rb.kinetic_coenergy(model, rb.RobotState(y[:2], y[2:])) + rb.gravity_potential(model, y[:2])

    y = np.array([0.3, 0.5, 0.0, 0.0])
    E0, q0 = energy(y), y[:2].copy()
    dt = 1e-4
    for _ in range(5000):
        y = rk4(f, y, dt)
    # constant torque: work = tau . (q - q0)
    assert energy(y) - E0 == pytest.approx(tau @ (y[:2] - q0), abs=1e-8)


def test_jacobian_transpose_duality(rng):
    m = rb.panda7()
    J = rb.jacobian(m, random_q(rng, m))
    w, qd = rng.normal(size=6), rng.normal(size=7)
    assert abs((J.T @ w) @ qd - w @ (J @ qd)) < 1e-12


def test_chain_from_dict_matches_builder():
    desc = {
        "joints": [
            {"axis": [0, 0, 1], "offset": {"xyz": [prev, 0, 0]}, "mass": m, "com": [l / 2, 0, 0],
             "inertia": [1e-4 * m, m * l**2 / 12, m * l**2 / 12]}
            for prev, l, m in ((0.0, 0.5, 2.0), (0.5, 0.4, 1.5), (0.4, 0.3, 1.0))
        ],
        "tool": {"xyz": [0.3, 0, 0]},
    }  # fmt: skip
    built = rb.chain_from_dict(desc)
    ref = rb.planar3()
    q = [0.2, -0.4, 1.1]
    assert np.allclose(rb.forward_kinematics(built, q).matrix(), rb.forward_kinematics(ref, q).matrix())
    assert np.allclose(rb.mass_matrix(built, q), rb.mass_matrix(ref, q))


def test_model_validation():
    good = dict(axis=[0, 0, 1.0], offset=Transform.identity(), mass=1.0, com=np.zeros(3), inertia=np.ones(3))
    with pytest.raises(ValueError):
        rb.Joint(**{**good, "axis": [0, 0, 2.0]})
    with pytest.raises(ValueError):
        rb.Joint(**{**good, "mass": 0.0})
    with pytest.raises(ValueError):
        rb.Joint(**{**good, "inertia": [1.0, -1.0, 1.0]})
    with pytest.raises(ValueError):
        rb.ChainModel(())
    with pytest.raises(ValueError):
        rb.RobotState([0.0, np.nan], [0.0, 0.0])


def test_ready_pose_points_tool_down():
    T = rb.forward_kinematics(rb.panda7(), rb.PANDA_READY)
    assert T.rotation[:, 2] @ [0, 0, -1] > 0.99
