"""Serial-chain kinematics and rigid-body dynamics for revolute manipulators.

Each joint carries a fixed ``offset`` (parent frame to joint frame at
q = 0) followed by a rotation about ``axis``; the link rigidly attached to
that frame has mass, centre of mass and rotational inertia expressed in
the same frame.

Two dynamics routes are provided. :class:`Snapshot` evaluates the mass
matrix, the Coriolis matrix and gravity torques in closed form from link
Jacobians (vectorised, used in the simulation loop). :func:`inverse_dynamics`
is a recursive Newton-Euler pass used to cross-check it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .lie import Transform, rotation_from_axis_angle, skew

log = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray
    offset: Transform
    mass: float
    com: np.ndarray
    inertia: np.ndarray
    limits: tuple[float, float] = (-np.inf, np.inf)

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ValueError("joint axis must be a unit vector")
        inertia = np.asarray(self.inertia, dtype=float)
        if inertia.shape == (3,):
            inertia = np.diag(inertia)
        if self.mass <= 0:
            raise ValueError("link mass must be positive")
        if not np.allclose(inertia, inertia.T) or np.linalg.eigvalsh(inertia).min() <= 0:
            raise ValueError("link inertia must be symmetric positive definite")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float))
        object.__setattr__(self, "inertia", inertia)


@dataclass(frozen=True)
class ChainModel:
    joints: tuple[Joint, ...]
    tool: Transform = field(default_factory=Transform.identity)
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    name: str = "chain"

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ValueError("a chain needs at least one joint")
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float))
        # cached per-joint constants for the hot loop
        object.__setattr__(self, "_axes", np.array([j.axis for j in self.joints]))
        object.__setattr__(self, "_masses", np.array([j.mass for j in self.joints]))
        object.__setattr__(self, "_tril", np.tril(np.ones((self.n, self.n))))
        K = np.array([skew(j.axis) for j in self.joints])
        object.__setattr__(self, "_axis_hat", K)
        object.__setattr__(self, "_axis_hat2", K @ K)
        object.__setattr__(self, "_com_local", np.array([j.com for j in self.joints]))
        object.__setattr__(self, "_inertia_local", np.array([j.inertia for j in self.joints]))
        object.__setattr__(self, "_offset_R", np.array([j.offset.rotation for j in self.joints]))
        object.__setattr__(self, "_offset_p", np.array([j.offset.translation for j in self.joints]))

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])


@dataclass
class RobotState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.asarray(self.qdot, dtype=float)
        if self.q.shape != self.qdot.shape:
            raise ValueError("q and qdot must have equal length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise ValueError("robot state must be finite")


def _cross(a, b) -> np.ndarray:
    # np.cross carries heavy axis bookkeeping; this is the hot path
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def _skew_batch(w: np.ndarray) -> np.ndarray:
    W = np.zeros(w.shape[:-1] + (3, 3))
    W[..., 0, 1], W[..., 0, 2] = -w[..., 2], w[..., 1]
    W[..., 1, 0], W[..., 1, 2] = w[..., 2], -w[..., 0]
    W[..., 2, 0], W[..., 2, 1] = -w[..., 1], w[..., 0]
    return W


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


class Snapshot:
    """Kinematic and dynamic quantities of a chain at one state.

    Everything is computed lazily and cached, so the simulation loop pays
    for forward kinematics once per step.
    """

    def __init__(self, model: ChainModel, q, qdot=None):
        self.model = model
        self.q = np.asarray(q, dtype=float)
        self.qdot = np.zeros_like(self.q) if qdot is None else np.asarray(qdot, dtype=float)
        if self.q.shape != (model.n,):
            raise ValueError(f"expected {model.n} joint positions, got {self.q.shape}")

    @cached_property
    def _frames(self):
        m = self.model
        n = m.n
        s, c = np.sin(self.q), np.cos(self.q)
        local = m._offset_R @ (np.eye(3) + s[:, None, None] * m._axis_hat + (1.0 - c)[:, None, None] * m._axis_hat2)
        R = np.eye(3)
        p = np.zeros(3)
        Rs = np.empty((n, 3, 3))
        ps = np.empty((n, 3))
        for i in range(n):
            p = R @ m._offset_p[i] + p
            R = R @ local[i]
            Rs[i] = R
            ps[i] = p
        return Rs, ps

    @property
    def link_rotations(self) -> np.ndarray:
        return self._frames[0]

    @property
    def joint_origins(self) -> np.ndarray:
        return self._frames[1]

    @cached_property
    def joint_axes(self) -> np.ndarray:
        return (self.link_rotations @ self.model._axes[:, :, None])[:, :, 0]

    @cached_property
    def coms(self) -> np.ndarray:
        return self.joint_origins + (self.link_rotations @ self.model._com_local[:, :, None])[:, :, 0]

    @cached_property
    def link_inertias(self) -> np.ndarray:
        Rs = self.link_rotations
        return Rs @ self.model._inertia_local @ Rs.transpose(0, 2, 1)

    @cached_property
    def ee(self) -> Transform:
        tool = self.model.tool
        R = self.link_rotations[-1]
        return Transform(R @ tool.rotation, R @ tool.translation + self.joint_origins[-1], "0", "EE")

    @cached_property
    def jacobian(self) -> np.ndarray:
        """Geometric Jacobian: rows are EE-point velocity and angular velocity, base axes."""
        Z, P = self.joint_axes, self.joint_origins
        J = np.empty((6, self.model.n))
        J[:3] = _cross(Z, self.ee.translation - P).T
        J[3:] = Z.T
        return J

    @cached_property
    def spatial_jacobian(self) -> np.ndarray:
        """Jacobian mapping qdot to the EE twist relative to and expressed in the base frame."""
        Z, P = self.joint_axes, self.joint_origins
        J = np.empty((6, self.model.n))
        J[:3] = _cross(P, Z).T
        J[3:] = Z.T
        return J

    @cached_property
    def _link_jacobians(self):
        Z, P = self.joint_axes, self.joint_origins
        mask = self.model._tril[:, :, None]
        Jv = _cross(Z[None, :, :], self.coms[:, None, :] - P[None, :, :]) * mask
        Jw = np.broadcast_to(Z[None, :, :], Jv.shape) * mask
        return Jv, Jw

    @cached_property
    def mass_matrix(self) -> np.ndarray:
        Jv, Jw = self._link_jacobians
        n = self.model.n
        X = (Jv * np.sqrt(self.model._masses)[:, None, None]).transpose(0, 2, 1).reshape(3 * n, n)
        JwT = Jw.transpose(0, 2, 1)
        M = X.T @ X + (Jw @ (self.link_inertias @ JwT)).sum(axis=0)
        return 0.5 * (M + M.T)

    @cached_property
    def gravity_torque(self) -> np.ndarray:
        Jv, _ = self._link_jacobians
        return -self.model._masses @ (Jv @ self.model.gravity)

    @cached_property
    def _link_jacobian_rates(self):
        Z, P, C = self.joint_axes, self.joint_origins, self.coms
        Jv, Jw = self._link_jacobians
        qd = self.qdot
        mask = self.model._tril[:, :, None]
        omega = np.cumsum(Z * qd[:, None], axis=0)
        zdot = _cross(omega, Z)
        cdot = Jv.transpose(0, 2, 1) @ qd
        # joint origin j sits on link j-1: only joints k < j move it
        strict = self.model._tril - np.eye(self.model.n)
        pdot = np.einsum("jka,jk,k->ja", _cross(Z[None, :, :], P[:, None, :] - P[None, :, :]), strict, qd)
        Jv_dot = (
            _cross(zdot[None, :, :], C[:, None, :] - P[None, :, :])
            + _cross(Z[None, :, :], cdot[:, None, :] - pdot[None, :, :])
        ) * mask
        Jw_dot = np.broadcast_to(zdot[None, :, :], Jv.shape) * mask
        return Jv_dot, Jw_dot, omega

    @cached_property
    def coriolis_matrix(self) -> np.ndarray:
        """C(q, qdot) with Mdot - 2C skew-symmetric."""
        Jv, Jw = self._link_jacobians
        Jv_dot, Jw_dot, omega = self._link_jacobian_rates
        I = self.link_inertias
        W = _skew_batch(omega)
        m = self.model._masses[:, None, None]
        return ((m * Jv) @ Jv_dot.transpose(0, 2, 1)).sum(axis=0) + (
            Jw @ (I @ Jw_dot.transpose(0, 2, 1) + W @ I @ Jw.transpose(0, 2, 1))
        ).sum(axis=0)

    @cached_property
    def kinetic_coenergy(self) -> float:
        return 0.5 * float(self.qdot @ self.mass_matrix @ self.qdot)

    @cached_property
    def gravity_potential(self) -> float:
        return -float(self.model._masses @ (self.coms @ self.model.gravity))

    def forward_dynamics(self, tau) -> np.ndarray:
        rhs = np.asarray(tau, dtype=float) - self.coriolis_matrix @ self.qdot - self.gravity_torque
        return np.linalg.solve(self.mass_matrix, rhs)


def forward_kinematics(model: ChainModel, q) -> Transform:
    return Snapshot(model, q).ee


def jacobian(model: ChainModel, q) -> np.ndarray:
    return Snapshot(model, q).jacobian


def spatial_jacobian(model: ChainModel, q) -> np.ndarray:
    return Snapshot(model, q).spatial_jacobian


def mass_matrix(model: ChainModel, q) -> np.ndarray:
    return Snapshot(model, q).mass_matrix


def gravity_vector(model: ChainModel, q) -> np.ndarray:
    return Snapshot(model, q).gravity_torque


def coriolis_matrix(model: ChainModel, state: RobotState) -> np.ndarray:
    return Snapshot(model, state.q, state.qdot).coriolis_matrix


def forward_dynamics(model: ChainModel, state: RobotState, tau) -> np.ndarray:
    return Snapshot(model, state.q, state.qdot).forward_dynamics(tau)


def kinetic_coenergy(model: ChainModel, state: RobotState) -> float:
    return Snapshot(model, state.q, state.qdot).kinetic_coenergy


def gravity_potential(model: ChainModel, q) -> float:
    return Snapshot(model, q).gravity_potential


def inverse_dynamics(model: ChainModel, q, qdot, qddot, gravity=True) -> np.ndarray:
    """Recursive Newton-Euler: tau = M qddot + C qdot + g."""
    snap = Snapshot(model, q)
    Z, P, C, I = snap.joint_axes, snap.joint_origins, snap.coms, snap.link_inertias
    n = model.n
    qd = np.asarray(qdot, dtype=float)
    qdd = np.asarray(qddot, dtype=float)

    w = np.zeros(3)
    dw = np.zeros(3)
    a = -model.gravity if gravity else np.zeros(3)
    p_prev = np.zeros(3)
    F = np.empty((n, 3))
    N = np.empty((n, 3))
    for i in range(n):
        r = P[i] - p_prev
        a = a + np.cross(dw, r) + np.cross(w, np.cross(w, r))
        w_new = w + Z[i] * qd[i]
        dw = dw + Z[i] * qdd[i] + np.cross(w, Z[i] * qd[i])
        w = w_new
        rc = C[i] - P[i]
        ac = a + np.cross(dw, rc) + np.cross(w, np.cross(w, rc))
        F[i] = model.joints[i].mass * ac
        N[i] = I[i] @ dw + np.cross(w, I[i] @ w)
        p_prev = P[i]

    tau = np.empty(n)
    f = np.zeros(3)
    m = np.zeros(3)
    for i in reversed(range(n)):
        r_next = (P[i + 1] - P[i]) if i + 1 < n else np.zeros(3)
        m = N[i] + np.cross(C[i] - P[i], F[i]) + m + np.cross(r_next, f)
        f = F[i] + f
        tau[i] = Z[i] @ m
    return tau


# ---------------------------------------------------------------------------
# bundled chains


def _rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return (
        rotation_from_axis_angle([0, 0, 1], yaw)
        @ rotation_from_axis_angle([0, 1, 0], pitch)
        @ rotation_from_axis_angle([1, 0, 0], roll)
    )


def pendulum(mass=1.0, length=1.0, com_distance=None, inertia=0.0, gravity=GRAVITY) -> ChainModel:
    """Single link rotating about y, hanging along -z at q = 0.

    ``inertia`` is the link's rotational inertia about its centre of mass
    around the joint axis.
    """
    lc = length if com_distance is None else com_distance
    eps = 1e-9  # keep the inertia tensor positive definite for a point mass
    joint = Joint(
        axis=[0.0, 1.0, 0.0],
        offset=Transform.identity(),
        mass=mass,
        com=[0.0, 0.0, -lc],
        inertia=np.diag([inertia + eps, inertia + eps, eps]),
    )
    return ChainModel((joint,), Transform(np.eye(3), [0.0, 0.0, -length]), gravity, "pendulum")


def planar(lengths, masses, gravity=GRAVITY, name="planar") -> ChainModel:
    """Chain of rods in the x-y plane, all joints about base z."""
    joints = []
    prev = 0.0
    for l, m in zip(lengths, masses):
        I_zz = m * l**2 / 12.0
        joints.append(
            Joint(
                axis=[0.0, 0.0, 1.0],
                offset=Transform(np.eye(3), [prev, 0.0, 0.0]),
                mass=m,
                com=[l / 2.0, 0.0, 0.0],
                inertia=np.diag([1e-4 * m, I_zz, I_zz]),
            )
        )
        prev = l
    return ChainModel(tuple(joints), Transform(np.eye(3), [prev, 0.0, 0.0]), gravity, name)


def planar3() -> ChainModel:
    return planar([0.5, 0.4, 0.3], [2.0, 1.5, 1.0], name="planar3")


# Franka-like geometry (modified DH) with inertial parameters of the
# published order of magnitude; off-diagonal inertia terms are dropped.
_PANDA_DH = [  # a, d, alpha
    (0.0, 0.333, 0.0),
    (0.0, 0.0, -np.pi / 2),
    (0.0, 0.316, np.pi / 2),
    (0.0825, 0.0, np.pi / 2),
    (-0.0825, 0.384, -np.pi / 2),
    (0.0, 0.0, np.pi / 2),
    (0.088, 0.0, np.pi / 2),
]
_PANDA_INERTIAL = [  # mass, com, diag inertia
    (4.970684, (3.875e-3, 2.081e-3, -0.1750), (0.70337, 0.70661, 0.0091170)),
    (0.646926, (-3.141e-3, -2.872e-2, 3.495e-3), (7.9620e-3, 2.8110e-2, 2.5995e-2)),
    (3.228604, (2.7518e-2, 3.9252e-2, -6.6502e-2), (3.7242e-2, 3.6155e-2, 1.0830e-2)),
    (3.587895, (-5.317e-2, 1.04419e-1, 2.7454e-2), (2.5853e-2, 1.9552e-2, 2.8323e-2)),
    (1.225946, (-1.1953e-2, 4.1065e-2, -3.8437e-2), (3.5549e-2, 2.9474e-2, 8.627e-3)),
    (1.666555, (6.0149e-2, -1.4117e-2, -1.0517e-2), (1.964e-3, 4.354e-3, 5.433e-3)),
    (0.735522, (1.0517e-2, -4.252e-3, 6.1597e-2), (1.2516e-2, 1.0027e-2, 4.815e-3)),
]
_PANDA_LIMITS = [
    (-2.8973, 2.8973),
    (-1.7628, 1.7628),
    (-2.8973, 2.8973),
    (-3.0718, -0.0698),
    (-2.8973, 2.8973),
    (-0.0175, 3.7525),
    (-2.8973, 2.8973),
]
PANDA_READY = np.array([0.0, -0.3, 0.0, -2.2, 0.0, 1.9, np.pi / 4])


def panda7(tool_length=0.2, tool_mass=1.5) -> ChainModel:
    """7-DOF Panda-shaped arm carrying a drill lumped into the last link."""
    joints = []
    for k, ((a, d, alpha), (m, com, I)) in enumerate(zip(_PANDA_DH, _PANDA_INERTIAL)):
        offset = Transform(rotation_from_axis_angle([1, 0, 0], alpha), [a, 0.0, 0.0]) @ Transform(
            np.eye(3), [0.0, 0.0, d]
        )
        com = np.array(com)
        I = np.diag(I)
        if k == 6 and tool_mass > 0:
            # flange at z = 0.107, drill body centred halfway down the tool
            drill_com = np.array([0.0, 0.0, 0.107 + tool_length / 2.0])
            total = m + tool_mass
            new_com = (m * com + tool_mass * drill_com) / total

            def shifted(mass, c):
                d = c - new_com
                return mass * (d @ d * np.eye(3) - np.outer(d, d))

            r = 0.04  # drill treated as a solid cylinder of this radius
            I_drill = tool_mass * np.diag(
                [(3 * r**2 + tool_length**2) / 12, (3 * r**2 + tool_length**2) / 12, r**2 / 2]
            )
            I = I + shifted(m, com) + I_drill + shifted(tool_mass, drill_com)
            m, com = total, new_com
        joints.append(Joint([0.0, 0.0, 1.0], offset, m, com, I, _PANDA_LIMITS[k]))
    tool = Transform(np.eye(3), [0.0, 0.0, 0.107 + tool_length])
    return ChainModel(tuple(joints), tool, GRAVITY.copy(), "panda7")


def chain_from_dict(desc: dict) -> ChainModel:
    """Build a chain from the configuration-file schema.

    ``desc`` holds ``joints`` (each with ``axis``, ``offset`` {``xyz``,
    ``rpy``}, ``mass``, ``com``, ``inertia`` and optional ``limits``), an
    optional ``tool`` offset and optional ``gravity``.
    """

    def offset(d):
        d = d or {}
        return Transform(_rpy(*d.get("rpy", (0.0, 0.0, 0.0))), d.get("xyz", (0.0, 0.0, 0.0)))

    joints = tuple(
        Joint(
            axis=j["axis"],
            offset=offset(j.get("offset")),
            mass=float(j["mass"]),
            com=j["com"],
            inertia=j["inertia"],
            limits=tuple(j.get("limits", (-np.inf, np.inf))),
        )
        for j in desc["joints"]
    )
    return ChainModel(joints, offset(desc.get("tool")), np.asarray(desc.get("gravity", GRAVITY)), desc.get("name", "custom"))


BUILTIN_MODELS = {"panda7": panda7, "planar3": planar3, "pendulum": pendulum}
