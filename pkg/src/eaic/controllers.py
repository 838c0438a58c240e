"""Cartesian torque controllers and the energy-tank machinery.

Three controllers share the same spatial spring and joint damping:

* :class:`ImpedanceController` - fixed-gain Cartesian impedance;
* :class:`HybridController` - force loop on selected axes, impedance on the
  rest, with the whole task wrench limited by an energy tank;
* :class:`EnergyAwareController` - impedance with energy scaling of the
  spring (``lam``), damping injection (``beta``) and a power-limited tank
  (``gamma``, gates ``k``/``j``).

Gravity compensation is added by the plant simulation, not here, and is
excluded from every power and energy figure computed in this module.

The energy-aware step runs, in order: total energy with the unscaled
spring, ``lam`` update, spring rescale and wrench, task power and tank
update, motion power and ``beta``, and finally
``tau = gamma J^T w - beta B qdot``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import numpy as np

from .lie import Transform, Twist, Wrench
from .robot import Snapshot
from .spring import SpringState, StiffnessSet, apply_energy_scale, elastic_wrench, potential_energy, wrench_to_base

BETA_EPS = 1e-9


@dataclass(frozen=True)
class TankState:
    energy: float
    upper: float
    lower: float
    power_limit: float  # most negative allowed extraction rate, <= 0
    k: int = 1
    j: int = 1
    gamma: float = 1.0
    last_task_power: float = 0.0

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"tank lower bound {self.lower} exceeds upper bound {self.upper}")
        if self.power_limit > 0:
            raise ValueError("tank power limit is an extraction rate and must be <= 0")
        if not self.lower <= self.energy <= self.upper:
            raise ValueError(f"tank energy {self.energy} outside [{self.lower}, {self.upper}]")


@dataclass
class ControlOutput:
    tau: np.ndarray
    lam: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    k: int = 1
    j: int = 1
    E_total: float = 0.0
    T_total: float = 0.0
    U_total: float = 0.0
    P_task: float = 0.0
    P_motion: float = 0.0
    P_motion_damped: float = 0.0
    P_dissipation: float = 0.0
    E_tank: float = float("nan")
    flags: tuple[str, ...] = ()
    wrench: Wrench | None = None

    def diagnostics(self) -> dict:
        return {
            "lambda": self.lam,
            "beta": self.beta,
            "gamma": self.gamma,
            "k": self.k,
            "j": self.j,
            "E_total": self.E_total,
            "T_total": self.T_total,
            "U_total": self.U_total,
            "P_task": self.P_task,
            "P_motion": self.P_motion,
            "E_tank": self.E_tank,
        }


# ---------------------------------------------------------------------------
# scalar laws


def compute_lambda(E_total, T, U, E_limit, k, P_task, lam_prev) -> tuple[float, bool]:
    """Energy scale for the spring co-stiffnesses.

    ``U`` is the potential of the unscaled spring and ``E_total = T + U``.
    Returns ``(lam, degenerate)``; ``degenerate`` flags a zero potential in
    the scaling branch, where ``lam_prev`` is kept.

    With an empty tank (``k == 0`` while drawing power) the scale may not
    grow, but it can still shrink to respect ``E_limit``.
    """
    holding = k == 0 and P_task <= 0
    if E_total <= E_limit and not holding:
        return 1.0, False
    if holding and E_total <= E_limit:
        return float(lam_prev), False
    if U <= 0.0:
        return float(lam_prev), True
    lam = min(max((E_limit - T) / U, 0.0), 1.0)
    if holding:
        lam = min(lam, lam_prev)
    return float(lam), False


def compute_motion_power(J, w_base, B_init, qdot, gamma) -> float:
    w = w_base.vector() if isinstance(w_base, Wrench) else np.asarray(w_base)
    return float((gamma * (J.T @ w) - B_init @ qdot) @ qdot)


def compute_beta(P_motion, P_limit, J, w_base, B_init, qdot, gamma) -> tuple[float, bool]:
    """Damping-injection factor. Returns ``(beta, degenerate)``."""
    if P_motion <= P_limit:
        return 1.0, False
    dissipation = float(qdot @ B_init @ qdot)
    if dissipation < BETA_EPS:
        return 1.0, True
    w = w_base.vector() if isinstance(w_base, Wrench) else np.asarray(w_base)
    return float((gamma * (J.T @ w) @ qdot - P_limit) / dissipation), False


def compute_task_power(w_base: Wrench, xdot: Twist) -> float:
    """Power drawn by the task; negative while the spring drives the robot."""
    return -w_base.power(xdot)


def tank_step(tank: TankState, P_task: float, dt: float) -> tuple[TankState, int, int, float, float]:
    """Gate the task power and integrate the tank.

    Gates are evaluated from the raw power and the pre-update energy.
    Returns ``(tank, k, j, gamma, effective_power)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    E = tank.energy
    k = 0 if (P_task <= 0 and E <= tank.lower) else 1
    j = 0 if (P_task >= 0 and E >= tank.upper) else 1
    gamma = tank.power_limit / P_task if P_task < tank.power_limit <= 0 else 1.0
    effective = gamma * k * P_task if P_task <= 0 else j * P_task
    E_new = min(max(E + effective * dt, tank.lower), tank.upper)
    new = replace(tank, energy=E_new, k=k, j=j, gamma=gamma, last_task_power=P_task)
    return new, k, j, gamma, effective


# ---------------------------------------------------------------------------
# shared pieces


def _spring_base(snap: Snapshot, desired: Transform, stiffness: StiffnessSet) -> tuple[SpringState, Wrench]:
    spring = SpringState(snap.ee, desired)
    return spring, wrench_to_base(elastic_wrench(spring, stiffness), snap.ee)


def _twist(snap: Snapshot) -> Twist:
    return Twist.from_vector(snap.spatial_jacobian @ snap.qdot, "0")


def standard_impedance_torque(snap: Snapshot, desired: Transform, stiffness: StiffnessSet, B_init) -> ControlOutput:
    spring, w0 = _spring_base(snap, desired, stiffness)
    J = snap.spatial_jacobian
    qd = snap.qdot
    tau = J.T @ w0.vector() - B_init @ qd
    T = snap.kinetic_coenergy
    U = potential_energy(spring, stiffness)
    return ControlOutput(
        tau=tau,
        E_total=T + U,
        T_total=T,
        U_total=U,
        P_task=compute_task_power(w0, _twist(snap)),
        P_motion=compute_motion_power(J, w0, B_init, qd, 1.0),
        P_dissipation=float(qd @ B_init @ qd),
        wrench=w0,
    )


class ImpedanceController:
    kind = "impedance"

    def __init__(self, stiffness: StiffnessSet, B_init):
        self.stiffness = stiffness
        self.B_init = np.asarray(B_init, dtype=float)

    def step(self, snap: Snapshot, desired: Transform, f_ext=None, dt: float = 0.0) -> ControlOutput:
        out = standard_impedance_torque(snap, desired, self.stiffness, self.B_init)
        out.P_motion_damped = out.P_motion
        return out


# ---------------------------------------------------------------------------
# energy-aware impedance


@dataclass
class EnergyAwareState:
    tank: TankState
    B_init: np.ndarray
    E_limit: float
    P_limit: float
    lam: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        self.B_init = np.asarray(self.B_init, dtype=float)
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.beta < 1.0:
            raise ValueError("beta must be >= 1")
        if not np.allclose(self.B_init, self.B_init.T) or np.linalg.eigvalsh(self.B_init).min() <= 0:
            raise ValueError("B_init must be symmetric positive definite")


def energy_aware_torque(
    snap: Snapshot, desired: Transform, stiffness: StiffnessSet, ea: EnergyAwareState, dt: float
) -> tuple[ControlOutput, EnergyAwareState]:
    flags = []
    qd = snap.qdot
    spring = SpringState(snap.ee, desired)
    base = apply_energy_scale(stiffness, 1.0)

    T = snap.kinetic_coenergy
    U0 = potential_energy(spring, base)
    lam, degenerate = compute_lambda(T + U0, T, U0, ea.E_limit, ea.tank.k, ea.tank.last_task_power, ea.lam)
    if degenerate:
        flags.append("lambda_degenerate")

    scaled = apply_energy_scale(base, lam)
    w0 = wrench_to_base(elastic_wrench(spring, scaled), snap.ee)

    P_raw = compute_task_power(w0, _twist(snap))
    tank, k, j, gamma, P_eff = tank_step(ea.tank, P_raw, dt)

    J = snap.spatial_jacobian
    P_motion = compute_motion_power(J, w0, ea.B_init, qd, gamma)
    beta, degenerate = compute_beta(P_motion, ea.P_limit, J, w0, ea.B_init, qd, gamma)
    if degenerate:
        flags.append("beta_degenerate")

    damping = ea.B_init @ qd
    spring_tau = gamma * (J.T @ w0.vector())
    tau = spring_tau - beta * damping
    out = ControlOutput(
        tau=tau,
        lam=lam,
        beta=beta,
        gamma=gamma,
        k=k,
        j=j,
        E_total=T + lam * U0,
        T_total=T,
        U_total=lam * U0,
        P_task=P_eff,
        P_motion=P_motion,
        P_motion_damped=float((spring_tau - beta * damping) @ qd),
        P_dissipation=beta * float(qd @ damping),
        E_tank=tank.energy,
        flags=tuple(flags),
        wrench=w0,
    )
    new = copy.copy(ea)
    new.tank, new.lam, new.beta = tank, lam, beta
    return out, new


class EnergyAwareController:
    kind = "energy_aware"

    def __init__(self, stiffness: StiffnessSet, state: EnergyAwareState):
        self.stiffness = stiffness
        self.state = state

    def step(self, snap: Snapshot, desired: Transform, f_ext=None, dt: float = 1e-3) -> ControlOutput:
        out, self.state = energy_aware_torque(snap, desired, self.stiffness, self.state, dt)
        return out


# ---------------------------------------------------------------------------
# hybrid force-impedance baseline


@dataclass
class HybridState:
    desired_wrench: np.ndarray  # 6-vector, force the robot applies on the environment (base axes)
    selection: np.ndarray  # 6x6 diagonal 0/1, force-controlled axes
    force_gain: float
    stiffness: StiffnessSet
    B_init: np.ndarray
    tank: TankState

    def __post_init__(self):
        self.desired_wrench = np.asarray(self.desired_wrench, dtype=float)
        self.selection = np.asarray(self.selection, dtype=float)
        self.B_init = np.asarray(self.B_init, dtype=float)
        S = self.selection
        if S.shape != (6, 6) or not np.allclose(S @ S, S) or not np.allclose(S, np.diag(np.diag(S))):
            raise ValueError("selection must be a diagonal 0/1 6x6 matrix")


def _mixed(w0: Wrench, p_ee: np.ndarray) -> np.ndarray:
    """Base-axes wrench about the EE point (pairs with the geometric Jacobian)."""
    return np.concatenate([w0.force, w0.moment - np.cross(p_ee, w0.force)])


def hybrid_torque(snap: Snapshot, desired: Transform, hybrid: HybridState, f_ext, dt: float):
    """One hybrid step; ``f_ext`` is the measured external force on the EE (base axes).

    The force loop acts on the wrench the robot applies to its environment,
    ``-f_ext``. Returns ``(ControlOutput, HybridState)``.
    """
    S = hybrid.selection
    I = np.eye(6)
    qd = snap.qdot
    spring, w0 = _spring_base(snap, desired, hybrid.stiffness)
    w_imp = (I - S) @ _mixed(w0, snap.ee.translation)

    measured = np.zeros(6)
    measured[:3] = -np.asarray(f_ext, dtype=float)
    w_force = S @ (hybrid.desired_wrench + hybrid.force_gain * (hybrid.desired_wrench - measured))
    w_cmd = w_imp + w_force

    J = snap.jacobian
    xdot = J @ qd
    P_raw = -float(w_cmd @ xdot)
    tank, k, j, gamma, P_eff = tank_step(hybrid.tank, P_raw, dt)
    scale = gamma * k if P_raw <= 0 else 1.0
    w_eff = scale * w_cmd
    damping = hybrid.B_init @ qd
    tau = J.T @ w_eff - damping

    T = snap.kinetic_coenergy
    U = potential_energy(spring, hybrid.stiffness)
    out = ControlOutput(
        tau=tau,
        gamma=gamma,
        k=k,
        j=j,
        E_total=T + U,
        T_total=T,
        U_total=U,
        P_task=P_eff,
        P_motion=float((J.T @ w_eff - damping) @ qd),
        P_dissipation=float(qd @ damping),
        E_tank=tank.energy,
        wrench=Wrench(w_eff[:3], w_eff[3:], "0@EE"),
    )
    out.P_motion_damped = out.P_motion
    new = copy.copy(hybrid)
    new.tank = tank
    return out, new


class HybridController:
    kind = "hybrid"

    def __init__(self, state: HybridState):
        self.state = state

    @property
    def stiffness(self) -> StiffnessSet:
        return self.state.stiffness

    def step(self, snap: Snapshot, desired: Transform, f_ext=None, dt: float = 1e-3) -> ControlOutput:
        f = np.zeros(3) if f_ext is None else f_ext
        out, self.state = hybrid_torque(snap, desired, self.state, f, dt)
        return out
