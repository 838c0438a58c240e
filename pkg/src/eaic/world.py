"""Deterministic closed-loop world for the unscrewing task.

The plant is integrated with semi-implicit Euler. Contacts are penalty
springs acting along base z on the tool tip: the screw head (until the
screw breaks away) and the workbench. A human disturbance is a spring
pulling the tool toward a moving grab point, released instantly.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .robot import ChainModel, RobotState, Snapshot

log = logging.getLogger(__name__)

SCREW_STATES = ("idle", "engaged", "unscrewing", "contact_lost", "done")


class DivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# screw


@dataclass(frozen=True)
class ScrewProcess:
    head_z: float
    pitch: float = 0.0008  # m/rev
    speed: float = 5.0  # rev/s
    f_engage: float = 15.0
    engage_tolerance: float = 0.25
    nominal_length: float = 0.025
    actual_length: float = 0.015
    state: str = "engaged"
    travel: float = 0.0
    stiffness: float = 1e5
    damping: float = 300.0

    def __post_init__(self):
        if self.state not in SCREW_STATES:
            raise ValueError(f"unknown screw state {self.state!r}")
        if self.actual_length > self.nominal_length:
            raise ValueError("actual screw length cannot exceed the nominal length")

    @property
    def in_contact(self) -> bool:
        return self.state != "contact_lost"


def screw_step(screw: ScrewProcess, axial_force: float, drill_on: bool, dt: float) -> ScrewProcess:
    """Advance the screw state machine.

    ``axial_force`` is the force the tool applies on the screw along base z
    (negative = pressing down).

    Edges: idle -> engaged (tool presses), engaged -> unscrewing (drill on
    and pressing with the engagement force), unscrewing -> contact_lost
    (the short shaft is out) or done (nominal length reached).
    """
    state = screw.state
    if state == "idle" and axial_force < 0.0:
        state = "engaged"
    if state == "engaged" and drill_on and axial_force <= -(screw.f_engage - screw.engage_tolerance):
        state = "unscrewing"
    if state != "unscrewing" or not drill_on:
        return replace(screw, state=state)

    rise = screw.pitch * screw.speed * dt
    travel = screw.travel + rise
    head_z = screw.head_z + rise
    if travel >= screw.actual_length:
        state = "contact_lost" if screw.actual_length < screw.nominal_length else "done"
    return replace(screw, state=state, travel=travel, head_z=head_z)


# ---------------------------------------------------------------------------
# contacts and disturbances


def penalty_force(penetration: float, velocity: float, stiffness: float, damping: float) -> float:
    """Unilateral spring-damper; ``velocity`` is the penetration rate sign-flipped (z-dot)."""
    if penetration <= 0.0:
        return 0.0
    return max(stiffness * penetration - damping * velocity, 0.0)


@dataclass(frozen=True)
class ContactState:
    z_workbench: float
    stiffness: float = 1e5
    damping: float = 300.0
    penetration: float = 0.0
    force: float = 0.0


@dataclass(frozen=True)
class GrabPull:
    """Human grabbing the tool and dragging it by ``offset`` through a stiff hand."""

    offset: np.ndarray
    stiffness: float = 1000.0
    damping: float = 40.0
    ramp: float = 1.5
    hold: float = 0.5
    anchor: np.ndarray | None = None

    @property
    def duration(self) -> float:
        return self.ramp + self.hold

    def force(self, t_local: float, x: np.ndarray, xdot: np.ndarray) -> np.ndarray:
        u = min(max(t_local / self.ramp, 0.0), 1.0) if self.ramp > 0 else 1.0
        s = u * u * (3.0 - 2.0 * u)
        ds = 6.0 * u * (1.0 - u) / self.ramp if (self.ramp > 0 and u < 1.0) else 0.0
        offset = np.asarray(self.offset, dtype=float)
        goal = self.anchor + s * offset
        return self.stiffness * (goal - x) + self.damping * (ds * offset - xdot)


@dataclass(frozen=True)
class ForceTrace:
    """Recorded force profile, linearly interpolated, relative to the entry start."""

    times: np.ndarray
    forces: np.ndarray  # (len(times), 3)

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def force(self, t_local: float, x=None, xdot=None) -> np.ndarray:
        return np.array([np.interp(t_local, self.times, self.forces[:, i]) for i in range(3)])


@dataclass(frozen=True)
class DisturbanceEntry:
    start: float
    profile: GrabPull | ForceTrace

    @property
    def end(self) -> float:
        return self.start + self.profile.duration


@dataclass
class DisturbanceSchedule:
    entries: list[DisturbanceEntry] = field(default_factory=list)

    def add(self, entry: DisturbanceEntry) -> None:
        for other in self.entries:
            if entry.start < other.end and other.start < entry.end:
                raise ValueError("disturbance windows must not overlap")
        self.entries.append(entry)
        self.entries.sort(key=lambda e: e.start)

    def active(self, t: float) -> DisturbanceEntry | None:
        for e in self.entries:
            if e.start <= t < e.end:
                return e
        return None

    def force(self, t: float, x, xdot) -> np.ndarray:
        e = self.active(t)
        if e is None:
            return np.zeros(3)
        return e.profile.force(t - e.start, x, xdot)


# ---------------------------------------------------------------------------
# world


@dataclass(frozen=True)
class ExternalForces:
    screw: float
    contact: float
    disturbance: np.ndarray

    @property
    def total(self) -> np.ndarray:
        f = self.disturbance.copy()
        f[2] += self.screw + self.contact
        return f


LOG_TAIL = (
    "ee_x", "ee_y", "ee_z", "ee_zd", "f_ext_z", "f_contact_z",
    "lambda", "beta", "gamma", "k", "j", "E_tank", "P_task",
    "E_total", "T_total", "U_total", "screw_state",
)  # fmt: skip


def log_columns(n: int) -> list[str]:
    return ["t"] + [f"q{i}" for i in range(n)] + [f"qdot{i}" for i in range(n)] + list(LOG_TAIL)


@dataclass(frozen=True)
class LogRecord:
    t: float
    q: np.ndarray
    qdot: np.ndarray
    ee: np.ndarray
    ee_zd: float
    f_ext_z: float
    f_contact_z: float
    lam: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    k: int = 1
    j: int = 1
    E_tank: float = float("nan")
    P_task: float = 0.0
    E_total: float = 0.0
    T_total: float = 0.0
    U_total: float = 0.0
    screw_state: str = "engaged"

    def row(self) -> list[str]:
        g = "{:.9g}".format
        nums = [self.t, *self.q, *self.qdot, *self.ee, self.ee_zd, self.f_ext_z, self.f_contact_z,
                self.lam, self.beta, self.gamma]  # fmt: skip
        tail = [self.E_tank, self.P_task, self.E_total, self.T_total, self.U_total]
        return [g(x) for x in nums] + [str(int(self.k)), str(int(self.j))] + [g(x) for x in tail] + [self.screw_state]


class SimWorld:
    def __init__(
        self,
        model: ChainModel,
        robot: RobotState,
        screw: ScrewProcess,
        contact: ContactState,
        disturbances: DisturbanceSchedule | None = None,
        dt: float = 1e-3,
        max_joint_speed: float = 20.0,
        compensate_gravity: bool = True,
    ):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.model = model
        self.robot = robot
        self.screw = screw
        self.contact = contact
        self.disturbances = disturbances or DisturbanceSchedule()
        self.dt = dt
        self.max_joint_speed = max_joint_speed
        self.compensate_gravity = compensate_gravity
        self.drill_on = False
        self.steps = 0
        self._snap: Snapshot | None = None
        self._warned_limits: set[int] = set()

    @property
    def clock(self) -> float:
        return self.steps * self.dt

    def snapshot(self) -> Snapshot:
        if self._snap is None:
            self._snap = Snapshot(self.model, self.robot.q, self.robot.qdot)
        return self._snap

    def ee_velocity(self) -> np.ndarray:
        snap = self.snapshot()
        return snap.jacobian[:3] @ snap.qdot

    def external_forces(self) -> ExternalForces:
        snap = self.snapshot()
        x = snap.ee.translation
        v = self.ee_velocity()
        screw = 0.0
        if self.screw.in_contact:
            screw = penalty_force(self.screw.head_z - x[2], v[2], self.screw.stiffness, self.screw.damping)
        c = self.contact
        contact = penalty_force(c.z_workbench - x[2], v[2], c.stiffness, c.damping)
        return ExternalForces(screw, contact, self.disturbances.force(self.clock, x, v))

    def step(self, tau_control, diagnostics=None, desired_z: float = math.nan) -> LogRecord:
        snap = self.snapshot()
        ext = self.external_forces()
        f_ext = ext.total
        x = snap.ee.translation

        d = diagnostics
        record = LogRecord(
            t=self.clock,
            q=self.robot.q.copy(),
            qdot=self.robot.qdot.copy(),
            ee=x.copy(),
            ee_zd=desired_z,
            f_ext_z=float(f_ext[2]),
            f_contact_z=ext.contact,
            screw_state=self.screw.state,
            **({} if d is None else dict(
                lam=d.lam, beta=d.beta, gamma=d.gamma, k=d.k, j=d.j, E_tank=d.E_tank,
                P_task=d.P_task, E_total=d.E_total, T_total=d.T_total, U_total=d.U_total,
            )),
        )  # fmt: skip

        tau = np.asarray(tau_control, dtype=float) + snap.jacobian[:3].T @ f_ext
        if self.compensate_gravity:
            tau = tau + snap.gravity_torque
        qdd = snap.forward_dynamics(tau)
        qd = self.robot.qdot + self.dt * qdd
        q = self.robot.q + self.dt * qd
        q, qd = self._clamp(q, qd)

        self.contact = replace(self.contact, penetration=max(self.contact.z_workbench - x[2], 0.0), force=ext.contact)
        self.screw = screw_step(self.screw, -ext.screw, self.drill_on, self.dt)
        self.robot = RobotState(q, qd)
        self._snap = None
        self.steps += 1

        fastest = float(np.max(np.abs(qd)))
        if not math.isfinite(fastest) or fastest > self.max_joint_speed:
            raise DivergenceError(f"joint speed {fastest:.3g} rad/s exceeds {self.max_joint_speed} at t={self.clock:.3f}s")
        return record

    def _clamp(self, q, qd):
        lo, hi = self.model.lower_limits, self.model.upper_limits
        below, above = q < lo, q > hi
        if below.any() or above.any():
            for i in np.flatnonzero(below | above):
                if i not in self._warned_limits:
                    log.warning("joint %d clamped to its limit at t=%.3fs", i, self.clock)
                    self._warned_limits.add(int(i))
            q = np.clip(q, lo, hi)
            qd = np.where(below & (qd < 0) | above & (qd > 0), 0.0, qd)
        return q, qd


def world_step(world: SimWorld, tau_control, diagnostics=None, desired_z: float = math.nan) -> LogRecord:
    return world.step(tau_control, diagnostics, desired_z)


def external_wrench(world: SimWorld) -> np.ndarray:
    """External force on the tool tip in base axes (moments are zero)."""
    return world.external_forces().total


# ---------------------------------------------------------------------------
# logs


class LogWriter:
    def __init__(self, path, n: int):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(log_columns(n))

    def write(self, record: LogRecord) -> None:
        self._writer.writerow(record.row())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _column(log, name: str) -> np.ndarray:
    if isinstance(log, dict) or hasattr(log, "columns"):
        return np.asarray(log[name], dtype=float)
    attr = {"lambda": "lam"}.get(name, name)
    return np.array([getattr(r, attr) for r in log], dtype=float)


def peak_impact_force(log: Sequence[LogRecord] | dict, window: tuple[float, float] | None = None) -> float:
    """Largest workbench contact force with ``window[0] <= t < window[1]``."""
    t = _column(log, "t")
    f = np.abs(_column(log, "f_contact_z"))
    if window is not None:
        t0, t1 = window
        if t.size and (t0 > t[-1] + 1e-12 or t1 < t[0]):
            raise ValueError(f"window {window} lies outside the run [{t[0]}, {t[-1]}]")
        f = f[(t >= t0) & (t < t1)]
    return float(f.max()) if f.size else 0.0


def read_log(path) -> dict[str, np.ndarray]:
    """Read a CSV log into columns; ``screw_state`` stays a string array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {}
    for i, name in enumerate(header):
        values = [r[i] for r in body]
        cols[name] = np.array(values) if name == "screw_state" else np.array(values, dtype=float)
    return cols
