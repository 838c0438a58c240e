"""Unscrewing scenario: configuration, event-driven driver, reports.

A run goes through five phases, each ended by a physical event rather than
a fixed time:

``engage``   desired pose lowered until the screw reaction reaches f_engage
             (the hybrid controller uses its force loop instead);
``unscrew``  drill on, desired pose follows the screw head upward;
``settle``   after contact loss the desired pose is frozen;
``pull``     a human grabs the tool and drags it, then lets go;
``recover``  free motion after the release.

Configuration files are YAML. Internally every value lives under a flat
dotted key (``controller.tank.E_lower``) so validation errors can name the
offending key directly.
"""
from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import robot as rb
from .controllers import (
    EnergyAwareController,
    EnergyAwareState,
    HybridController,
    HybridState,
    ImpedanceController,
    TankState,
)
from .lie import Transform
from .spring import StiffnessSet
from .world import (
    ContactState,
    DisturbanceEntry,
    DisturbanceSchedule,
    DivergenceError,
    GrabPull,
    LogRecord,
    LogWriter,
    ScrewProcess,
    SimWorld,
    read_log,
)

CONTROLLER_KINDS = ("impedance", "hybrid", "energy_aware")
PRESETS = ("table1_impedance", "table1_hybrid", "table1_energy_aware")
ALL = CONTROLLER_KINDS

# tolerances used by the invariant audit
TANK_RATE_TOL = 1e-6
ENERGY_CAP_TOL = 1e-3


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``(key, reason)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        super().__init__("; ".join(f"{k}: {r}" for k, r in self.errors))


class InvariantViolation(RuntimeError):
    pass


class ScenarioDivergence(RuntimeError):
    """Run aborted; ``log_path`` holds the rows written so far."""

    def __init__(self, message: str, log_path: Path | None):
        super().__init__(message)
        self.log_path = log_path


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class Key:
    kind: str  # number, int, vec3, vec, diag, str, bool, mapping
    default: Any = None
    required_for: tuple[str, ...] = ()  # controller kinds for which the key must be given
    low: float | None = None
    high: float | None = None
    choices: tuple[str, ...] = ()
    doc: str = ""


_EA, _HY = ("energy_aware",), ("hybrid",)
_TANKED = ("energy_aware", "hybrid")

SCHEMA: dict[str, Key] = {
    "controller.kind": Key("str", required_for=ALL, choices=CONTROLLER_KINDS),
    "controller.K_t": Key("vec3", required_for=ALL, low=0, doc="translational stiffness [N/m]"),
    "controller.K_r": Key("vec3", required_for=ALL, low=0, doc="rotational stiffness [Nm/rad]"),
    "controller.K_c": Key("vec3", default=[0.0, 0.0, 0.0], doc="coupling stiffness [N/rad]"),
    "controller.B_init": Key("diag", required_for=ALL, low=0, doc="joint damping [Nms/rad], scalar or per joint"),
    "controller.f_engage": Key("number", required_for=ALL, low=0, doc="engagement force [N]"),
    "controller.E_total_max": Key("number", required_for=_EA, low=0, doc="energy limit [J]"),
    "controller.P_motion_max": Key("number", required_for=_EA, doc="motion power limit [W]"),
    "controller.tank.E_upper": Key("number", required_for=_TANKED, low=0, doc="[J]"),
    "controller.tank.E_lower": Key("number", required_for=_TANKED, low=0, doc="[J]"),
    "controller.tank.E_init": Key("number", required_for=_TANKED, low=0, doc="[J]"),
    "controller.tank.P_lower": Key("number", required_for=_TANKED, high=0, doc="extraction limit [W]"),
    "controller.w_desired_z": Key("number", required_for=_HY, doc="desired axial force on the screw [N]"),
    "controller.force_gain": Key("number", default=1.0, low=0, doc="hybrid force-loop gain"),
    "model.name": Key("str", default="panda7", choices=("panda7", "custom")),
    "model.tool_length": Key("number", default=0.2, low=0),
    "model.tool_mass": Key("number", default=1.5, low=0),
    "model.chain": Key("mapping", default=None, doc="chain description for model.name = custom"),
    "model.q0": Key("vec", default=None, doc="initial joint angles; defaults to the ready pose"),
    "world.dt": Key("number", default=1e-3, low=1e-6, high=1e-2),
    "world.max_joint_speed": Key("number", default=20.0, low=0),
    "world.contact.stiffness": Key("number", default=1e5, low=0),
    "world.contact.damping": Key("number", default=300.0, low=0),
    "world.contact.protrusion": Key("number", default=0.006, low=0, doc="screw head height above the bench [m]"),
    "world.screw.pitch": Key("number", default=0.0008, low=0),
    "world.screw.speed": Key("number", default=5.0, low=0),
    "world.screw.nominal_length": Key("number", default=0.025, low=0),
    "world.screw.length_deficit": Key("number", default=0.010, low=0),
    "world.screw.engage_tolerance": Key("number", default=0.25, low=0),
    "world.screw.stiffness": Key("number", default=1e5, low=0),
    "world.screw.damping": Key("number", default=300.0, low=0),
    "phases.engage_step": Key("number", default=1e-4, low=0, doc="desired-z decrement per step [m]"),
    "phases.engage_timeout": Key("number", default=5.0, low=0),
    "phases.unscrew_timeout": Key("number", default=20.0, low=0),
    "phases.settle": Key("number", default=2.0, low=0),
    "phases.recover": Key("number", default=3.0, low=0),
    "disturbance.enabled": Key("bool", default=True),
    "disturbance.offset": Key("vec3", default=[0.04, 0.0, 0.07], doc="grab-point travel [m]"),
    "disturbance.stiffness": Key("number", default=1000.0, low=0),
    "disturbance.damping": Key("number", default=40.0, low=0),
    "disturbance.ramp": Key("number", default=1.5, low=0),
    "disturbance.hold": Key("number", default=0.5, low=0),
    "output.dir": Key("str", default="out"),
    "output.name": Key("str", default=None),
    "seed": Key("int", default=0, low=0),
}

class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e5`` and ``1e-3`` as floats."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)

# sections that must match for runs to be comparable
WORLD_SECTIONS = ("model.", "world.", "phases.", "disturbance.", "controller.f_engage")


def _flatten(tree, prefix="", out=None):
    out = {} if out is None else out
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and not (key in SCHEMA and SCHEMA[key].kind == "mapping"):
            _flatten(v, key + ".", out)
        else:
            out[key] = v
    return out


def _unflatten(flat: dict) -> dict:
    tree: dict = {}
    for key, value in flat.items():
        node = tree
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return tree


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _coerce(key: str, entry: Key, value):
    """Normalise a raw value; returns ``(value, reason)`` with reason None when fine."""
    k = entry.kind
    if k == "number":
        if not _is_number(value) or not math.isfinite(value):
            return None, f"expected a finite number, got {value!r}"
        value = float(value)
    elif k == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            return None, f"expected an integer, got {value!r}"
    elif k == "bool":
        if not isinstance(value, bool):
            return None, f"expected true/false, got {value!r}"
    elif k == "str":
        if not isinstance(value, str):
            return None, f"expected a string, got {value!r}"
        if entry.choices and value not in entry.choices:
            return None, f"must be one of {', '.join(entry.choices)}, got {value!r}"
    elif k == "mapping":
        if not isinstance(value, dict):
            return None, "expected a mapping"
    elif k in ("vec3", "vec", "diag"):
        if _is_number(value) and k != "vec":
            value = [float(value)] * 3 if k == "vec3" else float(value)
        elif isinstance(value, (list, tuple)) and value and all(_is_number(x) for x in value):
            value = [float(x) for x in value]
            if k == "vec3" and len(value) != 3:
                return None, f"expected 3 numbers, got {len(value)}"
        else:
            return None, f"expected {'a number or ' if k != 'vec' else ''}a list of numbers, got {value!r}"
    values = value if isinstance(value, list) else [value]
    if k in ("number", "int", "vec3", "diag"):
        if entry.low is not None and min(values) < entry.low:
            return None, f"must be >= {entry.low}, got {value!r}"
        if entry.high is not None and max(values) > entry.high:
            return None, f"must be <= {entry.high}, got {value!r}"
    return value, None


@dataclass(frozen=True)
class ScenarioConfig:
    values: dict[str, Any]
    source: str = ""

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def kind(self) -> str:
        return self.values["controller.kind"]

    @property
    def name(self) -> str:
        return self.values["output.name"] or self.kind

    def to_dict(self) -> dict:
        """Nested form with unset optional keys dropped."""
        return _unflatten({k: v for k, v in self.values.items() if v is not None})

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def with_overrides(self, **dotted) -> "ScenarioConfig":
        flat = {k: v for k, v in self.values.items() if v is not None}
        flat.update(dotted)
        return config_from_dict(_unflatten(flat), self.source)

    def world_signature(self) -> dict:
        return {k: v for k, v in self.values.items() if k.startswith(WORLD_SECTIONS)}


def validate_dict(raw) -> tuple[dict, list[tuple[str, str]]]:
    errors: list[tuple[str, str]] = []
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        return {}, [("<root>", "configuration must be a mapping")]
    flat = _flatten(raw)
    for key in flat:
        if key not in SCHEMA:
            errors.append((key, "unknown key"))

    kind = flat.get("controller.kind")
    kind = kind if kind in CONTROLLER_KINDS else None
    values = {}
    for key, entry in SCHEMA.items():
        if key not in flat:
            if entry.required_for and (kind is None or kind in entry.required_for):
                errors.append((key, "missing required key"))
            values[key] = copy.deepcopy(entry.default)
            continue
        value, reason = _coerce(key, entry, flat[key])
        if reason:
            errors.append((key, reason))
        values[key] = value
    if not errors:
        errors += _cross_checks(values)
    return values, errors


def _cross_checks(v: dict) -> list[tuple[str, str]]:
    errors = []
    lo, hi, e0 = v["controller.tank.E_lower"], v["controller.tank.E_upper"], v["controller.tank.E_init"]
    if lo is not None and hi is not None:
        if lo > hi:
            errors.append(("controller.tank.E_lower", f"E_lower {lo} exceeds E_upper {hi}"))
        elif e0 is not None and not lo <= e0 <= hi:
            errors.append(("controller.tank.E_init", f"E_init {e0} outside [{lo}, {hi}]"))
    if v["world.screw.length_deficit"] >= v["world.screw.nominal_length"]:
        errors.append(("world.screw.length_deficit", "must be shorter than the nominal length"))
    if v["model.name"] == "custom" and v["model.chain"] is None:
        errors.append(("model.chain", "required when model.name is custom"))
    if v["model.name"] == "custom" and v["model.q0"] is None:
        errors.append(("model.q0", "required when model.name is custom"))
    B = v["controller.B_init"]
    if isinstance(B, list) and min(B) <= 0 or not isinstance(B, list) and B is not None and B <= 0:
        errors.append(("controller.B_init", "damping must be positive definite"))
    return errors


def config_from_dict(raw, source: str = "") -> ScenarioConfig:
    values, errors = validate_dict(raw)
    if errors:
        raise ConfigError(errors)
    return ScenarioConfig(values, source)


def preset_path(name: str) -> Path:
    return Path(str(resources.files("eaic") / "presets" / f"{name}.yaml"))


def load_config(path) -> ScenarioConfig:
    """Load a YAML scenario file, or a bundled preset by name."""
    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        p = preset_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([("<file>", f"cannot read {path}: {exc.strerror}")]) from exc
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError([("<file>", f"not valid YAML: {exc}")]) from exc
    return config_from_dict(raw, str(p))


# ---------------------------------------------------------------------------
# building the run


def build_model(cfg: ScenarioConfig) -> tuple[rb.ChainModel, np.ndarray]:
    if cfg["model.name"] == "custom":
        model = rb.chain_from_dict(cfg["model.chain"])
        q0 = np.array(cfg["model.q0"])
    else:
        model = rb.panda7(cfg["model.tool_length"], cfg["model.tool_mass"])
        q0 = rb.PANDA_READY.copy() if cfg["model.q0"] is None else np.array(cfg["model.q0"])
    if q0.shape != (model.n,):
        raise ConfigError([("model.q0", f"expected {model.n} joint angles, got {q0.size}")])
    return model, q0


def _damping(cfg: ScenarioConfig, n: int) -> np.ndarray:
    B = cfg["controller.B_init"]
    if isinstance(B, list):
        if len(B) != n:
            raise ConfigError([("controller.B_init", f"expected {n} entries, got {len(B)}")])
        return np.diag(B)
    return B * np.eye(n)


def _tank(cfg: ScenarioConfig) -> TankState:
    return TankState(
        cfg["controller.tank.E_init"],
        cfg["controller.tank.E_upper"],
        cfg["controller.tank.E_lower"],
        cfg["controller.tank.P_lower"],
    )


def build_controller(cfg: ScenarioConfig, n: int):
    stiffness = StiffnessSet(cfg["controller.K_t"], cfg["controller.K_r"], cfg["controller.K_c"])
    B = _damping(cfg, n)
    if cfg.kind == "impedance":
        return ImpedanceController(stiffness, B)
    if cfg.kind == "energy_aware":
        state = EnergyAwareState(_tank(cfg), B, cfg["controller.E_total_max"], cfg["controller.P_motion_max"])
        return EnergyAwareController(stiffness, state)
    wrench = np.zeros(6)
    wrench[2] = cfg["controller.w_desired_z"]
    S = np.diag([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    return HybridController(HybridState(wrench, S, cfg["controller.force_gain"], stiffness, B, _tank(cfg)))


def build_world(cfg: ScenarioConfig) -> SimWorld:
    model, q0 = build_model(cfg)
    z0 = rb.Snapshot(model, q0).ee.translation[2]
    screw = ScrewProcess(
        head_z=z0,
        pitch=cfg["world.screw.pitch"],
        speed=cfg["world.screw.speed"],
        f_engage=cfg["controller.f_engage"],
        engage_tolerance=cfg["world.screw.engage_tolerance"],
        nominal_length=cfg["world.screw.nominal_length"],
        actual_length=cfg["world.screw.nominal_length"] - cfg["world.screw.length_deficit"],
        stiffness=cfg["world.screw.stiffness"],
        damping=cfg["world.screw.damping"],
    )
    contact = ContactState(
        z0 - cfg["world.contact.protrusion"], cfg["world.contact.stiffness"], cfg["world.contact.damping"]
    )
    return SimWorld(
        model,
        rb.RobotState(q0, np.zeros(model.n)),
        screw,
        contact,
        DisturbanceSchedule(),
        dt=cfg["world.dt"],
        max_joint_speed=cfg["world.max_joint_speed"],
    )


def disturbance_profile(cfg: ScenarioConfig, anchor: np.ndarray) -> GrabPull:
    return GrabPull(
        np.array(cfg["disturbance.offset"]),
        cfg["disturbance.stiffness"],
        cfg["disturbance.damping"],
        cfg["disturbance.ramp"],
        cfg["disturbance.hold"],
        anchor=np.array(anchor, dtype=float),
    )


# ---------------------------------------------------------------------------
# events and reports


def _steps(seconds: float, dt: float) -> int:
    return int(round(seconds / dt))


@dataclass(frozen=True)
class PhaseMarks:
    """Row indices where phases begin (``None`` when not reached)."""

    unscrew: int | None = None
    loss: int | None = None
    pull: int | None = None
    release: int | None = None
    end: int | None = None

    @classmethod
    def from_log(cls, cols: dict, cfg: ScenarioConfig) -> "PhaseMarks":
        """Recover the phase boundaries from the log and the phase timings."""
        state = cols["screw_state"]
        n = len(state)
        dt = cfg["world.dt"]
        unscrew = np.flatnonzero(state == "unscrewing")
        loss = np.flatnonzero(state == "contact_lost")
        marks = {"unscrew": int(unscrew[0]) if unscrew.size else None, "end": n}
        if loss.size:
            i = int(loss[0])
            marks["loss"] = i
            if cfg["disturbance.enabled"]:
                p = i + _steps(cfg["phases.settle"], dt)
                r = p + _steps(cfg["disturbance.ramp"] + cfg["disturbance.hold"], dt)
                marks["pull"] = p if p < n else None
                marks["release"] = r if r < n else None
        return cls(**marks)


@dataclass(frozen=True)
class RunReport:
    controller: str
    name: str
    steps: int
    duration: float
    t_contact_loss: float | None
    t_pull: float | None
    t_release: float | None
    peak_impact_contact_loss: float
    peak_impact_after_release: float
    max_phri_displacement: float
    min_E_tank: float | None
    min_lambda: float
    max_beta: float
    violations: int
    violation_kinds: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def _segment_max(values: np.ndarray, start: int | None, stop: int | None) -> float:
    if start is None:
        return 0.0
    seg = values[start:stop]
    return float(seg.max()) if seg.size else 0.0


def audit_log(cols: dict, cfg: ScenarioConfig, U_initial: float | None = None) -> dict[str, int]:
    """Count invariant violations per kind, from log columns alone."""
    counts: dict[str, int] = {}

    def tally(name, bad):
        c = int(np.count_nonzero(bad))
        if c:
            counts[name] = c

    tally("contact_pulls", cols["f_contact_z"] < 0)
    tally("lambda_range", (cols["lambda"] < 0) | (cols["lambda"] > 1))
    tally("beta_below_one", cols["beta"] < 1)
    if cfg.kind in _TANKED:
        E = cols["E_tank"]
        tally("tank_bounds", (E < cfg["controller.tank.E_lower"]) | (E > cfg["controller.tank.E_upper"]))
        tally("tank_rate", cols["P_task"] < cfg["controller.tank.P_lower"] - TANK_RATE_TOL)
    if cfg.kind == "energy_aware":
        active = cols["lambda"] < 1.0
        cap = cfg["controller.E_total_max"] + ENERGY_CAP_TOL
        tally("energy_cap", active & (cols["T_total"] + cols["U_total"] > cap))
        budget = cfg["controller.E_total_max"] + cfg["controller.tank.E_init"] + (
            cols["U_total"][0] if U_initial is None else U_initial
        )
        tally("passivity_budget", cols["T_total"] > budget)
    return counts


def report_from_log(cols: dict, cfg: ScenarioConfig) -> RunReport:
    """Build the run report from log columns and the configuration only."""
    m = PhaseMarks.from_log(cols, cfg)
    t = cols["t"]
    f = np.abs(cols["f_contact_z"])
    loss_stop = m.pull if m.pull is not None else m.end
    peak_loss = _segment_max(f, m.loss, loss_stop)
    peak_release = _segment_max(f, m.release, m.end)
    disp = 0.0
    if m.pull is not None:
        ee = np.column_stack([cols["ee_x"], cols["ee_y"], cols["ee_z"]])
        stop = m.release if m.release is not None else m.end
        disp = float(np.linalg.norm(ee[m.pull:stop] - ee[m.pull], axis=1).max())
    E = cols["E_tank"]
    kinds = audit_log(cols, cfg)

    def at(i):
        return None if i is None else float(t[i])

    return RunReport(
        controller=cfg.kind,
        name=cfg.name,
        steps=len(t),
        duration=len(t) * cfg["world.dt"],
        t_contact_loss=at(m.loss),
        t_pull=at(m.pull),
        t_release=at(m.release),
        peak_impact_contact_loss=peak_loss,
        peak_impact_after_release=peak_release,
        max_phri_displacement=disp,
        min_E_tank=None if np.all(np.isnan(E)) else float(np.nanmin(E)),
        min_lambda=float(cols["lambda"].min()),
        max_beta=float(cols["beta"].max()),
        violations=sum(kinds.values()),
        violation_kinds=kinds,
    )


def _record_violations(rec: LogRecord, cfg: ScenarioConfig, U_initial: float) -> list[str]:
    cols = {
        "f_contact_z": rec.f_contact_z,
        "lambda": rec.lam,
        "beta": rec.beta,
        "E_tank": rec.E_tank,
        "P_task": rec.P_task,
        "T_total": rec.T_total,
        "U_total": rec.U_total,
    }
    return list(audit_log({k: np.array([v]) for k, v in cols.items()}, cfg, U_initial))


# ---------------------------------------------------------------------------
# driver


@dataclass
class StepContext:
    """What an ``on_step`` callback sees after each control step."""

    phase: str
    world: SimWorld
    snapshot: rb.Snapshot
    desired: Transform
    output: Any
    controller: Any
    record: LogRecord


@dataclass
class RunResult:
    log_path: Path
    report: RunReport
    config: ScenarioConfig


def run_scenario(
    cfg: ScenarioConfig,
    out_dir=None,
    on_step: Callable[[StepContext], None] | None = None,
    strict: bool = False,
) -> RunResult:
    """Run the full scenario, streaming the CSV log to ``out_dir``."""
    out = Path(out_dir if out_dir is not None else cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / f"{cfg.name}.csv"

    world = build_world(cfg)
    ctrl = build_controller(cfg, world.model.n)
    dt = world.dt
    hybrid = cfg.kind == "hybrid"
    desired = Transform(world.snapshot().ee.rotation, world.snapshot().ee.translation.copy(), "0", "d")
    f_engage = cfg["controller.f_engage"] - (cfg["world.screw.engage_tolerance"] if hybrid else 0.0)
    rise = cfg["world.screw.pitch"] * cfg["world.screw.speed"] * dt
    step_down = np.array([0.0, 0.0, cfg["phases.engage_step"]])

    phase = "engage"
    phase_end = _steps(cfg["phases.engage_timeout"], dt)
    U_initial = None
    with LogWriter(log_path, world.model.n) as writer:
        try:
            while True:
                snap = world.snapshot()
                ext = world.external_forces()
                output = ctrl.step(snap, desired, ext.total, dt)

                i = world.steps
                if phase == "engage":
                    if ext.screw >= f_engage:
                        phase, world.drill_on = "unscrew", True
                        phase_end = i + _steps(cfg["phases.unscrew_timeout"], dt)
                    elif not hybrid:
                        desired = Transform(desired.rotation, desired.translation - step_down, "0", "d")
                elif phase == "unscrew":
                    if world.screw.state == "contact_lost":
                        phase, world.drill_on = "settle", False
                        phase_end = i + _steps(cfg["phases.settle"], dt)
                    elif world.screw.state == "done":
                        phase, world.drill_on = "recover", False
                        phase_end = i + _steps(cfg["phases.recover"], dt)
                    elif not hybrid and world.screw.state == "unscrewing":
                        desired = Transform(desired.rotation, desired.translation + [0.0, 0.0, rise], "0", "d")
                elif phase == "settle" and i >= phase_end:
                    if cfg["disturbance.enabled"]:
                        pull = disturbance_profile(cfg, snap.ee.translation)
                        world.disturbances.add(DisturbanceEntry(world.clock, pull))
                        phase = "pull"
                        phase_end = i + _steps(pull.duration, dt)
                    else:
                        phase = "recover"
                        phase_end = i + _steps(cfg["phases.recover"], dt)
                elif phase == "pull" and i >= phase_end:
                    phase = "recover"
                    phase_end = i + _steps(cfg["phases.recover"], dt)
                elif phase == "recover" and i >= phase_end:
                    break
                if phase in ("engage", "unscrew") and i >= phase_end:
                    raise DivergenceError(f"{phase} phase did not complete within its timeout")

                record = world.step(output.tau, output, float(desired.translation[2]))
                writer.write(record)
                if U_initial is None:
                    U_initial = record.U_total
                if strict:
                    bad = _record_violations(record, cfg, U_initial)
                    if bad:
                        raise InvariantViolation(f"invariant {bad[0]} violated at t={record.t:.3f}s")
                if on_step is not None:
                    on_step(StepContext(phase, world, snap, desired, output, ctrl, record))
        except DivergenceError as exc:
            writer.close()
            raise ScenarioDivergence(str(exc), log_path) from exc

    report = report_from_log(read_log(log_path), cfg)
    return RunResult(log_path, report, cfg)


# ---------------------------------------------------------------------------
# comparison


def reduction_percent(f_reference: float, f_other: float) -> float | None:
    """``(1 - f_other / f_reference) * 100``; ``None`` if the reference is zero."""
    if f_reference == 0:
        return None
    return (1.0 - f_other / f_reference) * 100.0


REPORT_FIELDS = (
    "peak_impact_contact_loss",
    "peak_impact_after_release",
    "max_phri_displacement",
    "min_E_tank",
    "min_lambda",
    "max_beta",
    "violations",
)


@dataclass
class Comparison:
    reports: list[RunReport]
    reference: str
    reductions: dict[str, dict[str, float | None]]

    def to_dict(self) -> dict:
        return {
            "reference": self.reference,
            "runs": [r.to_dict() for r in self.reports],
            "reduction_percent": self.reductions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        names = [r.name for r in self.reports]
        width = max(12, *(len(n) for n in names))
        lines = ["field".ljust(28) + "".join(n.rjust(width + 2) for n in names)]
        for f in REPORT_FIELDS:
            cells = []
            for r in self.reports:
                v = getattr(r, f)
                cells.append(("-" if v is None else f"{v:.4g}").rjust(width + 2))
            lines.append(f.ljust(28) + "".join(cells))
        lines.append("")
        lines.append(f"reduction vs {self.reference} [%]")
        for name, red in self.reductions.items():
            parts = ", ".join(f"{k} {'-' if v is None else f'{v:.1f}'}" for k, v in red.items())
            lines.append(f"  {name}: {parts}")
        return "\n".join(lines) + "\n"


def compare_reports(reports: list[RunReport], reference: str | None = None) -> Comparison:
    if len(reports) < 2:
        raise ValueError("comparison needs at least two runs")
    if reference is None:
        reference = next((r.name for r in reports if r.controller == "impedance"), reports[0].name)
    ref = next(r for r in reports if r.name == reference)
    reductions = {}
    for r in reports:
        if r is ref:
            continue
        reductions[r.name] = {
            "contact_loss": reduction_percent(ref.peak_impact_contact_loss, r.peak_impact_contact_loss),
            "after_release": reduction_percent(ref.peak_impact_after_release, r.peak_impact_after_release),
        }
    return Comparison(list(reports), reference, reductions)


def _run_for_compare(args):
    cfg, out, strict = args
    return run_scenario(cfg, out, strict=strict).report


def compare(configs: list[ScenarioConfig], out_dir, parallel: bool = False, strict: bool = False) -> Comparison:
    """Run every config over the same world and tabulate the reports."""
    if len(configs) < 2:
        raise ValueError("comparison needs at least two runs")
    sig = configs[0].world_signature()
    for c in configs[1:]:
        diff = sorted(k for k in sig if sig[k] != c.world_signature()[k])
        if diff:
            raise ConfigError([(k, "differs between compared runs") for k in diff])
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        configs = [c.with_overrides(**{"output.name": f"{c.name}_{i}"}) for i, c in enumerate(configs)]
    jobs = [(c, out_dir, strict) for c in configs]
    if parallel:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor() as pool:
            reports = list(pool.map(_run_for_compare, jobs))
    else:
        reports = [_run_for_compare(j) for j in jobs]
    return compare_reports(reports)


# ---------------------------------------------------------------------------
# plot series

FIGURES = {
    "positions": ("ee_z", "ee_zd", "z_workbench"),
    "force": ("f_ext_z", "f_contact_z"),
    "tank": ("E_tank", "P_task"),
    "energy": ("E_total", "lambda"),
}


def extract_plot_series(log, columns=None, z_workbench: float | None = None, out_dir=None) -> dict:
    """Split a log into per-figure column groups.

    ``log`` is a CSV path or a column dict. With ``columns`` given, a single
    ``custom`` group with exactly those columns is returned. When ``out_dir``
    is set, each group is also written as ``<group>.csv``.
    """
    cols = read_log(log) if isinstance(log, (str, Path)) else log
    n = len(cols["t"])
    if z_workbench is not None:
        cols = dict(cols, z_workbench=np.full(n, float(z_workbench)))
    available = sorted(k for k in cols if k != "screw_state")

    def pick(names):
        missing = [c for c in names if c not in cols]
        if missing:
            raise KeyError(f"unknown column(s) {', '.join(missing)}; available: {', '.join(available)}")
        return {"t": cols["t"], **{c: cols[c] for c in names}}

    if columns is not None:
        groups = {"custom": pick(list(columns))}
    else:
        groups = {fig: pick([c for c in names if c in cols]) for fig, names in FIGURES.items()}

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for fig, series in groups.items():
            header = ",".join(series)
            data = np.column_stack(list(series.values()))
            np.savetxt(out / f"{fig}.csv", data, delimiter=",", header=header, comments="", fmt="%.9g")
    return groups
