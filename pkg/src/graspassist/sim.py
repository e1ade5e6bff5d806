"""Deterministic kinematic plant and trial sessions.

The plant advances in three phases per tick, translation at the held
configuration, then heading superimposition, then aperture superimposition,
and every phase clamps against the scene with the same sweep test the planner
uses.  Sharing that function is load-bearing: plan-validated moves evaluate to
exactly free here, so executing a plan open loop lands on its waypoints and
logged trials replay bit-exactly.

A Session wraps the plant with an operator mode (manual keeps the heading
vertical and drives the aperture with open/close keys; assisted routes input
through the arbitration controller), detects grasp completion, and records
every tick to a line-delimited, versioned trial format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, field

import numpy as np

from .se2 import Pose2, wrap_angle
from .density import CandidateGrasp, GripperModel
from .planner import (
    TrajectoryPlan,
    check_gripper_collision,
    max_free_fraction,
    _config_clear,
    _stacked_centers,
)
from .controller import AssistController, AssistParams

__all__ = [
    "Command",
    "CompletionReport",
    "PlantState",
    "Session",
    "SessionParams",
    "TickLog",
    "TrialOutcome",
    "TrialRecord",
    "check_grasp_complete",
    "replay_trial",
    "step",
]

TRIAL_SCHEMA = "graspassist-trial/1"


@dataclass(frozen=True)
class PlantState:
    pose: Pose2
    aperture: float
    tick: int
    dt: float


@dataclass(frozen=True)
class Command:
    """One tick of actuation: velocity plus optional superimposed targets."""

    velocity: tuple[float, float]
    theta: float | None = None
    aperture: float | None = None

    def to_dict(self) -> dict:
        return {"v": list(self.velocity), "th": self.theta, "ap": self.aperture}

    @staticmethod
    def from_dict(d: dict) -> "Command":
        return Command(velocity=(d["v"][0], d["v"][1]), theta=d["th"], aperture=d["ap"])


def step(state: PlantState, cmd: Command, scene, gripper: GripperModel,
         tol: float = 1e-9) -> PlantState:
    """Advance one tick; motion is clamped so penetration can never happen."""
    x, y, theta = state.pose.x, state.pose.y, state.pose.theta
    aperture = state.aperture
    dt = state.dt

    dx = cmd.velocity[0] * dt
    dy = cmd.velocity[1] * dt
    if dx != 0.0 or dy != 0.0:
        centers = _stacked_centers(gripper, (x, y), theta, aperture)
        deltas = np.broadcast_to(np.array([dx, dy]), centers.shape)
        t = max_free_fraction(scene, centers, deltas, gripper.link_radius, tol)
        x, y = x + t * dx, y + t * dy
        if t < 1.0:
            # contact eats the normal component only: walk the leftover one
            # axis at a time so the tangential part still makes progress
            # instead of freezing against the surface
            for rx, ry in (((1.0 - t) * dx, 0.0), (0.0, (1.0 - t) * dy)):
                if rx == 0.0 and ry == 0.0:
                    continue
                centers = _stacked_centers(gripper, (x, y), theta, aperture)
                deltas = np.broadcast_to(np.array([rx, ry]), centers.shape)
                tt = max_free_fraction(scene, centers, deltas,
                                       gripper.link_radius, tol)
                x, y = x + tt * rx, y + tt * ry

    if cmd.theta is not None:
        th = wrap_angle(float(cmd.theta))
        if th != theta and _config_clear(scene, gripper, (x, y), th, aperture, tol):
            theta = th

    if cmd.aperture is not None:
        target = min(max(float(cmd.aperture), gripper.aperture_min), gripper.aperture_max)
        if target != aperture:
            centers = _stacked_centers(gripper, (x, y), theta, aperture)
            axis = np.array([-math.sin(theta), math.cos(theta)])
            half = 0.5 * (target - aperture)
            moves = np.stack([half * axis, -half * axis])
            fr = [max_free_fraction(scene, centers[i:i + 1], moves[i:i + 1],
                                    gripper.link_radius, tol) for i in range(2)]
            t = min(fr)
            aperture = target if t >= 1.0 else aperture + t * (target - aperture)
            if t < 1.0 and max(fr) > t:
                # one jaw rests on a face; against a rigid obstacle the
                # compliant frame gives instead, so the free jaw absorbs the
                # leftover travel and the frame follows the jaw midpoint
                i = int(fr[1] > fr[0])
                want = target - aperture
                c_free = centers[i] + t * moves[i]
                d_free = (want if i == 0 else -want) * axis
                tt = max_free_fraction(scene, c_free[None, :], d_free[None, :],
                                       gripper.link_radius, tol)
                aperture += tt * want
                x, y = x + 0.5 * tt * d_free[0], y + 0.5 * tt * d_free[1]

    return PlantState(pose=Pose2(x, y, theta), aperture=aperture,
                      tick=state.tick + 1, dt=dt)


@dataclass(frozen=True)
class CompletionReport:
    complete: bool
    position_error: float
    link_separations: dict[str, float] = field(compare=False, default_factory=dict)


def check_grasp_complete(state: PlantState, grasp: CandidateGrasp,
                         gripper: GripperModel, scene, tol: float = 5.0,
                         contact_tol: float = 0.5) -> CompletionReport:
    """Complete when both fingers touch the target object and the frame sits
    within tol of the grasp position.  Separation is measured against the
    target itself, so a nearer bystander object cannot mask the contact."""
    target = scene.obstacle(grasp.object_id)
    vec = state.pose.as_vector()
    c1, c2 = gripper.finger_centers(vec, state.aperture)
    seps = {
        name: float(target.signed_distance(np.asarray(c, dtype=float)) - gripper.link_radius)
        for name, c in zip(gripper.LINKS, (c1, c2))
    }
    err = math.hypot(state.pose.x - grasp.pose.x, state.pose.y - grasp.pose.y)
    complete = err <= tol and all(s <= contact_tol for s in seps.values())
    return CompletionReport(complete=complete, position_error=err,
                            link_separations=seps)


@dataclass(frozen=True)
class TickLog:
    tick: int
    state: PlantState
    u: tuple[float, float]
    key: int
    cmd: Command
    selected: int | None

    def to_dict(self) -> dict:
        return {
            "t": self.tick,
            "x": [self.state.pose.x, self.state.pose.y, self.state.pose.theta],
            "a": self.state.aperture,
            "u": list(self.u),
            "k": self.key,
            "cmd": self.cmd.to_dict(),
            "g": self.selected,
        }

    @staticmethod
    def from_dict(d: dict, dt: float) -> "TickLog":
        return TickLog(
            tick=d["t"],
            state=PlantState(pose=Pose2(d["x"][0], d["x"][1], d["x"][2]),
                             aperture=d["a"], tick=d["t"], dt=dt),
            u=(d["u"][0], d["u"][1]),
            key=d["k"],
            cmd=Command.from_dict(d["cmd"]),
            selected=d["g"],
        )


@dataclass(frozen=True)
class TrialOutcome:
    success: bool
    position_error: float
    execution_time: float | None
    completion_tick: int | None

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrialOutcome":
        return TrialOutcome(**d)


@dataclass(frozen=True)
class SessionParams:
    dt: float = 0.05
    v_limit: float = 50.0          # mm/s ceiling on commanded speed
    completion_tol: float = 5.0    # mm position error allowed at the grasp
    contact_tol: float = 0.5       # mm separation that still counts as touching
    aperture_rate: float = 50.0    # mm/s for manual open/close keys
    manual_theta: float = -math.pi / 2
    tick_cap: int = 2000


@dataclass
class TrialRecord:
    mode: str
    scene: object
    gripper: GripperModel
    target: CandidateGrasp
    start_pose: Pose2
    start_aperture: float
    session_params: SessionParams
    ticks: list[TickLog]
    outcome: TrialOutcome | None
    scene_seed: int | None = None
    assist_params: AssistParams | None = None
    plans: list[TrajectoryPlan] | None = None
    config_hash: str | None = None
    schema: str = TRIAL_SCHEMA

    def to_jsonl(self) -> str:
        header = {
            "schema": self.schema,
            "mode": self.mode,
            "scene_seed": self.scene_seed,
            "scene": self.scene.to_dict(),
            "gripper": {"link_radius": self.gripper.link_radius,
                        "aperture_min": self.gripper.aperture_min,
                        "aperture_max": self.gripper.aperture_max},
            "target": self.target.to_dict(),
            "start": {"pose": [self.start_pose.x, self.start_pose.y, self.start_pose.theta],
                      "aperture": self.start_aperture},
            "session_params": asdict(self.session_params),
            "assist_params": asdict(self.assist_params) if self.assist_params else None,
            "plans": [p.to_dict() for p in self.plans] if self.plans else None,
            "config_hash": self.config_hash,
        }
        lines = [_dump(header)]
        lines.extend(_dump(t.to_dict()) for t in self.ticks)
        lines.append(_dump({"outcome": self.outcome.to_dict() if self.outcome else None}))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_jsonl(text: str) -> "TrialRecord":
        from .scene import Landscape

        lines = [json.loads(s) for s in text.splitlines() if s.strip()]
        header = lines[0]
        if header.get("schema") != TRIAL_SCHEMA:
            raise ValueError(f"unknown trial schema {header.get('schema')!r}")
        params = SessionParams(**header["session_params"])
        ticks = [TickLog.from_dict(d, params.dt) for d in lines[1:] if "t" in d]
        outcome_d = next((d["outcome"] for d in lines[1:] if "outcome" in d), None)
        return TrialRecord(
            mode=header["mode"],
            scene=Landscape.from_dict(header["scene"]),
            gripper=GripperModel(**header["gripper"]),
            target=CandidateGrasp.from_dict(header["target"]),
            start_pose=Pose2(*header["start"]["pose"]),
            start_aperture=header["start"]["aperture"],
            session_params=params,
            ticks=ticks,
            outcome=TrialOutcome.from_dict(outcome_d) if outcome_d else None,
            scene_seed=header["scene_seed"],
            assist_params=AssistParams(**header["assist_params"]) if header["assist_params"] else None,
            plans=[TrajectoryPlan.from_dict(p) for p in header["plans"]] if header["plans"] else None,
            config_hash=header["config_hash"],
        )


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class Session:
    """Single-trial loop: one operator, one target, one mode."""

    def __init__(self, scene, gripper: GripperModel, target: CandidateGrasp,
                 mode: str, start_pose: Pose2, start_aperture: float,
                 plans: list[TrajectoryPlan] | None = None,
                 params: SessionParams | None = None,
                 assist_params: AssistParams | None = None,
                 scene_seed: int | None = None,
                 config_hash: str | None = None):
        if mode not in ("manual", "assisted"):
            raise ValueError(f"unknown session mode {mode!r}")
        if mode == "assisted" and not plans:
            raise ValueError("assisted mode needs at least one plan")
        self.scene = scene
        self.gripper = gripper
        self.target = target
        self.mode = mode
        self.params = params or SessionParams()
        self.scene_seed = scene_seed
        self.config_hash = config_hash
        self.plans = list(plans) if plans else None
        if mode == "assisted":
            self.assist_params = assist_params or AssistParams(v_limit=self.params.v_limit)
            self.controller = AssistController(self.plans, self.assist_params)
        else:
            self.assist_params = None
            self.controller = None
        self.start_pose = start_pose
        self.start_aperture = float(start_aperture)
        self.state = PlantState(pose=start_pose, aperture=self.start_aperture,
                                tick=0, dt=self.params.dt)
        self.ticks: list[TickLog] = []
        self.done = False
        self.last_debug: dict | None = None  # arbitration internals, assisted only
        self._outcome: TrialOutcome | None = None
        self._first_input: int | None = None

    def step(self, u, aperture_key: int = 0) -> PlantState:
        if self.done:
            return self.state
        p = self.params
        raw = (float(u[0]), float(u[1]))
        if raw != (0.0, 0.0) and self._first_input is None:
            self._first_input = self.state.tick
        speed = math.hypot(*raw)
        ux, uy = raw
        if speed > p.v_limit:
            scale = p.v_limit / speed
            ux, uy = ux * scale, uy * scale

        if self.mode == "manual":
            ap_target = min(max(self.state.aperture + aperture_key * p.aperture_rate * p.dt,
                                self.gripper.aperture_min), self.gripper.aperture_max)
            cmd = Command(velocity=(ux, uy), theta=p.manual_theta, aperture=ap_target)
            selected = None
        else:
            x = self.state.pose
            ac = self.controller.step((x.x, x.y, x.theta), (ux, uy))
            cmd = Command(velocity=ac.velocity, theta=ac.theta, aperture=ac.aperture)
            selected = ac.debug["selected"]
            self.last_debug = ac.debug

        self.ticks.append(TickLog(tick=self.state.tick, state=self.state, u=raw,
                                  key=aperture_key, cmd=cmd, selected=selected))
        self.state = step(self.state, cmd, self.scene, self.gripper)

        rep = check_grasp_complete(self.state, self.target, self.gripper, self.scene,
                                   tol=p.completion_tol, contact_tol=p.contact_tol)
        if rep.complete:
            last = self.ticks[-1].tick
            first = self._first_input if self._first_input is not None else last
            self.done = True
            self._outcome = TrialOutcome(success=True, position_error=rep.position_error,
                                         execution_time=(last - first) * p.dt,
                                         completion_tick=last)
        elif len(self.ticks) >= p.tick_cap:
            self.done = True
            self._outcome = TrialOutcome(success=False, position_error=rep.position_error,
                                         execution_time=None, completion_tick=None)
        return self.state

    def record(self) -> TrialRecord:
        outcome = self._outcome
        if outcome is None:
            err = check_grasp_complete(self.state, self.target, self.gripper,
                                       self.scene, tol=self.params.completion_tol,
                                       contact_tol=self.params.contact_tol).position_error
            outcome = TrialOutcome(success=False, position_error=err,
                                   execution_time=None, completion_tick=None)
        return TrialRecord(
            mode=self.mode, scene=self.scene, gripper=self.gripper,
            target=self.target, start_pose=self.start_pose,
            start_aperture=self.start_aperture, session_params=self.params,
            ticks=list(self.ticks), outcome=outcome, scene_seed=self.scene_seed,
            assist_params=self.assist_params, plans=self.plans,
            config_hash=self.config_hash,
        )


def replay_trial(record: TrialRecord) -> TrialRecord:
    """Re-run a logged trial from its raw inputs; deterministic components
    reproduce the logged states bit-exactly."""
    sess = Session(
        scene=record.scene, gripper=record.gripper, target=record.target,
        mode=record.mode, start_pose=record.start_pose,
        start_aperture=record.start_aperture, plans=record.plans,
        params=record.session_params, assist_params=record.assist_params,
        scene_seed=record.scene_seed, config_hash=record.config_hash,
    )
    for t in record.ticks:
        if sess.done:
            break
        sess.step(t.u, aperture_key=t.key)
    return sess.record()
