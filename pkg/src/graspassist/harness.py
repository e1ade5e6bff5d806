"""Batch experiments: scripted operators driving paired manual and assisted
trials over generated scenes, with summary statistics and plot-ready files.

A trial is feasible when the uniformly picked target object carries at least
one sampled candidate and that candidate admits a plan from the start pose.
Manual and assisted runs of the same trial index share the scene seed and the
target, so per-trial differences are paired observations.  Every derived seed
is a pure function of the config, which makes whole summaries reproducible.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, asdict, field, replace
from pathlib import Path

import numpy as np

from .se2 import Pose2
from .scene import Landscape, Obstacle, SceneParams, extract_features, generate_scene
from .density import (
    CandidateGrasp,
    ContactModel,
    DensityError,
    DensityParams,
    GripperModel,
    build_query_density,
    learn_contact_model,
    sample_grasps,
)
from .planner import PlanParams, PlanningError, TrajectoryPlan, plan_trajectory
from .controller import AssistParams
from .sim import Session, SessionParams, TrialRecord

__all__ = [
    "ExperimentConfig",
    "OperatorPolicy",
    "SyntheticOperator",
    "TrialSetup",
    "config_hash",
    "emit_plot_data",
    "pinch_demonstration",
    "prepare_trial",
    "run_experiment",
]

OPERATOR_KINDS = ("oracle", "noisy-proportional", "distracted-then-corrects")

# manual-mode finger opening beyond the goal aperture while approaching (mm)
_OPEN_CLEARANCE = 12.0


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class SyntheticOperator:
    """Deterministic stand-in for a human on the stick."""

    kind: str
    noise_std: float = 0.0        # mm/s of gaussian jitter on each axis
    reaction_delay: int = 0       # ticks of zero input before acting
    distraction_ticks: int = 60   # distracted kind: ticks spent chasing the decoy
    seed: int = 0
    gain: float = 4.0             # 1/s proportional pull toward the aim point

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "SyntheticOperator":
        return SyntheticOperator(**d)


class OperatorPolicy:
    """Per-trial command source: observation (PlantState) -> ((ux, uy), key).

    The oracle replays its plan's own controls (and, in manual mode, keys the
    plan's aperture schedule along).  The noisy kind pulls proportionally
    straight toward the goal grasp with seeded gaussian jitter.  The
    distracted kind chases the decoy until its correction tick, then resumes
    its briefed route when it has one, steering toward a point a short way
    down the plan so it rejoins the corridor instead of dragging the frame
    through whatever sits between it and the grasp; without a plan it falls
    back to the straight pull.  In manual mode the proportional kinds hold
    the fingers open wide enough to straddle the goal and close once the
    frame is inside the completion tolerance.  Commands depend only on the
    observation, the operator fields, and the rng state, so identical
    observation sequences reproduce identical command sequences.
    """

    # waypoints of forward aim while route-following; at the default gain the
    # pull toward a point this far down the route saturates near v_limit
    ROUTE_LOOKAHEAD = 5

    def __init__(self, operator: SyntheticOperator, target: CandidateGrasp,
                 mode: str, session: SessionParams, gripper: GripperModel,
                 plan: TrajectoryPlan | None = None,
                 decoy: CandidateGrasp | None = None):
        if operator.kind == "distracted-then-corrects" and decoy is None:
            raise ValueError("distracted operator needs a decoy grasp")
        if operator.kind == "oracle" and plan is None:
            raise ValueError("oracle operator needs the target plan")
        self.op = operator
        self.target = target
        self.mode = mode
        self.session = session
        self.gripper = gripper
        self.plan = plan if operator.kind != "noisy-proportional" else None
        self.decoy = decoy
        self.rng = np.random.default_rng(operator.seed)
        self._tau = plan.horizon if self.plan is not None else None

    def __call__(self, state) -> tuple[tuple[float, float], int]:
        if state.tick < self.op.reaction_delay:
            return (0.0, 0.0), 0
        if self.plan is not None and self.op.kind == "oracle":
            return self._plan_control(state)
        if (self.plan is not None
                and self.op.kind == "distracted-then-corrects"
                and self._goal(state.tick) is self.target):
            return self._route_control(state)
        return self._proportional_control(state)

    def _plan_control(self, state) -> tuple[tuple[float, float], int]:
        pos = self.plan.positions
        d = np.hypot(pos[:, 0] - state.pose.x, pos[:, 1] - state.pose.y)
        # time-to-go never rewinds, mirroring the controller's own tracking
        self._tau = min(self._tau, self.plan.horizon - int(np.argmin(d)))
        key = 0
        if self.mode == "manual":
            _, plan_ap = self.plan.waypoint_at_tau(self._tau)
            if plan_ap < state.aperture - 1e-9:
                key = -1
            elif plan_ap > state.aperture + 1e-9:
                key = 1
        return self.plan.control_at_tau(self._tau), key

    def _route_control(self, state) -> tuple[tuple[float, float], int]:
        pos = self.plan.positions
        d = np.hypot(pos[:, 0] - state.pose.x, pos[:, 1] - state.pose.y)
        # time-to-go never rewinds, mirroring the controller's own tracking
        self._tau = min(self._tau, self.plan.horizon - int(np.argmin(d)))
        ahead = max(self._tau - self.ROUTE_LOOKAHEAD, 0)
        aim, plan_ap = self.plan.waypoint_at_tau(ahead)
        ux = self.op.gain * (aim.x - state.pose.x)
        uy = self.op.gain * (aim.y - state.pose.y)
        speed = math.hypot(ux, uy)
        if speed > self.session.v_limit:
            scale = self.session.v_limit / speed
            ux, uy = ux * scale, uy * scale
        if self.op.noise_std > 0.0:
            jitter = self.rng.normal(0.0, self.op.noise_std, size=2)
            ux, uy = ux + jitter[0], uy + jitter[1]

        key = 0
        if self.mode == "manual":
            if plan_ap < state.aperture - 1e-9:
                key = -1
            elif plan_ap > state.aperture + 1e-9:
                key = 1
        return (float(ux), float(uy)), key

    def _goal(self, tick: int) -> CandidateGrasp:
        if (self.op.kind == "distracted-then-corrects"
                and tick < self.op.reaction_delay + self.op.distraction_ticks):
            return self.decoy
        return self.target

    def _proportional_control(self, state) -> tuple[tuple[float, float], int]:
        goal = self._goal(state.tick)
        gx, gy = goal.pose.x, goal.pose.y
        px, py = state.pose.x, state.pose.y
        ux = self.op.gain * (gx - px)
        uy = self.op.gain * (gy - py)
        speed = math.hypot(ux, uy)
        if speed > self.session.v_limit:
            scale = self.session.v_limit / speed
            ux, uy = ux * scale, uy * scale
        if self.op.noise_std > 0.0:
            jitter = self.rng.normal(0.0, self.op.noise_std, size=2)
            ux, uy = ux + jitter[0], uy + jitter[1]

        key = 0
        if self.mode == "manual":
            open_to = min(goal.aperture + _OPEN_CLEARANCE, self.gripper.aperture_max)
            if math.hypot(gx - px, gy - py) <= self.session.completion_tol:
                key = -1
            elif state.aperture < open_to - 1e-9:
                key = 1
        return (float(ux), float(uy)), key


@dataclass(frozen=True)
class ExperimentConfig:
    n_trials: int = 10
    modes: tuple[str, ...] = ("manual", "assisted")
    operator: SyntheticOperator = field(
        default_factory=lambda: SyntheticOperator(kind="oracle"))
    scene: SceneParams = field(default_factory=SceneParams)
    session: SessionParams = field(default_factory=SessionParams)
    assist: AssistParams = field(default_factory=AssistParams)
    density: DensityParams = field(default_factory=DensityParams)
    n_grasp_samples: int = 300
    candidate_pool: int = 64
    max_candidates: int = 8
    start_height: float = 150.0
    start_aperture: float = 40.0
    seed: int = 0
    infeasible_rate_limit: float = 0.5

    def plan_params(self) -> PlanParams:
        # waypoint spacing respects the session speed limit so plan controls
        # pass through the input clamp unchanged
        return PlanParams(step_len=self.session.v_limit * self.session.dt,
                          dt=self.session.dt)

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "modes": list(self.modes),
            "operator": self.operator.to_dict(),
            "scene": asdict(self.scene),
            "session": asdict(self.session),
            "assist": asdict(self.assist),
            "density": self.density.to_dict(),
            "n_grasp_samples": self.n_grasp_samples,
            "candidate_pool": self.candidate_pool,
            "max_candidates": self.max_candidates,
            "start_height": self.start_height,
            "start_aperture": self.start_aperture,
            "seed": self.seed,
            "infeasible_rate_limit": self.infeasible_rate_limit,
        }

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        scene = dict(d["scene"])
        scene["width_range"] = tuple(scene["width_range"])
        scene["height_range"] = tuple(scene["height_range"])
        return ExperimentConfig(
            n_trials=d["n_trials"],
            modes=tuple(d["modes"]),
            operator=SyntheticOperator.from_dict(d["operator"]),
            scene=SceneParams(**scene),
            session=SessionParams(**d["session"]),
            assist=AssistParams(**d["assist"]),
            density=DensityParams.from_dict(d["density"]),
            n_grasp_samples=d["n_grasp_samples"],
            candidate_pool=d["candidate_pool"],
            max_candidates=d["max_candidates"],
            start_height=d["start_height"],
            start_aperture=d["start_aperture"],
            seed=d["seed"],
            infeasible_rate_limit=d["infeasible_rate_limit"],
        )


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(_dump(cfg.to_dict()).encode()).hexdigest()[:16]


def pinch_demonstration(width: float = 40.0, height: float = 40.0,
                        gripper: GripperModel | None = None,
                        params: DensityParams | None = None
                        ) -> tuple[ContactModel, Landscape]:
    """Canonical one-shot demo: a vertical pinch on a lone rectangle."""
    gripper = gripper or GripperModel()
    scene = Landscape(
        width=200.0, ground_y=0.0, resolution=2.0,
        objects=(Obstacle(id="demo", kind="box", center=(100.0, height / 2),
                          half_extents=(width / 2, height / 2)),),
        id="demo-scene",
    )
    pose = Pose2(100.0, height / 2, -math.pi / 2)
    aperture = width + 2 * gripper.link_radius
    model = learn_contact_model(extract_features(scene), pose, aperture,
                                gripper, params)
    return model, scene


@dataclass
class TrialSetup:
    index: int
    scene_seed: int
    scene: Landscape
    candidates: list[CandidateGrasp]
    target: CandidateGrasp
    plans: list[TrajectoryPlan]
    target_plan: TrajectoryPlan
    start_pose: Pose2


def prepare_trial(cfg: ExperimentConfig, model: ContactModel,
                  index: int) -> TrialSetup | None:
    """Scene, candidates, target pick, and plans for one trial index.

    Returns None when the trial is infeasible: the picked object carries no
    candidate, the scene has no graspable surface at all, or the target
    candidate admits no plan.
    """
    gripper = model.gripper
    scene_seed = cfg.seed + 1000 * index
    scene = generate_scene(scene_seed, cfg.scene)
    pick = int(np.random.default_rng(scene_seed + 2).integers(len(scene.objects)))
    target_object = scene.objects[pick].id
    try:
        qd = build_query_density(model, extract_features(scene))
        pool = sample_grasps(qd, gripper, scene, cfg.n_grasp_samples,
                             seed=scene_seed + 1,
                             max_candidates=cfg.candidate_pool)
    except DensityError:
        return None
    # one hypothesis per object: the arbitration disambiguates which OBJECT
    # the operator wants, and near-duplicate plans on the same object would
    # only split its vote
    best_by_object: dict[str, CandidateGrasp] = {}
    for cand in pool:
        best_by_object.setdefault(cand.object_id, cand)
    target = best_by_object.get(target_object)
    if target is None:
        return None
    candidates = sorted(best_by_object.values(), key=lambda c: c.grasp_id)
    if len(candidates) > cfg.max_candidates:
        others = sorted((c for c in candidates if c is not target),
                        key=lambda c: -c.score)
        candidates = sorted([target] + others[: cfg.max_candidates - 1],
                            key=lambda c: c.grasp_id)

    start = Pose2(scene.width / 2, cfg.start_height, -math.pi / 2)
    # all plans travel at one shared opening: a selection switch mid-flight
    # then commands no finger motion, and fingers only ever close at the
    # selected plan's own certified corridor end
    p_params = cfg.plan_params()
    shared_approach = max(c.aperture + p_params.aperture_margin
                          for c in candidates)
    plans = []
    target_plan = None
    for cand in candidates:
        try:
            plan = plan_trajectory(start, cfg.start_aperture, cand, gripper,
                                   scene, p_params,
                                   approach_aperture=shared_approach)
        except PlanningError:
            continue
        plans.append(plan)
        if cand.grasp_id == target.grasp_id:
            target_plan = plan
    if target_plan is None:
        return None
    return TrialSetup(index=index, scene_seed=scene_seed, scene=scene,
                      candidates=candidates, target=target, plans=plans,
                      target_plan=target_plan, start_pose=start)


def run_trial(cfg: ExperimentConfig, model: ContactModel, setup: TrialSetup,
              mode: str) -> TrialRecord:
    op = replace(cfg.operator,
                 seed=cfg.operator.seed * 7919 + setup.scene_seed
                      + (1 if mode == "assisted" else 0))
    decoy = None
    if op.kind == "distracted-then-corrects":
        # first planned candidate on another object; deterministic by id order
        planned = {p.grasp.grasp_id for p in setup.plans}
        decoy = next((c for c in setup.candidates
                      if c.object_id != setup.target.object_id
                      and c.grasp_id in planned), None)
        if decoy is None:
            raise ValueError(
                f"trial {setup.index} has no planned decoy on another object")
    policy = OperatorPolicy(op, setup.target, mode=mode, session=cfg.session,
                            gripper=model.gripper, plan=setup.target_plan,
                            decoy=decoy)
    session = Session(
        scene=setup.scene, gripper=model.gripper, target=setup.target,
        mode=mode, start_pose=setup.start_pose,
        start_aperture=cfg.start_aperture,
        plans=setup.plans if mode == "assisted" else None,
        params=cfg.session,
        assist_params=cfg.assist if mode == "assisted" else None,
        scene_seed=setup.scene_seed, config_hash=config_hash(cfg),
    )
    while not session.done:
        u, key = policy(session.state)
        session.step(u, key)
    return session.record()


def _distribution(values: list[float]) -> dict:
    if not values:
        return {"values": [], "mean": None, "std": None}
    return {"values": [float(v) for v in values],
            "mean": float(np.mean(values)),
            "std": float(np.std(values))}


def run_experiment(cfg: ExperimentConfig, out_dir: Path | str | None = None) -> dict:
    """Run all trials in all modes and summarize.

    Position error aggregates final error over every feasible trial; execution
    time counts a failed trial at the tick-cap duration (censored, flagged by
    its success field).  Trial records land under out_dir/trials when out_dir
    is given.
    """
    model, _ = pinch_demonstration(params=cfg.density)
    trials_dir = None
    if out_dir is not None:
        trials_dir = Path(out_dir) / "trials"
        trials_dir.mkdir(parents=True, exist_ok=True)

    infeasible = 0
    rows: dict[str, list[dict]] = {mode: [] for mode in cfg.modes}
    for i in range(cfg.n_trials):
        setup = prepare_trial(cfg, model, i)
        if setup is None:
            infeasible += 1
            continue
        for mode in cfg.modes:
            record = run_trial(cfg, model, setup, mode)
            if trials_dir is not None:
                (trials_dir / f"trial-{i:04d}-{mode}.jsonl").write_text(record.to_jsonl())
            out = record.outcome
            time = (out.execution_time if out.success
                    else cfg.session.tick_cap * cfg.session.dt)
            rows[mode].append({
                "trial": i,
                "scene_seed": setup.scene_seed,
                "target_object": setup.target.object_id,
                "success": out.success,
                "position_error": out.position_error,
                "execution_time": time,
            })

    feasible = cfg.n_trials - infeasible
    modes = {}
    for mode in cfg.modes:
        r = rows[mode]
        successes = sum(1 for row in r if row["success"])
        modes[mode] = {
            "n": len(r),
            "successes": successes,
            "success_rate": successes / len(r) if r else None,
            "position_error": _distribution([row["position_error"] for row in r]),
            "execution_time": _distribution([row["execution_time"] for row in r]),
            "trials": r,
        }
    return {
        "schema": "graspassist-summary/1",
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "n_trials": cfg.n_trials,
        "infeasible": infeasible,
        "feasible": feasible,
        "infeasible_rate": infeasible / cfg.n_trials if cfg.n_trials else 0.0,
        "modes": modes,
    }


def emit_plot_data(summaries: list[dict], out_dir: Path | str) -> list[Path]:
    """One distribution file per (summary, mode, metric), box-plot ready."""
    if not summaries:
        raise ValueError("no summaries to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for si, summary in enumerate(summaries):
        prefix = f"exp{si:02d}_" if len(summaries) > 1 else ""
        for mode, stats in summary["modes"].items():
            for metric in ("position_error", "execution_time"):
                dist = stats[metric]
                values = dist["values"]
                if values:
                    q1, q3 = np.percentile(values, [25.0, 75.0])
                    fences = [float(q1 - 1.5 * (q3 - q1)), float(q3 + 1.5 * (q3 - q1))]
                    outliers = [v for v in values if v < fences[0] or v > fences[1]]
                else:
                    fences = [None, None]
                    outliers = []
                path = out / f"{prefix}{mode}_{metric}.json"
                path.write_text(_dump({
                    "config_hash": summary["config_hash"],
                    "mode": mode,
                    "metric": metric,
                    "values": values,
                    "mean": dist["mean"],
                    "std": dist["std"],
                    "fences": fences,
                    "outliers": outliers,
                }))
                written.append(path)
    return written
