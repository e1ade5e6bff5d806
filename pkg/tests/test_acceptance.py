"""Delivery acceptance gate.

One test per acceptance criterion, each self-contained: it builds what it
needs, enforces the criterion's stated tolerances, and enforces the stated
runtime budget. `pytest -v tests/test_acceptance.py` therefore prints exactly
one pass/fail line per criterion.

The last two criteria concern the operator console; the transcript half runs
here against the stored golden file, the in-browser contract half runs in the
frontend's own headless suite (see frontend/).
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from bridge_script import GOLDEN, transcript_lines
from graspassist.bridge import aperture_key, compose_direction
from graspassist.controller import AssistParams, LinearizedDynamics, solve_gains
from graspassist.density import GripperModel, build_query_density, learn_contact_model, sample_grasps
from graspassist.harness import (
    ExperimentConfig,
    OperatorPolicy,
    SyntheticOperator,
    pinch_demonstration,
    prepare_trial,
    run_experiment,
    run_trial,
)
from graspassist.planner import check_gripper_collision, plan_trajectory
from graspassist.scene import FeatureCloud, Landscape, Obstacle, SurfaceFeature, extract_features
from graspassist.se2 import Pose2, angle_diff
from graspassist.sim import Session, SessionParams, TrialRecord, replay_trial


def _within(t0: float, budget: float, label: str):
    took = time.perf_counter() - t0
    assert took < budget, f"{label} took {took:.1f}s, budget {budget:.0f}s"


# -- 1: gain solver against exhaustive dynamic programming ----------------

class _ScalarCost:
    horizon = 4

    def Q(self, tau):
        return np.array([[1.0]])

    def R(self, tau):
        return np.array([[1.0]])


def test_criterion_1_riccati_matches_exhaustive_dp_on_scalar_toy():
    t0 = time.perf_counter()
    dyn = LinearizedDynamics(A=np.array([[1.0]]), B=np.array([[1.0]]),
                             c=np.zeros(1))
    gains = solve_gains(dyn, _ScalarCost())

    # hand-computed single-step case: K = 1/2, P = 3/2
    assert abs(gains.K[1][0, 0] - 0.5) <= 1e-12
    assert abs(gains.P[1][0, 0] - 1.5) <= 1e-12

    horizon = 4
    levels = np.array([-0.5, 0.0, 0.5])  # 3-level discretized control
    for x0 in (-1.2, -0.7, -0.3, 0.4, 0.9):
        best = math.inf
        for seq in itertools.product(levels, repeat=horizon):
            x, total = x0, 0.0
            for u in seq:
                total += x * x + u * u
                x = x + u
            best = min(best, total + x * x)
        v_lqr = x0 * gains.P[horizon][0, 0] * x0
        # the unconstrained optimum lower-bounds the grid optimum; rolling the
        # gain policy out with controls snapped to the grid upper-bounds it,
        # so the sandwich is the discretization error bound, no free constants
        x, v_snap = x0, 0.0
        for tau in range(horizon, 0, -1):
            u_star = float(-gains.K[tau][0, 0] * x)
            u = float(levels[np.argmin(np.abs(levels - u_star))])
            v_snap += x * x + u * u
            x = x + u
        v_snap += x * x
        assert v_lqr <= best + 1e-12
        assert best <= v_snap + 1e-12
    _within(t0, 1.0, "criterion 1")


# -- 2: density unit mass and equivariance --------------------------------

def _support_box(mix, n_sigma: float):
    lo = (mix.means - n_sigma * mix.sigmas).min(axis=0)
    hi = (mix.means + n_sigma * mix.sigmas).max(axis=0)
    return lo, hi


def test_criterion_2_learned_density_unit_mass_and_equivariance():
    t0 = time.perf_counter()
    model, demo_scene = pinch_demonstration()
    rng = np.random.default_rng(91)
    for name, mix in model.links.items():
        lo, hi = _support_box(mix, 4.0)
        pts = rng.uniform(lo, hi, size=(100_000, lo.size))
        estimate = float(mix.evaluate(pts).mean() * np.prod(hi - lo))
        assert abs(estimate - 1.0) <= 0.02, f"{name} mass {estimate:.4f}"

    cloud = extract_features(demo_scene)
    pose, aperture = Pose2(100.0, 20.0, -math.pi / 2), 48.0
    base = learn_contact_model(cloud, pose, aperture, GripperModel())
    t = Pose2(13.0, -9.0, 0.6)
    moved = FeatureCloud(
        features=[SurfaceFeature(v=t.compose(f.v), r=f.r, object_id=f.object_id)
                  for f in cloud.features],
        scene_id="moved",
    )
    shifted = learn_contact_model(moved, t.compose(pose), aperture, GripperModel())
    for name in base.links:
        a, b = base.links[name], shifted.links[name]
        assert np.allclose(a.means[:, :2], b.means[:, :2], atol=1e-9)
        dth = np.abs((a.means[:, 2] - b.means[:, 2] + math.pi)
                     % (2 * math.pi) - math.pi)
        assert np.all(dth <= 1e-9)
        assert np.allclose(a.weights, b.weights, atol=1e-9)
    _within(t0, 10.0, "criterion 2")


# -- 3: one-shot recovery and size adaptation -----------------------------

def test_criterion_3_one_shot_recovery_and_size_adaptation():
    t0 = time.perf_counter()
    gripper = GripperModel()
    model, _ = pinch_demonstration(width=40.0, height=40.0)

    novel = Landscape(
        width=340.0, ground_y=0.0, resolution=2.0,
        objects=(
            Obstacle(id="copy", kind="box", center=(60.0, 20.0),
                     half_extents=(20.0, 20.0)),
            Obstacle(id="other", kind="box", center=(220.0, 15.0),
                     half_extents=(15.0, 15.0)),
        ),
        id="novel",
    )
    qd = build_query_density(model, extract_features(novel))
    top5 = sample_grasps(qd, gripper, novel, 300, seed=7, max_candidates=5)
    want = Pose2(60.0, 20.0, -math.pi / 2)
    hit = any(
        math.hypot(c.pose.x - want.x, c.pose.y - want.y) <= 2.0
        and abs(angle_diff(c.pose.theta, want.theta)) <= math.radians(5.0)
        and abs(c.aperture - 48.0) <= 1.0
        for c in top5
    )
    assert hit, "no top-5 candidate recovered the transplanted demonstration"

    wide = Landscape(
        width=340.0, ground_y=0.0, resolution=2.0,
        objects=(Obstacle(id="wide", kind="box", center=(100.0, 20.0),
                          half_extents=(30.0, 20.0)),),
        id="wide",
    )
    qd_w = build_query_density(model, extract_features(wide))
    top5_w = sample_grasps(qd_w, gripper, wide, 300, seed=7, max_candidates=5)
    # 1.5x-wide rectangle: 60 mm between faces plus one link radius each side
    assert any(abs(c.aperture - 68.0) <= 1.0 for c in top5_w), \
        "no candidate adapted its aperture to the wider rectangle"
    _within(t0, 30.0, "criterion 3")


# -- 4: oracle operator closes the loop perfectly -------------------------

def test_criterion_4_oracle_assisted_completes_50_of_50():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(
        operator=SyntheticOperator(kind="oracle"), modes=("assisted",),
        candidate_pool=48, max_candidates=4, n_grasp_samples=250, seed=10,
    )
    model, _ = pinch_demonstration(params=cfg.density)
    done, index = 0, 0
    while done < 50:
        assert index < 200, "ran out of trial indices before 50 feasible trials"
        setup = prepare_trial(cfg, model, index)
        index += 1
        if setup is None:
            continue
        rec = run_trial(cfg, model, setup, "assisted")
        assert rec.outcome.success, f"oracle trial at index {setup.index} failed"
        assert rec.outcome.position_error <= 5.0
        for tl in rec.ticks:
            assert not check_gripper_collision(
                tl.state.pose, tl.state.aperture, model.gripper,
                setup.scene).penetrating, \
                f"penetration at index {setup.index} tick {tl.tick}"
        done += 1
    _within(t0, 60.0, "criterion 4")


# -- 5: paired noisy trials favor assistance ------------------------------

def test_criterion_5_noisy_paired_trials_favor_assistance():
    t0 = time.perf_counter()
    # kappa 0.5 stretches the cost discount window: a distant plan whose
    # time-to-go froze at its closest approach keeps a nontrivial weight, so
    # its saturated cost cannot undercut the plan the operator is following
    cfg = ExperimentConfig(
        operator=SyntheticOperator(kind="noisy-proportional", noise_std=15.0),
        candidate_pool=48, max_candidates=4, n_grasp_samples=250, seed=77,
        assist=AssistParams(kappa=0.5),
    )
    model, _ = pinch_demonstration(params=cfg.density)
    censored = cfg.session.tick_cap * cfg.session.dt

    def t_of(rec):
        return rec.outcome.execution_time if rec.outcome.success else censored

    pairs = []
    index = 0
    while len(pairs) < 100:
        assert index < 250, "ran out of trial indices before 100 feasible pairs"
        setup = prepare_trial(cfg, model, index)
        index += 1
        if setup is None:
            continue
        m = run_trial(cfg, model, setup, "manual")
        a = run_trial(cfg, model, setup, "assisted")
        pairs.append((m, a))

    m_err = [p[0].outcome.position_error for p in pairs]
    a_err = [p[1].outcome.position_error for p in pairs]
    m_t = [t_of(p[0]) for p in pairs]
    a_t = [t_of(p[1]) for p in pairs]
    assert float(np.mean(a_err)) < float(np.mean(m_err)), \
        f"assisted mean error {np.mean(a_err):.3f} not below manual {np.mean(m_err):.3f}"
    assert float(np.mean(a_t)) < float(np.mean(m_t)), \
        f"assisted mean time {np.mean(a_t):.2f} not below manual {np.mean(m_t):.2f}"
    err_frac = float(np.mean([a < m for a, m in zip(a_err, m_err)]))
    t_frac = float(np.mean([a < m for a, m in zip(a_t, m_t)]))
    assert err_frac >= 0.70, f"error improved in only {err_frac:.0%} of pairs"
    assert t_frac >= 0.70, f"time improved in only {t_frac:.0%} of pairs"
    _within(t0, 300.0, "criterion 5")


# -- 6: arbitration recovers from a distracted operator -------------------

def test_criterion_6_arbitration_recovers_from_distraction():
    t0 = time.perf_counter()
    gripper = GripperModel()
    model, _ = pinch_demonstration()
    scene = Landscape(
        width=340.0, ground_y=0.0, resolution=2.0,
        objects=(
            Obstacle(id="left", kind="box", center=(100.0, 20.0),
                     half_extents=(20.0, 20.0)),
            Obstacle(id="right", kind="box", center=(240.0, 20.0),
                     half_extents=(20.0, 20.0)),
        ),
        id="two-towers",
    )
    qd = build_query_density(model, extract_features(scene))
    pool = sample_grasps(qd, gripper, scene, 300, seed=5, max_candidates=64)
    best: dict = {}
    for c in pool:
        best.setdefault(c.object_id, c)
    target, decoy = best["right"], best["left"]

    start = Pose2(170.0, 90.0, -math.pi / 2)
    plans = [plan_trajectory(start, 40.0, c, gripper, scene)
             for c in (decoy, target)]
    params = SessionParams()
    op = SyntheticOperator(kind="distracted-then-corrects",
                           distraction_ticks=30, seed=2)
    policy = OperatorPolicy(op, target, mode="assisted", session=params,
                            gripper=gripper, plan=plans[1], decoy=decoy)
    sess = Session(scene=scene, gripper=gripper, target=target,
                   mode="assisted", start_pose=start, start_aperture=40.0,
                   plans=plans, params=params)
    while not sess.done:
        u, key = policy(sess.state)
        sess.step(u, key)
    rec = sess.record()

    sel = [tl.selected for tl in rec.ticks]
    correction = op.reaction_delay + op.distraction_ticks
    # settled on the decoy while the operator chased it
    assert all(s == decoy.grasp_id for s in sel[correction - 3:correction]), \
        f"decoy never selected before correction (last picks {sel[correction-3:correction]})"
    switched = next(
        (i for i in range(correction, len(sel)) if sel[i] == target.grasp_id),
        None)
    assert switched is not None, "arbitration never switched to the true target"
    assert switched - correction <= 10, \
        f"switch took {switched - correction} ticks after the corrected heading"
    assert all(s == target.grasp_id for s in sel[switched:])
    assert rec.outcome.success, "trial did not complete on the true target"
    _within(t0, 10.0, "criterion 6")


# -- 7: bit-exact replay and run-to-run determinism -----------------------

def test_criterion_7_bit_exact_replay_and_summary_determinism():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(
        n_trials=4,
        operator=SyntheticOperator(kind="noisy-proportional", noise_std=15.0),
        candidate_pool=48, max_candidates=4, n_grasp_samples=250, seed=3,
    )
    model, _ = pinch_demonstration(params=cfg.density)
    setup = next(
        (s for s in (prepare_trial(cfg, model, i) for i in range(20))
         if s is not None), None)
    assert setup is not None, "no feasible trial in the first 20 indices"
    for mode in ("manual", "assisted"):
        rec = run_trial(cfg, model, setup, mode)
        text = rec.to_jsonl()
        parsed = TrialRecord.from_jsonl(text)
        assert replay_trial(parsed).to_jsonl() == text, f"{mode} replay diverged"

    one = run_experiment(cfg)
    two = run_experiment(cfg)
    assert json.dumps(one, sort_keys=True) == json.dumps(two, sort_keys=True)
    _within(t0, 120.0, "criterion 7")


# -- 8: protocol golden transcript and numpad mapping ---------------------

def test_criterion_8_protocol_golden_transcript_and_key_mapping():
    t0 = time.perf_counter()
    assert GOLDEN.exists(), "golden transcript missing"
    assert transcript_lines() == GOLDEN.read_text().splitlines()

    v = 50.0
    assert compose_direction(["8"], v) == (0.0, v)      # up
    assert compose_direction(["2"], v) == (0.0, -v)     # down
    assert compose_direction(["4"], v) == (-v, 0.0)     # left
    assert compose_direction(["6"], v) == (v, 0.0)      # right
    for key, sx, sy in (("7", -1, 1), ("9", 1, 1), ("1", -1, -1), ("3", 1, -1)):
        ux, uy = compose_direction([key], v)
        assert abs(ux - sx * v / math.sqrt(2)) <= 1e-9
        assert abs(uy - sy * v / math.sqrt(2)) <= 1e-9
        assert abs(math.hypot(ux, uy) - v) <= 1e-9      # diagonal not faster
    combo = compose_direction(["4", "8"], v)
    corner = compose_direction(["7"], v)
    assert abs(combo[0] - corner[0]) <= 1e-9
    assert abs(combo[1] - corner[1]) <= 1e-9
    _within(t0, 30.0, "criterion 8")


# -- 9: console contract (runs under the frontend's own harness) ----------

def test_criterion_9_console_contract_suite_is_present():
    root = GOLDEN.parents[2]
    front = root / "frontend"
    tests = sorted(p.name for p in (front / "src").glob("*.test.ts")) \
        if (front / "src").is_dir() else []
    assert tests, (
        "console contract tests not found; they run headless under the "
        "frontend's vitest suite (frontend/src/*.test.ts)")
