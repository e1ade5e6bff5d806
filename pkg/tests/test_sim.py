import math

import numpy as np
import pytest

from graspassist.se2 import Pose2
from graspassist.scene import Landscape, Obstacle, extract_features, generate_scene
from graspassist.density import (
    CandidateGrasp,
    GripperModel,
    build_query_density,
    learn_contact_model,
    sample_grasps,
)
from graspassist.planner import check_gripper_collision, plan_trajectory
from graspassist.sim import (
    Command,
    PlantState,
    Session,
    SessionParams,
    TrialRecord,
    check_grasp_complete,
    replay_trial,
    step,
)

GRIPPER = GripperModel()
DT = 0.05


def demo_scene():
    return Landscape(
        width=200.0, ground_y=0.0, resolution=2.0,
        objects=(
            Obstacle(id="demo", kind="box", center=(100.0, 20.0),
                     half_extents=(20.0, 20.0)),
        ),
        id="demo-scene",
    )


def two_box_scene():
    return Landscape(
        width=260.0, ground_y=0.0, resolution=2.0,
        objects=(
            Obstacle(id="left", kind="box", center=(60.0, 20.0),
                     half_extents=(20.0, 20.0)),
            Obstacle(id="right", kind="box", center=(190.0, 15.0),
                     half_extents=(15.0, 15.0)),
        ),
        id="two-box",
    )


def demo_grasp():
    return CandidateGrasp(grasp_id=0, pose=Pose2(100.0, 20.0, -math.pi / 2),
                          aperture=48.0, score=1.0, object_id="demo")


def state(x, y, theta, aperture, tick=0):
    return PlantState(pose=Pose2(x, y, theta), aperture=aperture, tick=tick, dt=DT)


# --- plant step ---

def test_zero_command_changes_only_the_tick():
    s0 = state(100.0, 120.0, -math.pi / 2, 40.0)
    s1 = step(s0, Command(velocity=(0.0, 0.0)), demo_scene(), GRIPPER)
    assert s1.pose == s0.pose
    assert s1.aperture == s0.aperture
    assert s1.tick == 1


def test_velocity_integrates_exactly():
    s0 = state(100.0, 120.0, -math.pi / 2, 40.0)
    s1 = step(s0, Command(velocity=(20.0, 0.0)), demo_scene(), GRIPPER)
    assert s1.pose.x == 100.0 + 20.0 * DT
    assert s1.pose.y == 120.0


def test_descent_into_a_box_clamps_at_touching_distance():
    # heading 0 puts the lower finger at (100, y-20); the box top face is at
    # y = 40, so that finger center stops at 44 and the frame at 64
    scene = demo_scene()
    s = state(100.0, 70.0, 0.0, 40.0)
    for _ in range(4):
        s = step(s, Command(velocity=(0.0, -50.0)), scene, GRIPPER)
    assert abs(s.pose.y - 64.0) <= 1e-9
    rep = check_gripper_collision(s.pose, s.aperture, GRIPPER, scene)
    assert not rep.penetrating
    assert abs(rep.worst_separation) <= 1e-6
    # further pushing does not move it
    s2 = step(s, Command(velocity=(0.0, -50.0)), scene, GRIPPER)
    assert abs(s2.pose.y - s.pose.y) <= 1e-12


def test_free_space_steps_are_reversible():
    scene = demo_scene()
    rng = np.random.default_rng(5)
    for _ in range(50):
        s0 = state(rng.uniform(30, 170), rng.uniform(90, 160),
                   rng.uniform(-math.pi, math.pi), rng.uniform(10, 70))
        v = tuple(rng.uniform(-50, 50, 2))
        fwd = step(s0, Command(velocity=v), scene, GRIPPER)
        back = step(fwd, Command(velocity=(-v[0], -v[1])), scene, GRIPPER)
        assert abs(back.pose.x - s0.pose.x) <= 1e-12
        assert abs(back.pose.y - s0.pose.y) <= 1e-12


def test_no_command_sequence_reaches_a_penetrating_state():
    scene = demo_scene()
    rng = np.random.default_rng(17)
    for _ in range(12):
        s = state(rng.uniform(60, 140), rng.uniform(46, 70), 0.0, 30.0)
        if check_gripper_collision(s.pose, s.aperture, GRIPPER, scene).penetrating:
            continue
        for _ in range(40):
            cmd = Command(
                velocity=tuple(rng.uniform(-50, 50, 2)),
                theta=float(rng.uniform(-math.pi, math.pi)) if rng.random() < 0.3 else None,
                aperture=float(rng.uniform(0, 80)) if rng.random() < 0.3 else None,
            )
            s = step(s, cmd, scene, GRIPPER)
            rep = check_gripper_collision(s.pose, s.aperture, GRIPPER, scene)
            assert not rep.penetrating


def test_blocked_heading_snap_is_rejected_and_keeps_the_old_heading():
    # beside the box, heading 0 keeps both fingers clear; snapping to -pi/2
    # would land a finger inside the left face, so the snap must be refused
    scene = demo_scene()
    s = state(70.0, 30.0, 0.0, 20.0)
    assert not check_gripper_collision(s.pose, s.aperture, GRIPPER, scene).penetrating
    s1 = step(s, Command(velocity=(0.0, 0.0), theta=-math.pi / 2), scene, GRIPPER)
    assert s1.pose.theta == 0.0
    # the same snap from further away is accepted
    s = state(60.0, 30.0, 0.0, 20.0)
    s2 = step(s, Command(velocity=(0.0, 0.0), theta=-math.pi / 2), scene, GRIPPER)
    assert s2.pose.theta == -math.pi / 2


def test_aperture_close_clamps_on_the_object_faces():
    # fingers straddling the box: closing from 60 pinches onto the faces at 48
    # (box faces 40 apart plus a link radius on each side)
    scene = demo_scene()
    s = state(100.0, 20.0, -math.pi / 2, 60.0)
    s1 = step(s, Command(velocity=(0.0, 0.0), aperture=0.0), scene, GRIPPER)
    assert abs(s1.aperture - 48.0) <= 1e-6
    assert s1.aperture >= 48.0
    assert not check_gripper_collision(s1.pose, s1.aperture, GRIPPER, scene).penetrating


# --- completion ---

def test_completion_at_the_exact_grasp_configuration():
    rep = check_grasp_complete(state(100.0, 20.0, -math.pi / 2, 48.0),
                               demo_grasp(), GRIPPER, demo_scene())
    assert rep.complete
    assert rep.position_error == 0.0


def test_completion_three_mm_off_with_contacts_held():
    rep = check_grasp_complete(state(100.0, 23.0, -math.pi / 2, 48.0),
                               demo_grasp(), GRIPPER, demo_scene())
    assert rep.complete
    assert abs(rep.position_error - 3.0) <= 1e-12


def test_completion_requires_the_right_object():
    scene = two_box_scene()
    target = CandidateGrasp(grasp_id=0, pose=Pose2(60.0, 20.0, -math.pi / 2),
                            aperture=48.0, score=1.0, object_id="left")
    # a geometrically identical pinch, but on the other box
    rep = check_grasp_complete(state(190.0, 15.0, -math.pi / 2, 38.0),
                               target, GRIPPER, scene)
    assert not rep.complete


def test_completion_requires_both_fingers_in_contact():
    rep = check_grasp_complete(state(100.0, 60.0, -math.pi / 2, 48.0),
                               demo_grasp(), GRIPPER, demo_scene())
    assert not rep.complete


# --- plan execution on the plant ---

def _planned_candidates(scene_seed=42, n=3):
    demo = demo_scene()
    model = learn_contact_model(
        extract_features(demo), Pose2(100.0, 20.0, -math.pi / 2), 48.0, GRIPPER)
    scene = generate_scene(scene_seed)
    qd = build_query_density(model, extract_features(scene))
    cands = sample_grasps(qd, GRIPPER, scene, n_samples=300, seed=3, max_candidates=n)
    return scene, cands


def test_open_loop_plan_execution_lands_on_every_waypoint():
    scene, cands = _planned_candidates()
    start = Pose2(scene.width / 2, 150.0, -math.pi / 2)
    plan = plan_trajectory(start, 40.0, cands[0], GRIPPER, scene)
    s = PlantState(pose=start, aperture=40.0, tick=0, dt=plan.dt)
    for i in range(plan.horizon):
        pose_next, ap_next = plan.waypoints[i + 1]
        cmd = Command(velocity=plan.controls[i], theta=pose_next.theta,
                      aperture=ap_next)
        s = step(s, cmd, scene, GRIPPER)
        assert math.hypot(s.pose.x - pose_next.x, s.pose.y - pose_next.y) <= 1e-9
        assert abs(s.pose.theta - pose_next.theta) <= 1e-9
        assert abs(s.aperture - ap_next) <= 1e-9
    gp = plan.grasp.pose
    assert math.hypot(s.pose.x - gp.x, s.pose.y - gp.y) <= 1e-9


# --- sessions ---

def test_manual_mode_fixes_heading_and_keys_drive_the_aperture():
    sess = Session(scene=demo_scene(), gripper=GRIPPER, target=demo_grasp(),
                   mode="manual", start_pose=Pose2(40.0, 120.0, -math.pi / 2),
                   start_aperture=40.0)
    rate = sess.params.aperture_rate
    s = sess.step((10.0, 0.0), aperture_key=1)
    assert s.pose.theta == -math.pi / 2
    assert abs(s.aperture - (40.0 + rate * DT)) <= 1e-12
    s = sess.step((0.0, 0.0), aperture_key=-1)
    assert abs(s.aperture - 40.0) <= 1e-12
    for _ in range(200):
        s = sess.step((0.0, 0.0), aperture_key=1)
    assert s.aperture == GRIPPER.aperture_max


def test_execution_time_counts_from_the_first_nonzero_input():
    sess = Session(scene=demo_scene(), gripper=GRIPPER, target=demo_grasp(),
                   mode="manual", start_pose=Pose2(100.0, 33.0, -math.pi / 2),
                   start_aperture=48.0)
    for _ in range(3):
        sess.step((0.0, 0.0))
    while not sess.done:
        sess.step((0.0, -50.0))
    out = sess.record().outcome
    assert out.success
    assert abs(out.execution_time - (6 - 3) * DT) <= 1e-12
    assert abs(out.position_error - 3.0) <= 1e-9


def test_session_caps_runaway_trials():
    sess = Session(scene=demo_scene(), gripper=GRIPPER, target=demo_grasp(),
                   mode="manual", start_pose=Pose2(40.0, 120.0, -math.pi / 2),
                   start_aperture=40.0,
                   params=SessionParams(tick_cap=25))
    while not sess.done:
        sess.step((0.0, 0.0))
    out = sess.record().outcome
    assert not out.success
    assert len(sess.record().ticks) == 25


def test_assisted_session_completes_and_replays_bit_exactly():
    scene, cands = _planned_candidates()
    start = Pose2(scene.width / 2, 150.0, -math.pi / 2)
    plans = [plan_trajectory(start, 40.0, c, GRIPPER, scene) for c in cands[:2]]
    sess = Session(scene=scene, gripper=GRIPPER, target=cands[0], mode="assisted",
                   start_pose=start, start_aperture=40.0, plans=plans,
                   scene_seed=42)
    rng = np.random.default_rng(23)
    # noisy operator tracking the intended approach: aims at the upcoming
    # waypoint, not at the grasp through the clutter (far from the grasp the
    # operator term dominates the blend, so a straight pull would wedge the
    # gripper against the corridor wall)
    wp_pos = np.array([[wp.x, wp.y] for wp, _ in plans[0].waypoints])
    while not sess.done:
        pos = np.array([sess.state.pose.x, sess.state.pose.y])
        nxt = min(len(wp_pos) - 1,
                  int(np.argmin(np.hypot(*(wp_pos - pos).T))) + 1)
        d = wp_pos[nxt] - pos
        n = np.linalg.norm(d)
        u = 50.0 * d / n if n > 1e-9 else np.zeros(2)
        sess.step(tuple(u + rng.normal(0.0, 4.0, 2)))
    rec = sess.record()
    assert rec.outcome.success
    assert rec.outcome.position_error <= sess.params.completion_tol

    text = rec.to_jsonl()
    parsed = TrialRecord.from_jsonl(text)
    assert parsed.to_jsonl() == text

    replayed = replay_trial(parsed)
    assert len(replayed.ticks) == len(rec.ticks)
    for a, b in zip(replayed.ticks, rec.ticks):
        assert a.state.pose == b.state.pose
        assert a.state.aperture == b.state.aperture
        assert a.cmd == b.cmd
        assert a.selected == b.selected
    assert replayed.outcome == rec.outcome


def test_manual_session_record_replays_bit_exactly():
    sess = Session(scene=demo_scene(), gripper=GRIPPER, target=demo_grasp(),
                   mode="manual", start_pose=Pose2(100.0, 70.0, -math.pi / 2),
                   start_aperture=60.0, scene_seed=None)
    script = [((0.0, -50.0), 0)] * 12 + [((0.0, 0.0), -1)] * 6
    for u, k in script:
        if sess.done:
            break
        sess.step(u, aperture_key=k)
    rec = sess.record()
    replayed = replay_trial(TrialRecord.from_jsonl(rec.to_jsonl()))
    assert replayed.to_jsonl() == rec.to_jsonl()


def test_session_rejects_bad_mode_and_missing_plans():
    with pytest.raises(ValueError):
        Session(scene=demo_scene(), gripper=GRIPPER, target=demo_grasp(),
                mode="autopilot", start_pose=Pose2(40.0, 120.0, -math.pi / 2),
                start_aperture=40.0)
    with pytest.raises(ValueError):
        Session(scene=demo_scene(), gripper=GRIPPER, target=demo_grasp(),
                mode="assisted", start_pose=Pose2(40.0, 120.0, -math.pi / 2),
                start_aperture=40.0)
