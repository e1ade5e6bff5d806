#!/usr/bin/env python3
"""Intent arbitration under a distracted operator.

Two towers, one grasp hypothesis each.  The operator spends its first 30
ticks driving at the wrong tower, then snaps back to its briefed route.
The arbiter has no channel to the operator's mind, only the stick; watch
the selected plan follow the evidence with a short hysteresis lag.
"""

import math

from graspassist import (
    GripperModel,
    Landscape,
    Obstacle,
    OperatorPolicy,
    Pose2,
    Session,
    SessionParams,
    SyntheticOperator,
    build_query_density,
    extract_features,
    pinch_demonstration,
    plan_trajectory,
    sample_grasps,
)

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
best = {}
for c in pool:
    best.setdefault(c.object_id, c)
target, decoy = best["right"], best["left"]
print(f"true target: '{target.object_id}' at ({target.pose.x:.0f}, {target.pose.y:.0f})")
print(f"decoy:       '{decoy.object_id}' at ({decoy.pose.x:.0f}, {decoy.pose.y:.0f})")

start = Pose2(170.0, 90.0, -math.pi / 2)
plans = [plan_trajectory(start, 40.0, c, gripper, scene)
         for c in (decoy, target)]
params = SessionParams()
op = SyntheticOperator(kind="distracted-then-corrects",
                       distraction_ticks=30, seed=2)
policy = OperatorPolicy(op, target, mode="assisted", session=params,
                        gripper=gripper, plan=plans[1], decoy=decoy)
sess = Session(scene=scene, gripper=gripper, target=target, mode="assisted",
               start_pose=start, start_aperture=40.0, plans=plans,
               params=params)

names = {decoy.grasp_id: "decoy ", target.grasp_id: "target"}
last = None
while not sess.done:
    u, key = policy(sess.state)
    st = sess.step(u, key)
    sel = sess.last_debug["selected"]
    if sel != last:
        print(f"  tick {st.tick:4d}: arbiter now backs {names[sel]} "
              f"(operator aiming at "
              f"{'decoy' if st.tick <= op.distraction_ticks else 'target'})")
        last = sel
out = sess.record().outcome
print(f"\ncorrection was at tick {op.distraction_ticks}")
print(f"success={out.success}  error {out.position_error:.3f} mm  "
      f"time {out.execution_time:.2f} s")
