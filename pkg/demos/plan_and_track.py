#!/usr/bin/env python3
"""Plan a reach-to-grasp line and watch the assisted session fly it.

A single block, one sampled grasp, one plan.  The operator is the oracle
(replays the plan's own feedforward), so any deviation you see in the trace
is the controller's doing, not the human's.  The last column is the blend:
near 0 the operator owns the motion, near 1 the controller does.
"""

import math

from graspassist import (
    OperatorPolicy,
    Session,
    SessionParams,
    SyntheticOperator,
    Pose2,
    build_query_density,
    extract_features,
    pinch_demonstration,
    plan_trajectory,
    sample_grasps,
)

model, scene = pinch_demonstration()
qd = build_query_density(model, extract_features(scene))
target = sample_grasps(qd, model.gripper, scene, 200, seed=3,
                       max_candidates=1)[0]
print(f"target grasp: ({target.pose.x:.1f}, {target.pose.y:.1f}) "
      f"aperture {target.aperture:.1f}")

start = Pose2(40.0, 120.0, -math.pi / 2)
plan = plan_trajectory(start, 40.0, target, model.gripper, scene)
print(f"plan: {plan.horizon} steps, "
      f"{plan.horizon * 0.05:.2f}s nominal duration\n")

params = SessionParams()
op = SyntheticOperator(kind="oracle")
policy = OperatorPolicy(op, target, mode="assisted", session=params,
                        gripper=model.gripper, plan=plan)
sess = Session(scene=scene, gripper=model.gripper, target=target,
               mode="assisted", start_pose=start, start_aperture=40.0,
               plans=[plan], params=params)

print(" tick  position          aperture  time-to-go  blend")
while not sess.done:
    u, key = policy(sess.state)
    st = sess.step(u, key)
    d = sess.last_debug
    if st.tick % 10 == 0 or sess.done:
        print(f" {st.tick:4d}  ({st.pose.x:6.1f}, {st.pose.y:6.1f})  "
              f"{st.aperture:7.1f}  {d['tau']:10d}  {d['alpha']:.3f}")

out = sess.record().outcome
print(f"\nsuccess={out.success}  final error {out.position_error:.3f} mm  "
      f"time {out.execution_time:.2f} s")
