#!/usr/bin/env python3
"""One demonstration in, a reusable contact model out.

Learns the canonical vertical pinch on a lone 40x40 block, then transplants
the model onto a fresh scene with differently sized boxes and asks for grasp
candidates.  The point: nothing about the new scene was demonstrated, the
model carries only where the fingers sat relative to local surface geometry.
"""

import math

from graspassist import (
    Landscape,
    Obstacle,
    build_query_density,
    extract_features,
    pinch_demonstration,
    sample_grasps,
)

model, demo_scene = pinch_demonstration()
print("demonstration scene:", demo_scene.id)
for link, mix in model.links.items():
    print(f"  {link}: {len(mix)} contact kernels")

# a scene the model has never seen: two blocks, different widths and heights
scene = Landscape(
    width=300.0, ground_y=0.0, resolution=2.0,
    objects=(
        Obstacle(id="squat", kind="box", center=(80.0, 12.0),
                 half_extents=(26.0, 12.0)),
        Obstacle(id="slab", kind="box", center=(210.0, 30.0),
                 half_extents=(14.0, 30.0)),
    ),
    id="transplant-demo",
)
qd = build_query_density(model, extract_features(scene))
print(f"\ntransplanted density: {len(qd.mixture)} pose kernels on '{scene.id}'")

candidates = sample_grasps(qd, model.gripper, scene, 250, seed=7,
                           max_candidates=6)
print(f"\ntop {len(candidates)} candidates (pose, aperture, score):")
for c in candidates:
    deg = math.degrees(c.pose.theta)
    print(f"  {c.object_id:>6}  ({c.pose.x:6.1f}, {c.pose.y:5.1f})  "
          f"theta {deg:6.1f} deg  ap {c.aperture:5.1f}  score {c.score:.2e}")
