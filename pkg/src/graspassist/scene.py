"""Random 2D clutter landscapes and surface-feature extraction.

A landscape is a skyline of rectangles resting on a ground line, with an
optional disc type used by curvature tests.  Features are boundary samples
carrying an outward-normal frame and a turning-rate curvature descriptor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .se2 import Pose2, rotate_many, wrap_angles

SCENE_SCHEMA = "grasp-scene/1"


class SceneGenerationError(RuntimeError):
    pass


class FeatureExtractionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Obstacle:
    """A solid primitive: axis-aligned box (optionally rotated) or disc."""

    id: str
    kind: str  # "box" | "disc"
    center: tuple[float, float]
    half_extents: tuple[float, float] | None = None
    radius: float | None = None
    rotation: float = 0.0

    def __post_init__(self):
        if self.kind == "box":
            if self.half_extents is None:
                raise ValueError("box obstacle needs half_extents")
        elif self.kind == "disc":
            if self.radius is None:
                raise ValueError("disc obstacle needs radius")
        else:
            raise ValueError(f"unknown obstacle kind {self.kind!r}")

    def perimeter(self) -> float:
        if self.kind == "box":
            hw, hh = self.half_extents
            return 4.0 * (hw + hh)
        return 2.0 * math.pi * self.radius

    def top(self) -> float:
        if self.kind == "box":
            hw, hh = self.half_extents
            if self.rotation == 0.0:
                return self.center[1] + hh
            # loose bound for rotated boxes
            return self.center[1] + math.hypot(hw, hh)
        return self.center[1] + self.radius

    def signed_distance(self, points) -> np.ndarray:
        """Signed distance to the boundary, negative inside.  points: (..., 2)."""
        pts = np.asarray(points, dtype=float)
        rel_x = pts[..., 0] - self.center[0]
        rel_y = pts[..., 1] - self.center[1]
        if self.kind == "disc":
            return np.hypot(rel_x, rel_y) - self.radius
        if self.rotation != 0.0:
            rel_x, rel_y = rotate_many(-self.rotation, rel_x, rel_y)
        hw, hh = self.half_extents
        dx = np.abs(rel_x) - hw
        dy = np.abs(rel_y) - hh
        outside = np.hypot(np.maximum(dx, 0.0), np.maximum(dy, 0.0))
        inside = np.minimum(np.maximum(dx, dy), 0.0)
        return outside + inside

    def contains(self, points) -> np.ndarray:
        return self.signed_distance(points) < 0.0

    def boundary_points(self, spacing: float) -> np.ndarray:
        """Evenly spaced samples along the boundary, ordered counter-clockwise."""
        n = max(int(round(self.perimeter() / spacing)), 4)
        s = np.arange(n) * (self.perimeter() / n)
        if self.kind == "disc":
            ang = s / self.radius
            local = np.stack([self.radius * np.cos(ang), self.radius * np.sin(ang)], axis=1)
        else:
            hw, hh = self.half_extents
            local = np.empty((n, 2))
            w, h = 2 * hw, 2 * hh
            for i, si in enumerate(s):
                if si < w:  # bottom edge, left to right
                    local[i] = (-hw + si, -hh)
                elif si < w + h:  # right edge, up
                    local[i] = (hw, -hh + (si - w))
                elif si < 2 * w + h:  # top edge, right to left
                    local[i] = (hw - (si - w - h), hh)
                else:  # left edge, down
                    local[i] = (-hw, hh - (si - 2 * w - h))
        if self.rotation != 0.0:
            x, y = rotate_many(self.rotation, local[:, 0], local[:, 1])
            local = np.stack([x, y], axis=1)
        return local + np.asarray(self.center)

    def to_dict(self) -> dict:
        d = {"id": self.id, "kind": self.kind, "center": list(self.center), "rotation": self.rotation}
        if self.kind == "box":
            d["half_extents"] = list(self.half_extents)
        else:
            d["radius"] = self.radius
        return d

    @staticmethod
    def from_dict(d: dict) -> "Obstacle":
        return Obstacle(
            id=d["id"],
            kind=d["kind"],
            center=tuple(d["center"]),
            half_extents=tuple(d["half_extents"]) if "half_extents" in d else None,
            radius=d.get("radius"),
            rotation=d.get("rotation", 0.0),
        )


@dataclass(frozen=True)
class Landscape:
    width: float
    ground_y: float
    resolution: float
    objects: tuple[Obstacle, ...]
    id: str = "scene"

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")
        if not self.objects:
            raise ValueError("landscape needs at least one object")
        object.__setattr__(self, "objects", tuple(self.objects))

    def obstacle(self, object_id: str) -> Obstacle:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise KeyError(object_id)

    def skyline_top(self) -> float:
        return max(o.top() for o in self.objects)

    def occupied(self, points) -> np.ndarray:
        """True where a point is strictly inside any obstacle or below ground."""
        pts = np.asarray(points, dtype=float)
        occ = pts[..., 1] < self.ground_y
        for o in self.objects:
            occ = occ | o.contains(pts)
        return occ

    def separations(self, centers, link_radius: float) -> np.ndarray:
        """Surface separation of circles vs every obstacle plus the ground.

        centers: (..., 2).  Returns (..., n_objects + 1); last column is ground.
        Negative means penetration.
        """
        pts = np.asarray(centers, dtype=float)
        cols = [o.signed_distance(pts) - link_radius for o in self.objects]
        cols.append(pts[..., 1] - self.ground_y - link_radius)
        return np.stack(cols, axis=-1)

    def to_dict(self) -> dict:
        return {
            "schema": SCENE_SCHEMA,
            "id": self.id,
            "width": self.width,
            "ground_y": self.ground_y,
            "resolution": self.resolution,
            "objects": [o.to_dict() for o in self.objects],
        }

    @staticmethod
    def from_dict(d: dict) -> "Landscape":
        if d.get("schema") != SCENE_SCHEMA:
            raise ValueError(f"unsupported scene schema {d.get('schema')!r}")
        return Landscape(
            width=d["width"],
            ground_y=d["ground_y"],
            resolution=d["resolution"],
            objects=tuple(Obstacle.from_dict(o) for o in d["objects"]),
            id=d.get("id", "scene"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @staticmethod
    def load(path) -> "Landscape":
        return Landscape.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SceneParams:
    """Knobs for the rejection-sampling scene generator."""

    min_objects: int = 3
    max_objects: int = 4
    width_range: tuple[float, float] = (20.0, 50.0)
    height_range: tuple[float, float] = (20.0, 60.0)
    scene_width: float = 340.0
    min_gap: float = 16.0
    edge_margin: float = 10.0
    resolution: float = 2.0
    ground_y: float = 0.0
    max_attempts: int = 200

    def validate(self) -> None:
        if not (1 <= self.min_objects <= self.max_objects):
            raise SceneGenerationError("bad object count range")
        if self.width_range[0] <= 0 or self.width_range[0] > self.width_range[1]:
            raise SceneGenerationError("bad width range")
        if self.height_range[0] <= 0 or self.height_range[0] > self.height_range[1]:
            raise SceneGenerationError("bad height range")
        if self.width_range[1] + 2 * self.edge_margin > self.scene_width:
            raise SceneGenerationError("objects may be wider than the scene allows")


def generate_scene(seed: int, params: SceneParams | None = None) -> Landscape:
    """Deterministically place non-overlapping boxes on the ground line."""
    params = params or SceneParams()
    params.validate()
    rng = np.random.default_rng(seed)
    count = int(rng.integers(params.min_objects, params.max_objects + 1))
    intervals: list[tuple[float, float]] = []
    objects = []
    for i in range(count):
        placed = False
        for _ in range(params.max_attempts):
            w = float(rng.uniform(*params.width_range))
            h = float(rng.uniform(*params.height_range))
            hw, hh = w / 2, h / 2
            x = float(rng.uniform(params.edge_margin + hw, params.scene_width - params.edge_margin - hw))
            lo, hi = x - hw - params.min_gap, x + hw + params.min_gap
            if all(hi <= a or lo >= b for a, b in intervals):
                intervals.append((x - hw, x + hw))
                objects.append(
                    Obstacle(
                        id=f"obj{i}",
                        kind="box",
                        center=(x, params.ground_y + hh),
                        half_extents=(hw, hh),
                    )
                )
                placed = True
                break
        if not placed:
            raise SceneGenerationError(
                f"could not place object {i} after {params.max_attempts} attempts"
            )
    return Landscape(
        width=params.scene_width,
        ground_y=params.ground_y,
        resolution=params.resolution,
        objects=tuple(objects),
        id=f"scene-{seed}",
    )


@dataclass(frozen=True)
class SurfaceFeature:
    """Boundary sample: outward-normal frame plus curvature descriptor."""

    v: Pose2
    r: float
    object_id: str


@dataclass
class FeatureCloud:
    features: list[SurfaceFeature]
    scene_id: str
    _poses: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.features:
            raise FeatureExtractionError("empty feature cloud")

    def __len__(self) -> int:
        return len(self.features)

    def pose_array(self) -> np.ndarray:
        """(N, 3) array of feature frames [x, y, theta]."""
        if self._poses is None:
            self._poses = np.array([[f.v.x, f.v.y, f.v.theta] for f in self.features])
        return self._poses

    def descriptor_array(self) -> np.ndarray:
        return np.array([f.r for f in self.features])

    def object_ids(self) -> list[str]:
        return [f.object_id for f in self.features]


def extract_features(
    scene: Landscape,
    k: int = 7,
    r_max: float = 1.0,
) -> FeatureCloud:
    """Sample every object boundary and attach PCA normals and curvature.

    The neighbourhood of a sample is its k nearest along the boundary loop
    (identical to Euclidean k-nearest at this sampling density).  The normal
    is the minor principal axis of the neighbourhood, signed into free space;
    curvature is the chord turning angle per unit arc over the same window.
    """
    if k < 3:
        raise FeatureExtractionError("k must be at least 3")
    half = k // 2
    eps = scene.resolution * 0.5
    features: list[SurfaceFeature] = []
    for obs in scene.objects:
        pts = obs.boundary_points(scene.resolution)
        n = len(pts)
        if n < k:
            raise FeatureExtractionError(f"object {obs.id} has {n} boundary points, need {k}")
        idx = np.arange(n)
        window = (idx[:, None] + np.arange(-half, half + 1)[None, :]) % n
        neigh = pts[window]  # (n, k, 2)
        centered = neigh - neigh.mean(axis=1, keepdims=True)
        # 2x2 covariance entries per window
        a = np.einsum("ij,ij->i", centered[:, :, 0], centered[:, :, 0])
        b = np.einsum("ij,ij->i", centered[:, :, 0], centered[:, :, 1])
        c = np.einsum("ij,ij->i", centered[:, :, 1], centered[:, :, 1])
        tangent_angle = 0.5 * np.arctan2(2 * b, a - c)  # major axis
        normal_angle = wrap_angles(tangent_angle + math.pi / 2)
        nx, ny = np.cos(normal_angle), np.sin(normal_angle)
        probe_plus = pts + eps * np.stack([nx, ny], axis=1)
        probe_minus = pts - eps * np.stack([nx, ny], axis=1)
        plus_occ = scene.occupied(probe_plus)
        minus_occ = scene.occupied(probe_minus)
        flip = plus_occ & ~minus_occ
        # both probes blocked (e.g. bottom edge on the ground): sign away from centroid
        ambiguous = plus_occ & minus_occ | ~plus_occ & ~minus_occ
        if np.any(ambiguous):
            away = pts - np.asarray(obs.center)
            flip = np.where(ambiguous, nx * away[:, 0] + ny * away[:, 1] < 0, flip)
        normal_angle = wrap_angles(np.where(flip, normal_angle + math.pi, normal_angle))

        prev_pt, next_pt = pts[(idx - half) % n], pts[(idx + half) % n]
        chord_in = pts - prev_pt
        chord_out = next_pt - pts
        turn = wrap_angles(
            np.arctan2(chord_out[:, 1], chord_out[:, 0])
            - np.arctan2(chord_in[:, 1], chord_in[:, 0])
        )
        seg = np.linalg.norm(pts - pts[(idx - 1) % n], axis=1)
        # arc length of the window, symmetric about the sample
        arc = np.zeros(n)
        for step in range(-half + 1, half + 1):
            arc += seg[(idx + step) % n]
        curvature = np.minimum(np.abs(turn) / (arc / 2), r_max)

        for i in range(n):
            features.append(
                SurfaceFeature(
                    v=Pose2(pts[i, 0], pts[i, 1], normal_angle[i]),
                    r=float(curvature[i]),
                    object_id=obs.id,
                )
            )
    return FeatureCloud(features=features, scene_id=scene.id)
