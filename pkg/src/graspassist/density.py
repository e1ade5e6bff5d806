"""Kernel density machinery on SE(2) x R.

A demonstrated grasp is compressed into per-link contact models: weighted
kernels over the link pose expressed in each nearby surface feature's frame,
paired with that feature's curvature.  On a novel scene the kernels are
transplanted onto every compatible feature, giving per-link query densities
over absolute link poses, from which two-finger grasp candidates are drawn.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .se2 import Pose2, compose_many, inverse_many, wrap_angle, wrap_angles
from .scene import FeatureCloud, Landscape

MODEL_SCHEMA = "grasp-contact-model/1"

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class DensityError(RuntimeError):
    pass


class ContactLearningError(DensityError):
    pass


class EmptyDensityError(DensityError):
    pass


class NoGraspError(DensityError):
    pass


def _normpdf(x, mu, sigma):
    z = (np.asarray(x) - mu) / sigma
    return np.exp(-0.5 * z * z) / (sigma * _SQRT_2PI)


@dataclass(frozen=True)
class DensityParams:
    """Bandwidths and sampling knobs; defaults sized for 2 mm surface sampling."""

    sigma_pos: float = 4.0
    sigma_theta: float = 0.15
    sigma_r: float = 0.02
    cutoff_factor: float = 3.0       # cutoff = factor * link radius
    cutoff_weight: float = 0.01      # pre-normalization weight at the cutoff
    weight_floor: float = 1e-12
    max_query_kernels: int = 200
    aperture_step: float = 1.0
    cluster_pos_tol: float = 2.0
    cluster_theta_tol: float = math.radians(5.0)
    cluster_aperture_tol: float = 1.0
    max_candidates: int = 10

    def to_dict(self) -> dict:
        return {
            "sigma_pos": self.sigma_pos,
            "sigma_theta": self.sigma_theta,
            "sigma_r": self.sigma_r,
            "cutoff_factor": self.cutoff_factor,
            "cutoff_weight": self.cutoff_weight,
            "weight_floor": self.weight_floor,
            "max_query_kernels": self.max_query_kernels,
            "aperture_step": self.aperture_step,
            "cluster_pos_tol": self.cluster_pos_tol,
            "cluster_theta_tol": self.cluster_theta_tol,
            "cluster_aperture_tol": self.cluster_aperture_tol,
            "max_candidates": self.max_candidates,
        }

    @staticmethod
    def from_dict(d: dict) -> "DensityParams":
        return DensityParams(**d)


@dataclass(frozen=True)
class Kernel:
    """One mixture component over (position, heading, curvature)."""

    mu_p: tuple[float, float]
    mu_theta: float
    mu_r: float
    sigma_p: tuple[float, float]
    sigma_theta: float
    sigma_r: float
    weight: float


def eval_kernel(s, kernel: Kernel) -> float:
    """Density of one kernel at s = (x, y, theta, r)."""
    x, y, theta, r = (float(v) for v in s)
    val = _normpdf(x, kernel.mu_p[0], kernel.sigma_p[0])
    val *= _normpdf(y, kernel.mu_p[1], kernel.sigma_p[1])
    val *= _normpdf(wrap_angle(theta - kernel.mu_theta), 0.0, kernel.sigma_theta)
    val *= _normpdf(r, kernel.mu_r, kernel.sigma_r)
    return float(val)


def eval_density(s, mixture) -> float:
    """Weighted sum of kernels at s; mixture must be non-empty."""
    kernels = list(mixture)
    if not kernels:
        raise EmptyDensityError("empty mixture")
    return float(sum(k.weight * eval_kernel(s, k) for k in kernels))


class FeatureMixture:
    """Normalized kernel mixture over (x, y, theta, r), array-backed."""

    def __init__(self, means, sigmas, weights):
        self.means = np.asarray(means, dtype=float)        # (K, 4)
        self.sigmas = np.asarray(sigmas, dtype=float)      # (K, 4)
        self.weights = np.asarray(weights, dtype=float)    # (K,)
        if self.means.ndim != 2 or self.means.shape[1] != 4:
            raise ValueError("means must be (K, 4)")
        if len(self.weights) == 0:
            raise EmptyDensityError("empty mixture")

    def __len__(self):
        return len(self.weights)

    def evaluate(self, samples) -> np.ndarray:
        """Density at samples (..., 4)."""
        s = np.asarray(samples, dtype=float)[..., None, :]  # (..., 1, 4)
        resid = s - self.means
        resid[..., 2] = wrap_angles(resid[..., 2])
        z = resid / self.sigmas
        log_norm = np.sum(np.log(self.sigmas * _SQRT_2PI), axis=-1)
        vals = np.exp(-0.5 * np.sum(z * z, axis=-1) - log_norm)
        return vals @ self.weights

    def kernels(self) -> list[Kernel]:
        return [
            Kernel(
                mu_p=(self.means[j, 0], self.means[j, 1]),
                mu_theta=self.means[j, 2],
                mu_r=self.means[j, 3],
                sigma_p=(self.sigmas[j, 0], self.sigmas[j, 1]),
                sigma_theta=self.sigmas[j, 2],
                sigma_r=self.sigmas[j, 3],
                weight=self.weights[j],
            )
            for j in range(len(self))
        ]


class PoseMixture:
    """Normalized kernel mixture over absolute poses (x, y, theta)."""

    def __init__(self, means, sigmas, weights):
        self.means = np.asarray(means, dtype=float)
        self.sigmas = np.asarray(sigmas, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        if len(self.weights) == 0:
            raise EmptyDensityError("empty mixture")

    def __len__(self):
        return len(self.weights)

    def evaluate(self, poses) -> np.ndarray:
        s = np.asarray(poses, dtype=float)[..., None, :]
        resid = s - self.means
        resid[..., 2] = wrap_angles(resid[..., 2])
        z = resid / self.sigmas
        log_norm = np.sum(np.log(self.sigmas * _SQRT_2PI), axis=-1)
        vals = np.exp(-0.5 * np.sum(z * z, axis=-1) - log_norm)
        return vals @ self.weights

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(self), size=n, p=self.weights / self.weights.sum())
        noise = rng.standard_normal((n, 3)) * self.sigmas[idx]
        out = self.means[idx] + noise
        out[:, 2] = wrap_angles(out[:, 2])
        return out


@dataclass(frozen=True)
class GripperModel:
    """Two spherical fingers on a parallel jaw, separated by the aperture.

    The gripper frame sits midway between the links; the frame heading points
    along the approach direction, perpendicular to the link-to-link axis.
    Link L1 sits at local (0, +aperture/2), L2 at local (0, -aperture/2).
    """

    link_radius: float = 4.0
    aperture_min: float = 0.0
    aperture_max: float = 80.0

    LINKS = ("L1", "L2")

    def __post_init__(self):
        if self.link_radius <= 0:
            raise ValueError("link radius must be > 0")
        if self.aperture_min < 0 or self.aperture_min > self.aperture_max:
            raise ValueError("bad aperture range")

    def link_offset(self, link: str, aperture: float) -> Pose2:
        sign = {"L1": 0.5, "L2": -0.5}[link]
        return Pose2(0.0, sign * aperture, 0.0)

    def link_poses(self, pose: Pose2, aperture: float) -> dict[str, Pose2]:
        return {name: pose.compose(self.link_offset(name, aperture)) for name in self.LINKS}

    def finger_axis(self, theta):
        """World direction from L2 toward L1 (the local +y axis)."""
        return np.stack([-np.sin(theta), np.cos(theta)], axis=-1)

    def finger_centers(self, poses, apertures):
        """Both finger centres for pose arrays (..., 3) and aperture arrays (...)."""
        poses = np.asarray(poses, dtype=float)
        a = np.asarray(apertures, dtype=float)[..., None]
        axis = self.finger_axis(poses[..., 2])
        c1 = poses[..., :2] + 0.5 * a * axis
        c2 = poses[..., :2] - 0.5 * a * axis
        return c1, c2

    def to_dict(self) -> dict:
        return {
            "link_radius": self.link_radius,
            "aperture_min": self.aperture_min,
            "aperture_max": self.aperture_max,
        }

    @staticmethod
    def from_dict(d: dict) -> "GripperModel":
        return GripperModel(**d)


@dataclass
class ContactModel:
    """Per-link kernel mixtures in contact-relative coordinates."""

    gripper: GripperModel
    params: DensityParams
    cutoff: float
    lam: float
    demo_aperture: float
    links: dict[str, FeatureMixture]

    def to_dict(self) -> dict:
        return {
            "schema": MODEL_SCHEMA,
            "gripper": self.gripper.to_dict(),
            "params": self.params.to_dict(),
            "cutoff": self.cutoff,
            "lam": self.lam,
            "demo_aperture": self.demo_aperture,
            "links": {
                name: {
                    "means": mix.means.tolist(),
                    "sigmas": mix.sigmas.tolist(),
                    "weights": mix.weights.tolist(),
                }
                for name, mix in self.links.items()
            },
        }

    @staticmethod
    def from_dict(d: dict) -> "ContactModel":
        if d.get("schema") != MODEL_SCHEMA:
            raise ValueError(f"unsupported model schema {d.get('schema')!r}")
        return ContactModel(
            gripper=GripperModel.from_dict(d["gripper"]),
            params=DensityParams.from_dict(d["params"]),
            cutoff=d["cutoff"],
            lam=d["lam"],
            demo_aperture=d["demo_aperture"],
            links={
                name: FeatureMixture(v["means"], v["sigmas"], v["weights"])
                for name, v in d["links"].items()
            },
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @staticmethod
    def load(path) -> "ContactModel":
        return ContactModel.from_dict(json.loads(Path(path).read_text()))


def learn_contact_model(
    demo_scene: FeatureCloud,
    demo_pose: Pose2,
    demo_aperture: float,
    gripper: GripperModel,
    params: DensityParams | None = None,
) -> ContactModel:
    """Build per-link contact models from a single demonstrated grasp.

    Each feature within the cutoff of a link surface contributes one kernel
    whose mean is the link pose in that feature's frame plus the feature's
    curvature, weighted by exp(-lam * d^2) in the surface distance d.
    """
    params = params or DensityParams()
    cutoff = params.cutoff_factor * gripper.link_radius
    lam = math.log(1.0 / params.cutoff_weight) / cutoff**2
    feat_poses = demo_scene.pose_array()
    feat_r = demo_scene.descriptor_array()
    links: dict[str, FeatureMixture] = {}
    for name, link_pose in gripper.link_poses(demo_pose, demo_aperture).items():
        dist = np.hypot(feat_poses[:, 0] - link_pose.x, feat_poses[:, 1] - link_pose.y)
        surf = dist - gripper.link_radius
        in_range = surf <= cutoff
        if not np.any(in_range):
            raise ContactLearningError(f"no surface features within cutoff of link {name}")
        z = compose_many(inverse_many(feat_poses[in_range]), link_pose.as_vector())
        w = np.exp(-lam * np.maximum(surf[in_range], 0.0) ** 2)
        means = np.column_stack([z, feat_r[in_range]])
        sigmas = np.tile(
            [params.sigma_pos, params.sigma_pos, params.sigma_theta, params.sigma_r],
            (len(means), 1),
        )
        links[name] = FeatureMixture(means, sigmas, w / w.sum())
    return ContactModel(
        gripper=gripper,
        params=params,
        cutoff=cutoff,
        lam=lam,
        demo_aperture=demo_aperture,
        links=links,
    )


@dataclass
class QueryDensity:
    """Per-link mixtures over absolute link poses on one scene."""

    links: dict[str, PoseMixture]
    scene_id: str
    params: DensityParams


def build_query_density(model: ContactModel, scene: FeatureCloud) -> QueryDensity:
    """Transplant contact kernels onto every curvature-compatible scene feature."""
    params = model.params
    feat_poses = scene.pose_array()
    feat_r = scene.descriptor_array()
    links: dict[str, PoseMixture] = {}
    for name, mix in model.links.items():
        # kernel at v ∘ z for every (feature v, contact kernel z) pair
        transplanted = compose_many(feat_poses[:, None, :], mix.means[None, :, :3])
        likelihood = _normpdf(feat_r[:, None], mix.means[None, :, 3], params.sigma_r)
        w = (mix.weights[None, :] * likelihood).ravel()
        total = w.sum()
        if total < params.weight_floor:
            raise EmptyDensityError(
                f"scene {scene.scene_id} has no surfaces resembling the demo for {name}"
            )
        flat = transplanted.reshape(-1, 3)
        # distinct pairs often land on the same world pose (a sliding contact
        # re-discovered from each feature along the face); pool their mass
        # before the kernel budget is applied, otherwise the cut keeps an
        # arbitrary subset of each pile and warps the density wherever a pile
        # straddles the cutoff
        key = np.round(
            np.column_stack([flat[:, :2], np.cos(flat[:, 2]), np.sin(flat[:, 2])]), 6
        )
        _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
        pooled_w = np.zeros(len(first))
        np.add.at(pooled_w, inverse, w)
        flat, w = flat[first], pooled_w
        order = np.argsort(-w, kind="stable")[: params.max_query_kernels]
        kept_w = w[order]
        sigmas = np.tile(
            [params.sigma_pos, params.sigma_pos, params.sigma_theta], (len(order), 1)
        )
        links[name] = PoseMixture(flat[order], sigmas, kept_w / kept_w.sum())
    return QueryDensity(links=links, scene_id=scene.scene_id, params=params)


@dataclass(frozen=True)
class CandidateGrasp:
    grasp_id: int
    pose: Pose2
    aperture: float
    score: float
    object_id: str

    def to_dict(self) -> dict:
        return {
            "grasp_id": self.grasp_id,
            "pose": [self.pose.x, self.pose.y, self.pose.theta],
            "aperture": self.aperture,
            "score": self.score,
            "object_id": self.object_id,
        }

    @staticmethod
    def from_dict(d: dict) -> "CandidateGrasp":
        return CandidateGrasp(
            grasp_id=d["grasp_id"],
            pose=Pose2.from_vector(d["pose"]),
            aperture=d["aperture"],
            score=d["score"],
            object_id=d["object_id"],
        )


def _refine_to_contact(pose_vec, gripper: GripperModel, obstacle, scene: Landscape):
    """Close the fingers symmetrically about the target until both touch.

    Returns (pose, aperture) with both fingers in exact contact with the
    target obstacle, or None when the object does not lie between the fingers
    or the refined configuration is invalid.
    """
    p = pose_vec[:2]
    axis = np.array([-math.sin(pose_vec[2]), math.cos(pose_vec[2])])
    r = gripper.link_radius

    def sep(t):
        return float(obstacle.signed_distance(p + axis * t)) - r

    if sep(0.0) >= 0.0:
        return None
    reach = gripper.aperture_max / 2 + r

    def contact_coord(direction):
        lo, hi = 0.0, reach
        if sep(direction * hi) <= 0.0:
            return None
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if sep(direction * mid) <= 0.0:
                lo = mid
            else:
                hi = mid
        return hi

    t_plus = contact_coord(1.0)
    t_minus = contact_coord(-1.0)
    if t_plus is None or t_minus is None:
        return None
    aperture = t_plus + t_minus
    if not (gripper.aperture_min <= aperture <= gripper.aperture_max):
        return None
    center = p + axis * (t_plus - t_minus) / 2
    refined = np.array([center[0], center[1], pose_vec[2]])
    c1, c2 = gripper.finger_centers(refined, aperture)
    worst = min(scene.separations(c1, r).min(), scene.separations(c2, r).min())
    if worst < -1e-9:
        return None
    return Pose2.from_vector(refined), float(aperture)


def sample_grasps(
    qd: QueryDensity,
    gripper: GripperModel,
    scene: Landscape,
    n_samples: int,
    seed: int,
    max_candidates: int | None = None,
) -> list[CandidateGrasp]:
    """Draw grasp candidates scored by the product of both link densities.

    L1 poses are drawn from the L1 query density (the kernel means are kept in
    the proposal set so the demonstrated configuration itself is always
    reachable); apertures are enumerated on a fixed grid, each implying the L2
    pose and gripper frame.  Penetrating configurations are rejected, headings
    folded into a canonical half-turn (the fingers are interchangeable), the
    survivors clustered, and the per-cluster best returned in score order.
    """
    params = qd.params
    if max_candidates is None:
        max_candidates = params.max_candidates
    m1, m2 = qd.links["L1"], qd.links["L2"]
    rng = np.random.default_rng(seed)
    l1 = np.vstack([m1.sample(n_samples, rng), m1.means])
    apertures = np.arange(
        gripper.aperture_min,
        gripper.aperture_max + params.aperture_step / 2,
        params.aperture_step,
    )
    n_p, n_a = len(l1), len(apertures)
    # l2 = l1 ∘ (0, -a, 0); gripper frame = l1 ∘ (0, -a/2, 0)
    offsets = np.zeros((n_a, 3))
    offsets[:, 1] = -apertures
    l2 = compose_many(l1[:, None, :], offsets[None, :, :])
    half = offsets.copy()
    half[:, 1] /= 2
    frames = compose_many(l1[:, None, :], half[None, :, :])

    score = m1.evaluate(l1)[:, None] * m2.evaluate(l2.reshape(-1, 3)).reshape(n_p, n_a)
    c1, c2 = gripper.finger_centers(
        frames.reshape(-1, 3), np.broadcast_to(apertures, (n_p, n_a)).reshape(-1)
    )
    sep1 = scene.separations(c1, gripper.link_radius).min(axis=-1)
    sep2 = scene.separations(c2, gripper.link_radius).min(axis=-1)
    ok = (np.minimum(sep1, sep2).reshape(n_p, n_a) >= -1e-9) & (score > 0.0)
    if not np.any(ok):
        raise NoGraspError(f"no collision-free grasp survived on scene {qd.scene_id}")

    flat_idx = np.flatnonzero(ok.ravel())
    flat_frames = frames.reshape(-1, 3)[flat_idx]
    flat_ap = np.broadcast_to(apertures, (n_p, n_a)).reshape(-1)[flat_idx]
    flat_score = score.ravel()[flat_idx]
    # the fingers are interchangeable, so theta and theta+pi describe the same
    # pinch; fold headings into [-pi, 0) so the duplicates cluster together
    mirrored = flat_frames[:, 2] >= 0.0
    flat_frames[mirrored, 2] = wrap_angles(flat_frames[mirrored, 2] + math.pi)
    # score-descending with lexicographic (x, y, theta, aperture) tie-break
    order = np.lexsort(
        (flat_ap, flat_frames[:, 2], flat_frames[:, 1], flat_frames[:, 0], -flat_score)
    )

    # the budget counts refined candidates, not raw clusters: refinement snaps
    # nearby clusters onto the same contact pose, and spending the budget
    # before the snap would return far fewer grasps than asked for while
    # lower-scored objects never reach a slot
    kept: list[tuple[np.ndarray, float]] = []
    candidates: list[CandidateGrasp] = []
    seen: set[tuple] = set()
    for i in order:
        fr, ap, sc = flat_frames[i], flat_ap[i], flat_score[i]
        clustered = False
        for kfr, kap in kept:
            if (
                np.hypot(fr[0] - kfr[0], fr[1] - kfr[1]) <= params.cluster_pos_tol
                and abs(wrap_angle(fr[2] - kfr[2])) <= params.cluster_theta_tol
                and abs(ap - kap) <= params.cluster_aperture_tol
            ):
                clustered = True
                break
        if clustered:
            continue
        kept.append((fr, float(ap)))
        pose = Pose2.from_vector(fr)
        target = None
        for obs in scene.objects:
            if obs.contains(fr[:2]):
                target = obs
                break
        if target is not None:
            refined = _refine_to_contact(fr, gripper, target, scene)
            if refined is not None:
                pose, ap = refined
        if target is None:
            # fall back to the nearest obstacle
            dists = [float(o.signed_distance(fr[:2])) for o in scene.objects]
            target = scene.objects[int(np.argmin(dists))]
        key = (round(pose.x, 6), round(pose.y, 6), round(pose.theta, 6), round(ap, 6))
        if key in seen:
            continue
        seen.add(key)
        candidates.append(
            CandidateGrasp(
                grasp_id=len(candidates),
                pose=pose,
                aperture=float(ap),
                score=float(sc),
                object_id=target.id,
            )
        )
        if len(candidates) >= max_candidates:
            break
    return candidates
