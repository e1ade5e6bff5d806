"""Straight-line reach-to-grasp planning over a cluttered skyline.

A plan is a waypoint sequence from the current gripper configuration to a
candidate grasp: positions spaced along the connecting line with the last
stretch straightened onto the grasp approach axis, headings interpolated by
the shortest angular path, apertures scheduled so the swept gripper never
penetrates.  Execution (and validation here) follows a
three-phase step: translate at the held configuration, snap the heading at the
new position, then move the aperture.  Each phase moves the finger circles
affinely, so the separation from any one obstacle is convex in the motion
parameter and penetration checks reduce to a minimum plus an entry root.

Waypoints are indexed by time-to-go: tau = horizon at the start, tau = 0 at
the grasp, so the final close onto the object happens at the grasp position
where it lands symmetrically on the target faces.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .density import CandidateGrasp, GripperModel
from .scene import Landscape
from .se2 import Pose2, angle_diff, wrap_angle


class PlanningError(Exception):
    """No collision-free waypoint schedule exists; the message names which."""


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

FREE = "free"
TOUCHING = "touching"
PENETRATING = "penetrating"


def max_free_fraction(scene: Landscape, centers, deltas, radius: float,
                      tol: float = 1e-9) -> float:
    """Largest fraction t of the motion centers + t*deltas with no penetration.

    Every circle moves affinely, so its separation from each obstacle (and the
    ground) is convex in t: the feasible prefix ends at the earliest pair's
    entry root, located by a golden-section minimum and then bisection.
    Exactly 1.0 comes back when nothing blocks, so an unclamped motion is
    detectable by equality.  Resting contact (separation ~ 0) does not block
    tangential sliding; it only pins motion that would deepen it.
    """
    centers = np.asarray(centers, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    if centers.ndim == 1:
        centers = centers[None, :]
        deltas = deltas[None, :]
    k = centers.shape[0]

    # coarse scan with a certified lower bound per grid interval: separation is
    # convex in t, so on [t_i, t_i+1] it stays above both supporting lines
    # g[i] + min(0, s[i-1]) * h and g[i+1] - max(0, s[i+1]) * h built from the
    # neighbour secant slopes (1-Lipschitz in position caps the edge intervals,
    # where one neighbour is missing).  A flat touching profile bounds at its
    # own grid values, so tangential sliding needs no refinement at all.
    n_grid = 33
    h = 1.0 / (n_grid - 1)
    ts = np.linspace(0.0, 1.0, n_grid)
    pts = centers[:, None, :] + ts[None, :, None] * deltas[:, None, :]
    grid = scene.separations(pts, radius)          # (k, n_grid, n_cols)
    speed = np.hypot(deltas[:, 0], deltas[:, 1])
    slopes = np.diff(grid, axis=1) / h             # (k, n_grid-1, n_cols)
    lower = np.minimum(grid[:, :-1, :], grid[:, 1:, :]) \
        - 0.5 * h * speed[:, None, None]
    lower[:, 1:, :] = np.maximum(
        lower[:, 1:, :], grid[:, 1:-1, :] + h * np.minimum(0.0, slopes[:, :-1, :]))
    lower[:, :-1, :] = np.maximum(
        lower[:, :-1, :], grid[:, 1:-1, :] - h * np.maximum(0.0, slopes[:, 1:, :]))
    suspect = lower.min(axis=1) - 1e-12 < -tol     # (k, n_cols)
    if not suspect.any():
        return 1.0

    ks, js = np.nonzero(suspect)                   # m flagged (circle, column)
    n_obj = len(scene.objects)

    def make_sel(pick):
        c_sel, d_sel = centers[ks][pick], deltas[ks][pick]
        groups = [(int(j), js[pick] == j) for j in np.unique(js[pick])]

        def sep_sel(t):
            p = c_sel + t[:, None] * d_sel
            out = np.empty(len(t))
            for j, mask in groups:
                if j == n_obj:
                    out[mask] = p[mask, 1] - scene.ground_y - radius
                else:
                    out[mask] = scene.objects[j].signed_distance(p[mask]) - radius
            return out

        return sep_sel

    g_sel = grid[ks, :, js]                        # (m, n_grid)
    s0 = g_sel[:, 0]
    grid_pair_min = g_sel.min(axis=1)
    tmin = ts[np.argmin(g_sel, axis=1)]
    fmin = grid_pair_min.copy()

    # a dip can hide between grid points only around the grid argmin (convexity),
    # so golden-section just that two-interval bracket, one fresh point per step
    hidden = np.nonzero(grid_pair_min >= -tol)[0]
    if len(hidden):
        sep_h = make_sel(hidden)
        imin = np.argmin(g_sel[hidden], axis=1)
        a = ts[np.maximum(imin - 1, 0)]
        b = ts[np.minimum(imin + 1, n_grid - 1)]
        x1 = b - _INV_PHI * (b - a)
        x2 = a + _INV_PHI * (b - a)
        f1, f2 = sep_h(x1), sep_h(x2)
        for _ in range(36):
            left = f1 < f2
            b = np.where(left, x2, b)
            a = np.where(left, a, x1)
            fresh = np.where(left, b - _INV_PHI * (b - a), a + _INV_PHI * (b - a))
            f_fresh = sep_h(fresh)
            x2, f2 = np.where(left, x1, fresh), np.where(left, f1, f_fresh)
            x1, f1 = np.where(left, fresh, x1), np.where(left, f_fresh, f1)
        tmin[hidden] = 0.5 * (a + b)
        fmin[hidden] = np.minimum(fmin[hidden], np.minimum(f1, f2))

    blocked = np.nonzero(fmin < -tol)[0]
    if not len(blocked):
        return 1.0

    # entry root: last t before the separation drops below its starting level,
    # bisected inside the grid interval of the first drop
    sep_b = make_sel(blocked)
    gb = g_sel[blocked]
    level = np.minimum(s0[blocked], 0.0)
    below = gb < level[:, None]
    has_below = below.any(axis=1)
    jfirst = np.argmax(below, axis=1)
    lo = np.where(has_below, ts[np.maximum(jfirst - 1, 0)],
                  ts[np.clip(np.searchsorted(ts, tmin[blocked]) - 1, 0, n_grid - 1)])
    hi = np.where(has_below, ts[jfirst], tmin[blocked])
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        ok = sep_b(mid) >= level
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    t_pair = np.where(s0[blocked] < -tol, 0.0, lo)  # motion from penetration: stay
    return float(min(1.0, t_pair.min()))


@dataclass(frozen=True)
class LinkContact:
    separation: float
    object_id: str
    status: str  # FREE | TOUCHING | PENETRATING


@dataclass(frozen=True)
class ContactReport:
    links: dict[str, LinkContact] = field(default_factory=dict)

    @property
    def penetrating(self) -> bool:
        return any(c.status == PENETRATING for c in self.links.values())

    @property
    def worst_separation(self) -> float:
        return min(c.separation for c in self.links.values())


def check_gripper_collision(pose, aperture: float, gripper: GripperModel,
                            scene: Landscape, contact_tol: float = 0.5,
                            tol: float = 1e-9) -> ContactReport:
    """Exact circle-vs-scene contact state for both fingers at one pose."""
    vec = pose.as_vector() if isinstance(pose, Pose2) else np.asarray(pose, float)
    c1, c2 = gripper.finger_centers(vec, float(aperture))
    ids = [o.id for o in scene.objects] + ["ground"]
    links = {}
    for name, c in zip(gripper.LINKS, (c1, c2)):
        seps = scene.separations(np.asarray(c, dtype=float), gripper.link_radius)
        j = int(np.argmin(seps))
        sep = float(seps[j])
        if sep < -tol:
            status = PENETRATING
        elif sep <= contact_tol:
            status = TOUCHING
        else:
            status = FREE
        links[name] = LinkContact(separation=sep, object_id=ids[j], status=status)
    return ContactReport(links=links)


@dataclass(frozen=True)
class PlanParams:
    step_len: float = 2.5          # mm between waypoints: one dt of travel at
                                   # the plant's velocity limit, so feedforward
                                   # controls stay executable
    dt: float = 0.05               # seconds per step
    aperture_margin: float = 12.0  # nominal approach opening beyond the grasp
    aperture_step: float = 6.0     # widen/narrow increment during resolution
    offset_step: float = 2.5       # perpendicular clearance increment
    max_offset: float = 20.0
    approach_len: float = 15.0     # straight final descent along the grasp axis
    settle_len: float = 3.0        # last stretch of the descent at fine spacing
    approach_step: float = 1.0     # waypoint spacing inside the settle stretch
    vertical: float = -math.pi / 2
    search_budget: int = 20000     # validity checks before giving up
    tol: float = 1e-9


@dataclass(frozen=True)
class TrajectoryPlan:
    """Waypoints in travel order; index i carries time-to-go tau = horizon - i.

    controls[i] is the velocity (mm/s) that moves the plant from waypoint i to
    waypoint i+1 over dt; the last entry is zero (hold at the grasp).
    """

    grasp: CandidateGrasp
    waypoints: tuple[tuple[Pose2, float], ...]
    controls: tuple[tuple[float, float], ...]
    dt: float

    @property
    def horizon(self) -> int:
        return len(self.waypoints) - 1

    def waypoint_at_tau(self, tau: int) -> tuple[Pose2, float]:
        return self.waypoints[self.horizon - tau]

    def control_at_tau(self, tau: int) -> tuple[float, float]:
        return self.controls[self.horizon - tau]

    @property
    def positions(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p, _ in self.waypoints])

    def to_dict(self) -> dict:
        return {
            "grasp": self.grasp.to_dict(),
            "dt": self.dt,
            "waypoints": [[p.x, p.y, p.theta, a] for p, a in self.waypoints],
            "controls": [list(u) for u in self.controls],
        }

    @staticmethod
    def from_dict(d: dict) -> "TrajectoryPlan":
        return TrajectoryPlan(
            grasp=CandidateGrasp.from_dict(d["grasp"]),
            waypoints=tuple(
                (Pose2(w[0], w[1], w[2]), float(w[3])) for w in d["waypoints"]
            ),
            controls=tuple((float(u[0]), float(u[1])) for u in d["controls"]),
            dt=float(d["dt"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def loads(text: str) -> "TrajectoryPlan":
        return TrajectoryPlan.loads_dict(json.loads(text))

    @staticmethod
    def loads_dict(d: dict) -> "TrajectoryPlan":
        return TrajectoryPlan.from_dict(d)


def _stacked_centers(gripper: GripperModel, pos, theta: float, aperture: float):
    vec = np.array([pos[0], pos[1], theta])
    c1, c2 = gripper.finger_centers(vec, aperture)
    return np.stack([np.asarray(c1, float), np.asarray(c2, float)])


def _translation_ok(scene, gripper, pos_from, pos_to, theta, aperture, tol):
    centers = _stacked_centers(gripper, pos_from, theta, aperture)
    delta = np.array([pos_to[0] - pos_from[0], pos_to[1] - pos_from[1]])
    deltas = np.broadcast_to(delta, centers.shape)
    return max_free_fraction(scene, centers, deltas, gripper.link_radius, tol) >= 1.0


def _aperture_sweep_ok(scene, gripper, pos, theta, ap_from, ap_to, tol):
    centers = _stacked_centers(gripper, pos, theta, ap_from)
    axis = np.array([-math.sin(theta), math.cos(theta)])
    half = 0.5 * (ap_to - ap_from)
    deltas = np.stack([half * axis, -half * axis])
    return max_free_fraction(scene, centers, deltas, gripper.link_radius, tol) >= 1.0


def _config_clear(scene, gripper, pos, theta, aperture, tol):
    centers = _stacked_centers(gripper, pos, theta, aperture)
    return float(scene.separations(centers, gripper.link_radius).min()) >= -tol


def plan_trajectory(start_pose: Pose2, start_aperture: float,
                    grasp: CandidateGrasp, gripper: GripperModel,
                    scene: Landscape, params: PlanParams | None = None,
                    approach_aperture: float | None = None) -> TrajectoryPlan:
    """Straight-line plan from the start configuration to the grasp.

    The last stretch of the path is straightened onto the grasp approach axis,
    so the plan rejoins the grasp head-on instead of cutting in sideways; a
    tracking plant whose time-to-go is the nearest waypoint then only reaches
    zero next to the grasp itself.  When that straightened tail cannot be
    validated the leg shortens and finally drops away.

    Conflicting waypoints are resolved in a fixed candidate order: lift the
    heading toward vertical, then widen the aperture (falling back to
    narrowing, which gaps tighter than the nominal opening require), then push
    the waypoint perpendicular to the line, preferring offsets close to the
    previous waypoint's.  A candidate must admit the
    inbound translation, the heading snap, and the aperture move; a
    depth-first search with backtracking handles couplings where a choice only
    proves wrong several waypoints later.  Dead configurations are memoized
    (a config's reachable tail does not depend on how it was entered) and a
    check budget bounds the search on unplannable scenes.
    """
    if params is None:
        params = PlanParams()
    gp, ga = grasp.pose, float(grasp.aperture)
    start_aperture = float(start_aperture)
    tol = params.tol

    dist = math.hypot(gp.x - start_pose.x, gp.y - start_pose.y)
    same_heading = abs(angle_diff(gp.theta, start_pose.theta)) <= 1e-12
    if dist <= 1e-12 and same_heading and abs(ga - start_aperture) <= 1e-12:
        return TrajectoryPlan(grasp, ((gp, ga),), ((0.0, 0.0),), params.dt)

    n_seg = max(1, math.ceil(dist / params.step_len - 1e-9))
    if not _config_clear(scene, gripper, (start_pose.x, start_pose.y),
                         start_pose.theta, start_aperture, tol):
        raise PlanningError(
            f"start configuration penetrates the scene at waypoint {n_seg}")

    dtheta = angle_diff(gp.theta, start_pose.theta)
    if dist > 1e-12:
        normal = np.array([-(gp.y - start_pose.y), gp.x - start_pose.x]) / dist
    else:
        normal = np.zeros(2)
    # direction the gripper travels over the final leg: opposite its heading
    u_app = np.array([-math.cos(gp.theta), -math.sin(gp.theta)])

    # approach_aperture lets a caller with several candidate plans give them
    # one shared travel opening, so switching plans mid-flight commands no
    # finger motion; never narrower than this grasp's own nominal opening
    a_nom = max(ga + params.aperture_margin, ga)
    if approach_aperture is not None:
        a_nom = max(a_nom, float(approach_aperture))
    a_nom = min(a_nom, gripper.aperture_max)

    def aperture_options():
        cands = [a_nom]
        a = a_nom + params.aperture_step
        while a < gripper.aperture_max - 1e-9:
            cands.append(a)
            a += params.aperture_step
        if gripper.aperture_max - cands[-1] > 1e-9:
            cands.append(gripper.aperture_max)
        a = a_nom - params.aperture_step
        while a > ga + 1e-9:
            cands.append(a)
            a -= params.aperture_step
        if cands[-1] - ga > 1e-9:
            cands.append(ga)
        return cands

    def theta_options(nominal):
        cands = [nominal]
        for beta in (0.25, 0.5, 0.75, 1.0):
            t = wrap_angle(nominal + beta * angle_diff(params.vertical, nominal))
            if all(abs(angle_diff(t, e)) > 1e-9 for e in cands):
                cands.append(t)
        return cands

    def offset_options():
        # geometric ladder: fine steps near the line, coarse far out, so the
        # per-waypoint candidate count stays small enough to search exhaustively
        offs = [0.0]
        if dist <= 1e-12:
            return offs
        o = params.offset_step
        while o <= params.max_offset + 1e-9:
            offs.extend([o, -o])
            o *= 2.0
        if abs(offs[-1]) < params.max_offset - 1e-9:
            offs.extend([params.max_offset, -params.max_offset])
        return offs

    ap_list_mid = aperture_options()
    off_list_mid = offset_options()
    # ladder rank breaks ties so candidate order stays deterministic
    off_rank = {o: k for k, o in enumerate(off_list_mid)}

    def attempt(leg_len):
        xs = np.linspace(start_pose.x, gp.x, n_seg + 1)
        ys = np.linspace(start_pose.y, gp.y, n_seg + 1)
        # bend the tail indices onto the approach axis, same distance to go, so
        # the waypoint count and spacing match the plain line; the single bent
        # edge at the junction can run long and the splitter below handles it
        tail_start = n_seg
        for i in range(1, n_seg):
            d_togo = dist * (n_seg - i) / n_seg
            if d_togo <= leg_len + 1e-9:
                xs[i] = gp.x + d_togo * u_app[0]
                ys[i] = gp.y + d_togo * u_app[1]
                tail_start = min(tail_start, i)

        budget = [params.search_budget]
        dead: set[tuple] = set()
        deepest_failure = [0]  # travel index that exhausted its candidates
        # geometry checks are pure in their arguments, so results are shared
        # across branches; the budget counts distinct checks actually performed
        checked: dict[tuple, bool] = {}

        def spend():
            budget[0] -= 1
            if budget[0] < 0:
                raise PlanningError(
                    "search budget exhausted; no collision-free configuration at "
                    f"waypoint {n_seg - max(deepest_failure[0], 1)}")

        def translation_ok(pos_from, pos_to, th, ap):
            key = ("tr", pos_from, pos_to, th, ap)
            hit = checked.get(key)
            if hit is None:
                spend()
                hit = _translation_ok(scene, gripper, pos_from, pos_to, th, ap, tol)
                checked[key] = hit
            return hit

        def snap_ok(pos, th, ap):
            key = ("cfg", pos, th, ap)
            hit = checked.get(key)
            if hit is None:
                spend()
                hit = _config_clear(scene, gripper, pos, th, ap, tol)
                checked[key] = hit
            return hit

        def sweep_ok(pos, th, ap_from, ap_to):
            key = ("sw", pos, th, ap_from, ap_to)
            hit = checked.get(key)
            if hit is None:
                spend()
                hit = _aperture_sweep_ok(scene, gripper, pos, th, ap_from, ap_to, tol)
                checked[key] = hit
            return hit

        def config_key(i, pos, th, ap):
            return (i, round(pos[0], 9), round(pos[1], 9), round(th, 9), round(ap, 9))

        def candidates(i, prev_pose, prev_ap, prev_off):
            """Yield valid, not-yet-refuted (pose, aperture, offset) waypoints for travel index i."""
            final = i == n_seg
            on_axis = i >= tail_start
            prev_pos = (prev_pose.x, prev_pose.y)
            pos_nom = np.array([xs[i], ys[i]])
            # axis waypoints are pinned: heading already at the grasp's,
            # aperture held, no lateral offsets, or the tail would kink again
            if final or on_axis:
                th_list = [gp.theta]
            else:
                th_list = theta_options(
                    wrap_angle(start_pose.theta + dtheta * i / tail_start))
            if final:
                ap_list = [ga]
            elif on_axis:
                ap_list = [prev_ap]
            else:
                ap_list = ap_list_mid
            # offsets nearest the previous waypoint's offset go first, so a detour
            # is entered, held and left in small lateral moves instead of jumping
            # between rungs; the jump length feeds straight into the control
            # magnitude and the execution side clamps controls hard
            off_list = [0.0] if final or on_axis else sorted(
                off_list_mid, key=lambda o: (abs(o - prev_off), off_rank[o]))
            for off in off_list:
                pos = (gp.x, gp.y) if final else tuple(pos_nom + off * normal)
                # configurations already proven dead never need re-validation, and
                # an offset whose configurations are all dead skips its inbound
                # translation check entirely
                live = [(ap, th) for ap in ap_list for th in th_list
                        if config_key(i, pos, th, ap) not in dead]
                if not live:
                    continue
                if not translation_ok(prev_pos, pos, prev_pose.theta, prev_ap):
                    continue
                for ap, th in live:
                    if not snap_ok(pos, th, prev_ap):
                        continue
                    if not sweep_ok(pos, th, prev_ap, ap):
                        continue
                    if final:
                        yield gp, ga, 0.0
                    else:
                        yield Pose2(pos[0], pos[1], th), ap, off

        def search(i, prev_pose, prev_ap, prev_off):
            if i > n_seg:
                return []
            any_candidate = False
            for pose, ap, off in candidates(i, prev_pose, prev_ap, prev_off):
                any_candidate = True
                tail = search(i + 1, pose, ap, off)
                if tail is not None:
                    return [(pose, ap)] + tail
                dead.add(config_key(i, (pose.x, pose.y), pose.theta, ap))
            if not any_candidate:
                deepest_failure[0] = max(deepest_failure[0], i)
            return None

        tail = search(1, start_pose, start_aperture, 0.0)
        if tail is None:
            raise PlanningError(
                "no collision-free configuration at waypoint "
                f"{n_seg - max(deepest_failure[0], 1)}")
        return tail, tail_start

    legs = []
    for want in (params.approach_len, 0.5 * params.approach_len, 0.0):
        eff = max(0.0, min(want, dist))
        if all(abs(eff - seen) > 1e-9 for seen in legs):
            legs.append(eff)
    tail = None
    tail_start = n_seg
    last_err: PlanningError | None = None
    for leg_len in legs:
        try:
            tail, tail_start = attempt(leg_len)
            break
        except PlanningError as err:
            last_err = err
    if tail is None:
        assert last_err is not None
        raise last_err
    waypoints = [(start_pose, start_aperture)] + tail

    # detour edges can run longer than step_len (lateral rung change on top of
    # the along-line step); split them so every control magnitude stays within
    # step_len / dt, which the execution side's velocity clamp relies on.
    # Interior points keep the segment start's heading and aperture: the snap
    # and sweep stay at the end position the search validated them at, and an
    # interior point of a certified translation is free by convexity.
    # The settle stretch right above the grasp gets a finer ladder: the close
    # fires when the nearest waypoint is the grasp itself, so its placement
    # error along the approach axis is half the local spacing.  Only the last
    # few millimetres pay the slower fine-spaced descent.
    refined = [waypoints[0]]
    for j, ((pa, aa), (pb, ab)) in enumerate(zip(waypoints, waypoints[1:])):
        seg = math.hypot(pb.x - pa.x, pb.y - pa.y)
        settling = j >= tail_start and \
            math.hypot(pa.x - gp.x, pa.y - gp.y) <= params.settle_len + 1e-9
        unit = params.approach_step if settling else params.step_len
        pieces = max(1, math.ceil(seg / unit - 1e-9))
        for k in range(1, pieces):
            t = k / pieces
            refined.append((Pose2(pa.x + t * (pb.x - pa.x),
                                  pa.y + t * (pb.y - pa.y),
                                  pa.theta), aa))
        refined.append((pb, ab))
    waypoints = refined

    controls = []
    for (pa, _), (pb, _) in zip(waypoints, waypoints[1:]):
        controls.append(((pb.x - pa.x) / params.dt, (pb.y - pa.y) / params.dt))
    controls.append((0.0, 0.0))
    return TrajectoryPlan(grasp, tuple(waypoints), tuple(controls), params.dt)
