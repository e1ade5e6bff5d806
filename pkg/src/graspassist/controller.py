"""Per-trajectory LQR assistance with operator intent arbitration.

Each candidate plan gets a finite-horizon gain schedule solved backward from
the grasp.  At runtime the operator's velocity input is integrated one step
ahead, every plan prices that predicted state plus the input mismatch with its
exponentially decaying cost schedule, and the cheapest plan wins.  The winning
plan's feedback command is blended with the raw input so assistance fades with
time-to-go: strong near the grasp, imperceptible far away.  Heading and
aperture are not velocity-controlled; they are superimposed from the selected
plan's upcoming waypoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .se2 import angle_diff
from .planner import TrajectoryPlan

__all__ = [
    "ActivePlan",
    "ArbitrationResult",
    "AssistCommand",
    "AssistController",
    "AssistParams",
    "ControllerError",
    "CostSchedule",
    "GainSchedule",
    "LinearizedDynamics",
    "arbitrate",
    "linearize",
    "predict_state",
    "solve_gains",
]


class ControllerError(RuntimeError):
    pass


# velocity input maps into (x, y); the heading row is zero by design
_G = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])


@dataclass(frozen=True)
class LinearizedDynamics:
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray


def linearize(plan: TrajectoryPlan) -> LinearizedDynamics:
    """The kinematic plant is linear, so the linearization is exact and
    time-invariant: A = I, B scales velocity by the step duration."""
    return LinearizedDynamics(A=np.eye(3), B=_G * plan.dt, c=np.zeros(3))


@dataclass(frozen=True)
class CostSchedule:
    """Exponentially decaying tracking costs, indexed by time-to-go tau.

    Position weights and input weights both shrink as exp(-tau * dt * kappa),
    so far from the grasp neither deviation is expensive; the heading weight
    stays 1 so intent arbitration keeps caring about orientation mismatch.
    """

    horizon: int
    dt: float
    kappa: float = 1.0
    r_floor: float = 1e-6  # keeps R invertible at long time-to-go

    @classmethod
    def exponential(cls, horizon: int, dt: float, kappa: float = 1.0,
                    r_floor: float = 1e-6) -> "CostSchedule":
        return cls(horizon=horizon, dt=dt, kappa=kappa, r_floor=r_floor)

    def _decay(self, tau: int) -> float:
        return math.exp(-tau * self.dt * self.kappa)

    def Q(self, tau: int) -> np.ndarray:
        w = self._decay(tau)
        return np.diag([w, w, 1.0])

    def R(self, tau: int) -> np.ndarray:
        w = max(self._decay(tau), self.r_floor)
        return np.diag([w, w])


@dataclass(frozen=True)
class GainSchedule:
    P: np.ndarray  # (horizon+1, n, n) cost-to-go, indexed by time-to-go
    K: np.ndarray  # (horizon+1, m, n) feedback gains

    def P_at(self, tau: int) -> np.ndarray:
        return self.P[tau]

    def K_at(self, tau: int) -> np.ndarray:
        return self.K[tau]


def solve_gains(dyn: LinearizedDynamics, cost) -> GainSchedule:
    """Backward Riccati recursion from the terminal weight at the grasp.

    Works for any state/input dimension the dynamics carry.  tau = 0 is the
    grasp itself; its gain comes from one virtual holding step so the
    controller can keep pulling toward the goal after arrival.
    """
    A = np.asarray(dyn.A, dtype=float)
    B = np.asarray(dyn.B, dtype=float)
    n, m = B.shape
    N = cost.horizon
    P = np.empty((N + 1, n, n))
    K = np.empty((N + 1, m, n))
    P[0] = np.asarray(cost.Q(0), dtype=float)
    for tau in range(1, N + 1):
        Pp = P[tau - 1]
        S = np.asarray(cost.R(tau), dtype=float) + B.T @ Pp @ B
        K[tau] = np.linalg.solve(S, B.T @ Pp @ A)
        Pt = np.asarray(cost.Q(tau), dtype=float) + A.T @ Pp @ (A - B @ K[tau])
        P[tau] = 0.5 * (Pt + Pt.T)
        if np.linalg.eigvalsh(P[tau]).min() < -1e-9:
            raise ControllerError(f"cost-to-go lost positive semidefiniteness at tau={tau}")
    S0 = np.asarray(cost.R(0), dtype=float) + B.T @ P[0] @ B
    K[0] = np.linalg.solve(S0, B.T @ P[0] @ A)
    return GainSchedule(P=P, K=K)


def predict_state(x, u, dt: float) -> np.ndarray:
    """One-step integration of the plant under a held velocity input."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return x + _G @ u * dt


@dataclass
class ActivePlan:
    """A candidate plan with its solved gains and current time-to-go."""

    plan: TrajectoryPlan
    gains: GainSchedule
    cost: object  # anything exposing Q(tau) / R(tau)
    tau: int


@dataclass(frozen=True)
class ArbitrationResult:
    grasp_id: int
    costs: dict[int, float]
    u_star: tuple[float, float]
    theta: float
    aperture: float
    tau: int


def _waypoint_state(plan: TrajectoryPlan, tau: int):
    pose, aperture = plan.waypoint_at_tau(tau)
    return np.array([pose.x, pose.y, pose.theta]), aperture


def _state_error(x, x_wp) -> np.ndarray:
    e = x - x_wp
    e[2] = angle_diff(x[2], x_wp[2])
    return e


def _plan_command(ap: ActivePlan, x):
    """Feedback command u_g(tau) - K(tau) (x - x_g(tau)) plus the heading and
    aperture superimposed from the current waypoint.  Reading them one step
    ahead instead would fire the grasp close a whole step early and pin the
    pose error at a step length."""
    tau = ap.tau
    u_g = np.asarray(ap.plan.control_at_tau(tau), dtype=float)
    x_wp, aperture = _waypoint_state(ap.plan, tau)
    u_star = u_g - ap.gains.K_at(tau) @ _state_error(np.asarray(x, dtype=float), x_wp)
    return u_star, float(x_wp[2]), float(aperture)


def _candidate_cost(ap: ActivePlan, x, u, dt: float) -> float:
    """Immediate price of the operator's intent under this plan: predicted
    state against the upcoming waypoint, raw input against the plan's input."""
    tau = ap.tau
    ahead = max(tau - 1, 0)
    x_wp, _ = _waypoint_state(ap.plan, ahead)
    x_hat = _state_error(predict_state(x, u, dt), x_wp)
    u_hat = np.asarray(u, dtype=float) - np.asarray(ap.plan.control_at_tau(tau), dtype=float)
    return float(x_hat @ ap.cost.Q(ahead) @ x_hat + u_hat @ ap.cost.R(ahead) @ u_hat)


def arbitrate(x, u, plans: list[ActivePlan], dt: float) -> ArbitrationResult:
    """Pick the plan whose trajectory best explains the operator's input.

    Pure function of the inputs; ties go to the lowest grasp id.
    """
    if not plans:
        raise ControllerError("no candidate plans to arbitrate between")
    costs = {ap.plan.grasp.grasp_id: _candidate_cost(ap, x, u, dt) for ap in plans}
    winner_id = min(costs, key=lambda g: (costs[g], g))
    winner = next(ap for ap in plans if ap.plan.grasp.grasp_id == winner_id)
    u_star, theta, aperture = _plan_command(winner, x)
    return ArbitrationResult(
        grasp_id=winner_id, costs=costs,
        u_star=(float(u_star[0]), float(u_star[1])),
        theta=theta, aperture=aperture, tau=winner.tau,
    )


@dataclass(frozen=True)
class AssistParams:
    kappa: float = 1.0
    v_limit: float = 50.0  # mm/s, the plant's velocity ceiling
    hysteresis_margin: float = 0.05
    hysteresis_steps: int = 3
    r_floor: float = 1e-6


@dataclass(frozen=True)
class AssistCommand:
    velocity: tuple[float, float]
    theta: float
    aperture: float
    debug: dict = field(default_factory=dict, compare=False)


class AssistController:
    """Stateful arbitration loop: advances per-plan time-to-go, applies
    switching hysteresis, and blends feedback with the raw operator input."""

    def __init__(self, plans: list[TrajectoryPlan], params: AssistParams | None = None):
        if not plans:
            raise ControllerError("assistance needs at least one candidate plan")
        self.params = params or AssistParams()
        self.active: list[ActivePlan] = []
        self._wp_pos: list[np.ndarray] = []
        for plan in plans:
            cost = CostSchedule.exponential(plan.horizon, plan.dt,
                                            kappa=self.params.kappa,
                                            r_floor=self.params.r_floor)
            gains = solve_gains(linearize(plan), cost)
            self.active.append(ActivePlan(plan=plan, gains=gains, cost=cost,
                                          tau=plan.horizon))
            # positions indexed by time-to-go, for nearest-waypoint projection
            self._wp_pos.append(np.array(
                [[plan.waypoint_at_tau(t)[0].x, plan.waypoint_at_tau(t)[0].y]
                 for t in range(plan.horizon + 1)]))
        self._selected: int | None = None
        self._challenger: int | None = None
        self._streak = 0
        self.dt = plans[0].dt

    def _advance_taus(self, x):
        pos = np.asarray(x, dtype=float)[:2]
        for ap, wp in zip(self.active, self._wp_pos):
            nearest = int(np.argmin(np.hypot(*(wp - pos).T)))
            ap.tau = min(ap.tau, nearest)  # time-to-go never rewinds

    def _apply_hysteresis(self, winner: int, costs: dict[int, float]) -> int:
        if self._selected is None or winner == self._selected:
            self._selected = winner if self._selected is None else self._selected
            self._challenger, self._streak = None, 0
            return self._selected
        if costs[winner] < (1.0 - self.params.hysteresis_margin) * costs[self._selected]:
            if winner == self._challenger:
                self._streak += 1
            else:
                self._challenger, self._streak = winner, 1
            if self._streak >= self.params.hysteresis_steps:
                self._selected = winner
                self._challenger, self._streak = None, 0
        else:
            self._challenger, self._streak = None, 0
        return self._selected

    def step(self, x, u) -> AssistCommand:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        self._advance_taus(x)
        res = arbitrate(x, u, self.active, self.dt)
        selected_id = self._apply_hysteresis(res.grasp_id, res.costs)
        sel = next(ap for ap in self.active
                   if ap.plan.grasp.grasp_id == selected_id)
        u_star, theta, aperture = _plan_command(sel, x)

        alpha = math.exp(-sel.tau * self.dt * self.params.kappa)
        u_out = alpha * u_star + (1.0 - alpha) * u
        speed = math.hypot(u_out[0], u_out[1])
        if speed > self.params.v_limit:
            u_out = u_out * (self.params.v_limit / speed)

        debug = {
            "costs": res.costs,
            "argmin": res.grasp_id,
            "selected": selected_id,
            "tau": sel.tau,
            "alpha": alpha,
            "u": [float(u[0]), float(u[1])],
            "u_star": [float(u_star[0]), float(u_star[1])],
            "u_out": [float(u_out[0]), float(u_out[1])],
        }
        return AssistCommand(velocity=(float(u_out[0]), float(u_out[1])),
                             theta=theta, aperture=aperture, debug=debug)
