"""
moving-horizon trajectory optimization over joint velocities

States follow x_{k+1} = x_k + u_k dt from the measured x_0, so the controls are
the only free variables. The cost is

    J = sum_k [ c_G(x_k) + c_O(x_k) + w_ref ref(x_k) ] + sum_k<K u_k^T R u_k
        + sum_k w_I / (O(x_k) G(x_k) + eps)

Joint velocity limits are box bounds of L-BFGS-B, position, acceleration and
clearance limits are quadratic penalties whose weight grows until the plan is
feasible. A plan that is still infeasible is repaired by forward clamping, and
the cheapest feasible plan among the optimized, the repaired, the warm start
and a braking plan is returned.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize

from nbt_planner.ig_engine import CameraModel
from nbt_planner.infodist import (
    BufferView,
    DistributionBuffer,
    IdwParams,
    cutoff_angle,
    gain_and_gradient,
    orientation_and_gradient,
)
from nbt_planner.kinematics import (
    KinematicChain,
    camera_jacobians,
    camera_poses,
    clearance_and_gradient,
)
from nbt_planner.utils import (
    InfeasibleStartError,
    NoDistributionError,
    ValidationError,
    as_vector,
    per_joint,
)

logger = logging.getLogger("nbt_planner")

CONVERGED = "converged"
LINE_SEARCH_FAILED = "line_search_failed"
REPAIRED = "repaired"
INITIAL_KEPT = "initial_kept"
BRAKING_FALLBACK = "braking_fallback"
INFEASIBLE = "infeasible"

FALLBACK_STATUSES = (REPAIRED, INITIAL_KEPT, BRAKING_FALLBACK, INFEASIBLE)

DEFAULT_CAMERA = CameraModel(math.radians(75.0), math.radians(65.0), 3.86)


@dataclass(frozen=True)
class HorizonConfig:
    horizon: int = 30
    dt: float = 0.1
    q_weight: Union[float, Tuple[float, ...]] = 1.0
    r_weight: Union[float, Tuple[float, ...]] = 0.1
    w_o: float = 100.0
    w_i: float = 0.0
    w_ref: float = 0.0
    epsilon: float = 1e-7
    margin: float = 0.05
    # waypoint spacing of the reference trajectory (s)
    ref_dt: float = 0.1
    theta_cut: Optional[float] = None
    max_iterations: int = 200
    ftol: float = 1e-12
    gtol: float = 1e-8
    penalty: float = 1e3
    penalty_growth: float = 10.0
    penalty_rounds: int = 4
    tolerance: float = 1e-6

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValidationError(f"horizon K must be a positive integer, got {self.horizon}")
        for name in ("dt", "epsilon", "ref_dt", "penalty"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("w_o", "w_i", "w_ref", "margin"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("q_weight", "r_weight"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ValidationError(f"{name} must be >= 0")
        if self.penalty_growth <= 1 or self.penalty_rounds < 1:
            raise ValidationError("penalty_growth must exceed 1 and penalty_rounds be >= 1")


@dataclass(frozen=True, eq=False)
class CostBreakdown:
    """per-step cost terms, all of length K + 1 (the control term of step K is 0)"""

    goal: np.ndarray
    control: np.ndarray
    obstacle: np.ndarray
    information: np.ndarray
    reference: np.ndarray
    orientation: np.ndarray
    gain: np.ndarray

    @property
    def total(self) -> float:
        return float(
            self.goal.sum()
            + self.control.sum()
            + self.obstacle.sum()
            + self.information.sum()
            + self.reference.sum()
        )

    def totals(self) -> dict:
        return {
            "c_G": float(self.goal.sum()),
            "c_C": float(self.control.sum()),
            "c_O": float(self.obstacle.sum()),
            "c_I": float(self.information.sum()),
            "c_ref": float(self.reference.sum()),
            "J": self.total,
        }


def rollout(x0: np.ndarray, controls: np.ndarray, dt: float) -> np.ndarray:
    states = np.empty((len(controls) + 1, len(x0)))
    states[0] = x0
    for k in range(len(controls)):
        states[k + 1] = states[k] + controls[k] * dt
    return states


@dataclass(eq=False)
class HorizonPlan:
    states: np.ndarray
    controls: np.ndarray
    costs: Optional[CostBreakdown] = None
    status: str = "initial"
    iterations: int = 0

    @classmethod
    def from_controls(cls, x0: Sequence[float], controls: np.ndarray, dt: float) -> "HorizonPlan":
        x0 = np.asarray(x0, dtype=float)
        controls = np.array(controls, dtype=float).reshape(-1, len(x0))
        return cls(states=rollout(x0, controls, dt), controls=controls)

    @property
    def horizon(self) -> int:
        return len(self.controls)

    @property
    def cost(self) -> float:
        if self.costs is None:
            raise ValidationError("plan was not evaluated")
        return self.costs.total

    def shifted(self, x0: Sequence[float], dt: float) -> "HorizonPlan":
        """warm start for the next cycle: drop u_0, duplicate the last control"""
        controls = np.vstack([self.controls[1:], self.controls[-1:]])
        return HorizonPlan.from_controls(x0, controls, dt)

    def log_rows(self, t: float, dt: float) -> List[list]:
        """rows 't, k, q..., u..., c_G, c_C, c_O, c_I, O, G' for every step"""
        rows = []
        n_dof = self.states.shape[1]
        for k, state in enumerate(self.states):
            control = self.controls[k] if k < self.horizon else np.zeros(n_dof)
            row = [t + k * dt, k] + list(state) + list(control)
            if self.costs is not None:
                costs = self.costs
                row += [
                    costs.goal[k],
                    costs.control[k],
                    costs.obstacle[k],
                    costs.information[k],
                    costs.orientation[k],
                    costs.gain[k],
                ]
            else:
                row += [float("nan")] * 6
            rows.append(row)
        return rows


def plan_log_header(n_dof: int) -> List[str]:
    return (
        ["t", "k"]
        + [f"q{num}" for num in range(n_dof)]
        + [f"u{num}" for num in range(n_dof)]
        + ["c_G", "c_C", "c_O", "c_I", "O", "G"]
    )


@dataclass(frozen=True, eq=False)
class PlannerContext:
    chain: KinematicChain
    x0: np.ndarray
    goal: np.ndarray
    camera: CameraModel = DEFAULT_CAMERA
    poi: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    obstacles: tuple = ()
    buffer: Optional[BufferView] = None
    idw: IdwParams = field(default_factory=IdwParams)
    waypoints: Optional[np.ndarray] = None
    # last executed control, seeds the acceleration limit of u_0
    u_prev: Optional[np.ndarray] = None
    # time of x0, indexes the reference waypoints
    t0: float = 0.0

    def __post_init__(self):
        n_dof = self.chain.n_dof
        object.__setattr__(self, "x0", as_vector(self.x0, n_dof, "x0"))
        goal = as_vector(self.goal, n_dof, "goal")
        if not self.chain.within_limits(goal):
            raise ValidationError(f"goal {goal.tolist()} lies outside the joint limits")
        object.__setattr__(self, "goal", goal)
        if isinstance(self.buffer, DistributionBuffer):
            object.__setattr__(self, "buffer", self.buffer.view())
        if self.u_prev is not None:
            object.__setattr__(self, "u_prev", as_vector(self.u_prev, n_dof, "u_prev"))
        if self.waypoints is not None:
            waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
            if waypoints.shape[1] != n_dof:
                raise ValidationError(f"waypoints must have {n_dof} columns")
            object.__setattr__(self, "waypoints", waypoints)


def reference_index(t: float, ref_dt: float, count: int) -> int:
    index = int(math.floor(t / ref_dt + 1e-9))
    return min(max(index, 0), count - 1)


def reference_tracking_term(
    x_k: Sequence[float], waypoints: np.ndarray, t_k: float = 0.0, ref_dt: float = 0.1
) -> float:
    """squared joint distance to the waypoint active at t_k, unweighted"""
    waypoints = np.atleast_2d(np.asarray(waypoints, dtype=float))
    if not waypoints.size:
        raise ValidationError("reference tracking needs at least one waypoint")
    target = waypoints[reference_index(t_k, ref_dt, len(waypoints))]
    diff = np.asarray(x_k, dtype=float) - target
    return float(diff @ diff)


class HorizonProblem:
    """cost, penalties and their analytic gradients for one planning cycle"""

    def __init__(self, ctx: PlannerContext, cfg: HorizonConfig) -> None:
        self.ctx = ctx
        self.cfg = cfg
        chain = ctx.chain
        n_dof = chain.n_dof
        self.q_weight = per_joint(cfg.q_weight, n_dof, "q_weight")
        self.r_weight = per_joint(cfg.r_weight, n_dof, "r_weight")
        self.lower, self.upper = chain.lower, chain.upper
        self.v_max, self.a_max = chain.velocity, chain.acceleration
        self.u_prev = ctx.u_prev if ctx.u_prev is not None else np.zeros(n_dof)
        self.theta_cut = cutoff_angle(ctx.camera, cfg.theta_cut)
        self.with_information = cfg.w_i > 0
        if self.with_information and (ctx.buffer is None or not len(ctx.buffer)):
            raise NoDistributionError("no distribution available")
        self.targets = None
        if cfg.w_ref > 0:
            if ctx.waypoints is None or not ctx.waypoints.size:
                raise ValidationError("w_ref > 0 needs reference waypoints")
            times = ctx.t0 + np.arange(cfg.horizon + 1) * cfg.dt
            self.targets = ctx.waypoints[
                [reference_index(t, cfg.ref_dt, len(ctx.waypoints)) for t in times]
            ]

    def check_start(self) -> None:
        tol = self.cfg.tolerance
        x0 = self.ctx.x0
        if not self.ctx.chain.within_limits(x0, tol):
            raise InfeasibleStartError(f"start state {x0.tolist()} violates the joint limits")
        clearance, _ = clearance_and_gradient(self.ctx.chain, x0[None, :], self.ctx.obstacles)
        if clearance[0] < -tol:
            raise InfeasibleStartError(
                f"start state penetrates an obstacle (clearance {clearance[0]:.4f} m)"
            )

    def information_terms(
        self, states: np.ndarray, with_gradient: bool
    ) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
        """O, G and d(O G)/dx per step"""
        ctx = self.ctx
        if with_gradient:
            positions, axes, position_jac, axis_jac = camera_jacobians(ctx.chain, states)
        else:
            positions, axes = camera_poses(ctx.chain, states)
        factor, d_position, d_axis = orientation_and_gradient(
            positions, axes, ctx.poi, self.theta_cut
        )
        gains, d_gains = gain_and_gradient(ctx.buffer, positions, ctx.idw)
        if not with_gradient:
            return factor, gains, None
        d_product = gains[:, None] * d_position + factor[:, None] * d_gains
        d_states = np.einsum("bi,bij->bj", d_product, position_jac) + gains[
            :, None
        ] * np.einsum("bi,bij->bj", d_axis, axis_jac)
        return factor, gains, d_states

    def evaluate(
        self, controls: np.ndarray, with_gradient: bool = True
    ) -> Tuple[CostBreakdown, Optional[np.ndarray], Optional[np.ndarray], np.ndarray, np.ndarray]:
        """breakdown, dJ/dx, dJ/du, clearance and its gradient"""
        ctx, cfg = self.ctx, self.cfg
        states = rollout(ctx.x0, controls, cfg.dt)
        steps = len(states)

        error = states - ctx.goal
        goal = (error**2 * self.q_weight).sum(axis=1)
        control = np.append((controls**2 * self.r_weight).sum(axis=1), 0.0)

        clearance, d_clearance = clearance_and_gradient(ctx.chain, states, ctx.obstacles)
        shortfall = np.maximum(cfg.margin - clearance, 0.0)
        obstacle = cfg.w_o * shortfall**2

        reference = np.zeros(steps)
        if self.targets is not None:
            diff = states - self.targets
            reference = cfg.w_ref * (diff**2).sum(axis=1)

        information = np.zeros(steps)
        factor = np.full(steps, np.nan)
        gains = np.full(steps, np.nan)
        d_product = None
        if self.with_information:
            factor, gains, d_product = self.information_terms(states, with_gradient)
            information = cfg.w_i / (factor * gains + cfg.epsilon)
        elif ctx.buffer is not None and len(ctx.buffer) and not with_gradient:
            # logged only, never part of the cost
            factor, gains, _ = self.information_terms(states, False)

        breakdown = CostBreakdown(
            goal=goal,
            control=control,
            obstacle=obstacle,
            information=information,
            reference=reference,
            orientation=factor,
            gain=gains,
        )
        if not with_gradient:
            return breakdown, None, None, clearance, d_clearance

        d_states = 2.0 * self.q_weight * error
        d_states -= (2.0 * cfg.w_o * shortfall)[:, None] * d_clearance
        if self.targets is not None:
            d_states += 2.0 * cfg.w_ref * (states - self.targets)
        if self.with_information:
            denominator = factor * gains + cfg.epsilon
            d_states -= (cfg.w_i / denominator**2)[:, None] * d_product
        d_controls = 2.0 * self.r_weight * controls
        return breakdown, d_states, d_controls, clearance, d_clearance

    def penalty(
        self,
        controls: np.ndarray,
        states: np.ndarray,
        clearance: np.ndarray,
        d_clearance: np.ndarray,
        weight: float,
    ) -> Tuple[float, np.ndarray, np.ndarray]:
        dt = self.cfg.dt
        over = np.maximum(states[1:] - self.upper, 0.0)
        under = np.maximum(self.lower - states[1:], 0.0)
        accel = (controls - np.vstack([self.u_prev, controls[:-1]])) / dt
        excess = np.maximum(np.abs(accel) - self.a_max, 0.0)
        penetration = np.maximum(-clearance[1:], 0.0)
        value = weight * (
            (over**2).sum() + (under**2).sum() + (excess**2).sum() + (penetration**2).sum()
        )

        d_states = np.zeros_like(states)
        d_states[1:] = 2.0 * weight * (over - under)
        d_states[1:] -= (2.0 * weight * penetration)[:, None] * d_clearance[1:]
        d_accel = 2.0 * weight * excess * np.sign(accel) / dt
        d_controls = d_accel.copy()
        d_controls[:-1] -= d_accel[1:]
        return value, d_states, d_controls

    def violation(self, controls: np.ndarray) -> float:
        """largest constraint violation of a plan, 0 when feasible"""
        states = rollout(self.ctx.x0, controls, self.cfg.dt)
        clearance, _ = clearance_and_gradient(self.ctx.chain, states[1:], self.ctx.obstacles)
        accel = (controls - np.vstack([self.u_prev, controls[:-1]])) / self.cfg.dt
        return float(
            max(
                np.max(states[1:] - self.upper, initial=0.0),
                np.max(self.lower - states[1:], initial=0.0),
                np.max(np.abs(controls) - self.v_max, initial=0.0),
                np.max(np.abs(accel) - self.a_max, initial=0.0),
                np.max(-clearance, initial=0.0),
            )
        )

    def objective(self, flat: np.ndarray, weight: float) -> Tuple[float, np.ndarray]:
        controls = flat.reshape(-1, self.ctx.chain.n_dof)
        breakdown, d_states, d_controls, clearance, d_clearance = self.evaluate(controls)
        states = rollout(self.ctx.x0, controls, self.cfg.dt)
        value, p_states, p_controls = self.penalty(
            controls, states, clearance, d_clearance, weight
        )
        d_states = d_states + p_states
        # x_k depends on every u_j with j < k
        suffix = np.cumsum(d_states[:0:-1], axis=0)[::-1]
        gradient = d_controls + p_controls + self.cfg.dt * suffix
        return breakdown.total + value, gradient.ravel()

    def repair(self, controls: np.ndarray) -> np.ndarray:
        """clamp controls step by step into the velocity, acceleration and position windows"""
        dt = self.cfg.dt
        repaired = np.empty_like(controls)
        state = self.ctx.x0.copy()
        previous = self.u_prev
        for k, control in enumerate(controls):
            accel_low = previous - self.a_max * dt
            accel_high = previous + self.a_max * dt
            low = np.maximum.reduce([accel_low, -self.v_max, (self.lower - state) / dt])
            high = np.minimum.reduce([accel_high, self.v_max, (self.upper - state) / dt])
            empty = low > high
            low[empty], high[empty] = accel_low[empty], accel_high[empty]
            repaired[k] = np.clip(control, low, high)
            state = state + repaired[k] * dt
            previous = repaired[k]
        return repaired

    def braking(self) -> np.ndarray:
        """decelerate from the last executed control at the acceleration limit"""
        dt = self.cfg.dt
        steps = np.arange(1, self.cfg.horizon + 1)[:, None]
        speed = np.maximum(np.abs(self.u_prev) - self.a_max * dt * steps, 0.0)
        return np.clip(np.sign(self.u_prev) * speed, -self.v_max, self.v_max)

    def finish(self, controls: np.ndarray, status: str, iterations: int) -> HorizonPlan:
        plan = HorizonPlan.from_controls(self.ctx.x0, controls, self.cfg.dt)
        plan.costs = self.evaluate(controls, with_gradient=False)[0]
        plan.status = status
        plan.iterations = iterations
        return plan


def total_cost(plan: HorizonPlan, ctx: PlannerContext, cfg: HorizonConfig) -> CostBreakdown:
    if plan.horizon != cfg.horizon:
        raise ValidationError(f"plan has {plan.horizon} controls, horizon K = {cfg.horizon}")
    if not np.array_equal(rollout(plan.states[0], plan.controls, cfg.dt), plan.states):
        raise ValidationError("plan states do not follow x_k+1 = x_k + u_k dt")
    if not np.array_equal(plan.states[0], ctx.x0):
        raise ValidationError("plan does not start at the context state x0")
    return HorizonProblem(ctx, cfg).evaluate(plan.controls, with_gradient=False)[0]


def optimize_horizon(
    initial: HorizonPlan, ctx: PlannerContext, cfg: HorizonConfig
) -> HorizonPlan:
    problem = HorizonProblem(ctx, cfg)
    problem.check_start()
    if initial.horizon != cfg.horizon:
        raise ValidationError(f"initial plan has {initial.horizon} controls, horizon K = {cfg.horizon}")
    n_dof = ctx.chain.n_dof
    bounds = [(-limit, limit) for limit in problem.v_max] * cfg.horizon
    start = np.clip(initial.controls, -problem.v_max, problem.v_max)

    flat = start.ravel()
    iterations = 0
    weight = cfg.penalty
    result = None
    for _ in range(cfg.penalty_rounds):
        result = minimize(
            problem.objective,
            flat,
            args=(weight,),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": cfg.max_iterations, "ftol": cfg.ftol, "gtol": cfg.gtol},
        )
        flat = result.x
        iterations += int(result.nit)
        if problem.violation(flat.reshape(-1, n_dof)) <= cfg.tolerance:
            break
        weight *= cfg.penalty_growth
    optimized = flat.reshape(-1, n_dof)
    solver_status = CONVERGED if result.success else LINE_SEARCH_FAILED
    if not result.success:
        logger.debug(f"horizon solver stopped early: {result.message}")

    candidates = [(optimized, solver_status)]
    if problem.violation(optimized) > cfg.tolerance:
        candidates.append((problem.repair(optimized), REPAIRED))
    candidates.append((initial.controls, INITIAL_KEPT))
    candidates.append((problem.braking(), BRAKING_FALLBACK))

    best = None
    for controls, status in candidates:
        if problem.violation(controls) > cfg.tolerance:
            continue
        cost = problem.evaluate(controls, with_gradient=False)[0].total
        if best is None or cost < best[0]:
            best = (cost, controls, status)
    if best is None:
        logger.warning("no feasible plan found, falling back to braking")
        return problem.finish(problem.braking(), INFEASIBLE, iterations)
    _, controls, status = best
    if status in FALLBACK_STATUSES:
        logger.warning(f"optimized plan rejected, using the {status} plan")
    return problem.finish(controls, status, iterations)


def goal_directed_controls(ctx: PlannerContext, cfg: HorizonConfig) -> np.ndarray:
    """constant velocity that reaches the goal at the end of the horizon, within the velocity limits"""
    velocity = (ctx.goal - ctx.x0) / (cfg.horizon * cfg.dt)
    velocity = np.clip(velocity, -ctx.chain.velocity, ctx.chain.velocity)
    return np.tile(velocity, (cfg.horizon, 1))


def receding_horizon_step(
    ctx: PlannerContext, cfg: HorizonConfig, previous: Optional[HorizonPlan] = None
) -> Tuple[np.ndarray, HorizonPlan]:
    """optimize from the shifted previous plan and return u_0 for execution"""
    if previous is None or previous.horizon != cfg.horizon:
        initial = HorizonPlan.from_controls(ctx.x0, goal_directed_controls(ctx, cfg), cfg.dt)
    else:
        initial = previous.shifted(ctx.x0, cfg.dt)
    plan = optimize_horizon(initial, ctx, cfg)
    logger.debug(
        f"t={ctx.t0:.2f} plan {plan.status} after {plan.iterations} iterations, J={plan.cost:.6g}"
    )
    return plan.controls[0].copy(), plan
