"""Receding-horizon CACC controller.

At every step the controller

1. estimates the current state from the delayed, noisy observation by shifting it
   forward over the delay with the measured ego speeds and the predicted front
   accelerations (``shift_state()``),
2. predicts the front acceleration over the horizon: the trusted V2V forecast inside the
   trust window, worst-case braking outside it (``predict_front_accel()``),
3. solves a finite-horizon quadratic program over the feedback-linearized dynamics with
   the terminal constraint taken from the invariant family (``solve()``),
4. applies only the first torque (``step_closed_loop()``).

The decision variables of the quadratic program are the gaps d_1..d_N, the ego speeds
v_1..v_N and the linear inputs u_0..u_{N-1}, the latter scaled by ``torque_scale``. The
cost penalizes the gap above d_min, the wheel torque T_k = u_k + psi(v_k, d_k) and its
increments, where psi is the resisting torque of ``dynamics.steady_torque``. psi is
linearized around the previous iterate, so the constraints are exact and only the cost
changes between passes.

Solver failures never leave this module. A quadratic program that is infeasible, or whose
solution violates its constraints by more than ``SAFETY_TOL``, yields the
``infeasible-fallback`` status and maximum braking.

::

        cfg = controller.MpcConfig.from_config(conf["mpc"])
        sys = cfg.linear_system(params)
        family = invariant.cached_invariant_family(sys, cfg.d_min, cfg.v_max)
        ctrl = controller.CaccController(params, cfg, family, channel_cfg)
"""

import importlib.metadata
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import osqp
from packaging.specifiers import SpecifierSet
from packaging.version import Version
from scipy import sparse

from . import dynamics
from . import invariant
from . import v2v
from .dynamics import PlatoonState
from .src import config as cf
from .src.logger import logging

logger = logging.getLogger("cacclab")

OPTIMAL = "optimal"
MAX_ITER = "max-iter"
FALLBACK = "infeasible-fallback"
STATUSES = (OPTIMAL, MAX_ITER, FALLBACK)

SAFETY_TOL = 1e-6

_SOLVED = ("solved",)
_INACCURATE = ("solved inaccurate", "maximum iterations reached", "run time limit reached")


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, weights and constraint bounds of the controller.

    Parameters
    ----------
    horizon : int
        prediction horizon N_p [steps]
    t_s : float
        step length [s]
    weight_q, weight_r, weight_d : float
        weights of the gap tracking, torque and torque increment terms
    d_min, v_max : float
        minimum gap [m] and maximum speed [m/s]
    torque_min, torque_max : float
        wheel torque bounds [N m]
    a_min, a_max : float
        assumed front acceleration bounds [m/s^2]
    sqp_iters : int
        linearization passes per step
    torque_scale : float
        torque unit of the quadratic program [N m]
    """

    horizon: int = 20
    t_s: float = 0.2
    weight_q: float = 1.0
    weight_r: float = 1e-6
    weight_d: float = 1e-4
    d_min: float = 5.0
    v_max: float = 40.0
    torque_min: float = -2500.0
    torque_max: float = 1083.0
    a_min: float = -6.0
    a_max: float = 3.0
    sqp_iters: int = 2
    torque_scale: float = 1000.0

    def __post_init__(self):
        if self.horizon < 1 or int(self.horizon) != self.horizon:
            raise ValueError(f"Horizon must be a positive whole number of steps, got {self.horizon}")
        if not self.t_s > 0:
            raise ValueError(f"Step length must be positive, got {self.t_s}")
        for name in ("weight_q", "weight_r", "weight_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not self.d_min > 0:
            raise ValueError(f"d_min must be positive, got {self.d_min}")
        if not self.v_max > 0:
            raise ValueError(f"v_max must be positive, got {self.v_max}")
        if not self.torque_min < self.torque_max:
            raise ValueError(f"Empty torque range [{self.torque_min}, {self.torque_max}]")
        if not self.a_min < 0 <= self.a_max:
            raise ValueError(f"Acceleration bounds need a_min < 0 <= a_max, got [{self.a_min}, {self.a_max}]")
        if self.sqp_iters < 1:
            raise ValueError(f"sqp_iters must be at least 1, got {self.sqp_iters}")
        if not self.torque_scale > 0:
            raise ValueError(f"torque_scale must be positive, got {self.torque_scale}")

    @classmethod
    def from_config(cls, section):
        return cls(
            horizon=int(section["horizon"]),
            t_s=float(section["t_s"]),
            weight_q=float(section["weight_q"]),
            weight_r=float(section["weight_r"]),
            weight_d=float(section["weight_d"]),
            d_min=float(section["d_min"]),
            v_max=float(section["v_max"]),
            torque_min=float(section["torque_min"]),
            torque_max=float(section["torque_max"]),
            a_min=float(section["a_min"]),
            a_max=float(section["a_max"]),
            sqp_iters=int(section["sqp_iters"]),
            torque_scale=float(section["torque_scale"]),
        )

    def linear_system(self, params, grade_range=(0.0, 0.0), half_drag=False):
        """Feedback-linearized system matching these bounds"""
        return invariant.build_linear_system(
            params,
            t_s=self.t_s,
            torque_min=self.torque_min,
            torque_max=self.torque_max,
            v_max=self.v_max,
            a_min=self.a_min,
            a_max=self.a_max,
            grade_range=grade_range,
            half_drag=half_drag,
        )


@dataclass
class MpcSolution:
    """Result of one horizon solve.

    ``inputs`` holds the wheel torques T(t|t)..T(t+N-1|t) [N m], ``linear_inputs`` the
    matching linear inputs, and ``states`` the N + 1 predicted states x(t|t)..x(t+N|t).
    A fallback solution holds only the braking torque and no states.
    """

    inputs: np.ndarray
    states: list
    status: str
    cost: float = math.nan
    linear_inputs: np.ndarray = None
    iterations: int = 0
    terminal_node: float = math.nan

    @property
    def applied(self):
        return float(self.inputs[0])

    @property
    def feasible(self):
        return self.status != FALLBACK


def predict_front_accel(msg, k, t, h, n_t, a_min):
    """Front acceleration assumed for step `k` when planning at step `t`.

    The forecast entry k - (t - h) inside the trust window [t - h, t - h + n_t], `a_min`
    outside it or when no connected message is available.
    """
    if msg is None or not msg.connected:
        return float(a_min)
    j = int(k) - (int(t) - int(h))
    if 0 <= j <= min(int(n_t), len(msg.forecast) - 1):
        return float(msg.forecast[j])
    return float(a_min)


class FrontPredictor:
    """Front acceleration predictor bound to the message received at step `t`"""

    def __init__(self, msg, t, a_min):
        self.msg = msg
        self.t = int(t)
        self.a_min = float(a_min)
        if msg is None:
            self.h = 0
            self.n_t = 0
        else:
            self.h = self.t - msg.stamp
            self.n_t = msg.trust_horizon

    def __call__(self, k):
        return predict_front_accel(self.msg, k, self.t, self.h, self.n_t, self.a_min)


def shift_state(obs, ego_speeds, h, predictor, t_s, n_d_max=0.0, n_vf_max=0.0):
    """Estimate x(t|t) from the observation taken at step t - h.

    The estimate starts from the observed gap and front speed, lowered by the noise bounds,
    and rolls forward h steps: the gap integrates the front speed minus the measured ego
    speed, the front speed integrates the predicted acceleration and is clamped at zero.

    Parameters
    ----------
    obs : v2v.Observation
        delayed observation with stamp t - h
    ego_speeds : sequence
        measured ego speeds, the last h + 1 of which are v(t-h)..v(t)
    h : int
        delay [steps]
    predictor : callable
        front acceleration per absolute step
    t_s : float
        step length [s]
    n_d_max, n_vf_max : float
        noise bounds of the gap and front speed channels

    Raises
    ------
    MissingHistoryError
        fewer than h + 1 ego speeds
    """
    h = int(h)
    if h < 0:
        raise ValueError(f"Delay must be nonnegative, got {h}")
    if len(ego_speeds) < h + 1:
        errmsg = f"Delay of {h} steps needs {h + 1} ego speeds, {len(ego_speeds)} available"
        logger.error(errmsg)
        raise cf.MissingHistoryError(errmsg)
    history = [max(float(v), 0.0) for v in ego_speeds[len(ego_speeds) - h - 1:]]
    d = obs.d - n_d_max
    v_f = max(obs.v_f - n_vf_max, 0.0)
    for j in range(h):
        d += t_s * (v_f - history[j])
        v_f = max(v_f + t_s * predictor(obs.stamp + j), 0.0)
    return PlatoonState(d=float(d), v=history[h], v_f=float(v_f))


def _osqp_settings():
    try:
        version = Version(importlib.metadata.version("osqp"))
    except importlib.metadata.PackageNotFoundError:
        version = Version("0")
    renamed = version in SpecifierSet(cf.__osqp_renamed_settings_spec__)
    settings = {
        "verbose": False,
        "eps_abs": 1e-8,
        "eps_rel": 1e-8,
        "max_iter": 20000,
    }
    if renamed:
        settings.update(polishing=True, warm_starting=True)
    else:
        settings.update(polish=True, warm_start=True)
    return settings


def _psi_linearization(params, road, v_bar, d_bar):
    """Value and partial derivatives of the resisting torque at (v_bar, d_bar)"""
    d_eval = max(d_bar, 0.0)
    psi = dynamics.steady_torque(params, road, v_bar, d_eval)
    cx = dynamics.drag_coefficient(params, d_eval)
    rho_a = params.air_density * params.frontal_area
    dpsi_dv = params.wheel_radius * (params.c_v + rho_a * cx * v_bar)
    dcx_dd = params.c_x0 * params.c_x1 / (d_eval + params.c_x2) ** 2
    dpsi_dd = params.wheel_radius * 0.5 * rho_a * dcx_dd * v_bar**2
    return psi, dpsi_dv, dpsi_dd


class _Layout:
    """Index map of the decision vector [d_1..d_N, v_1..v_N, u_0..u_{N-1}]"""

    def __init__(self, n):
        self.n = n
        self.size = 3 * n

    def d(self, k):
        return k - 1

    def v(self, k):
        return self.n + k - 1

    def u(self, k):
        return 2 * self.n + k


def _rollout(sys, x0, u_linear, front_speeds):
    """Exact linear-model states (d, v) over the horizon, without clamps"""
    n = len(u_linear)
    d = np.empty(n + 1)
    v = np.empty(n + 1)
    d[0], v[0] = x0.d, x0.v
    for k in range(n):
        d[k + 1] = d[k] + sys.t_s * (front_speeds[k] - v[k])
        v[k + 1] = v[k] + sys.input_gain * u_linear[k]
    return d, v


def _constraint_violation(cfg, sys, terminal, x0, psi0, u_linear, d, v):
    """Largest violation of the input, state and terminal constraints"""
    worst = 0.0
    t0 = u_linear[0] + psi0
    worst = max(worst, cfg.torque_min - t0, t0 - cfg.torque_max)
    if len(u_linear) > 1:
        rest = u_linear[1:]
        worst = max(worst, float(np.max(sys.u_lo - rest)), float(np.max(rest - sys.u_hi)))
    inner_d = d[1:-1]
    inner_v = v[1:-1]
    if inner_d.size:
        worst = max(
            worst,
            float(np.max(cfg.d_min - inner_d)),
            float(np.max(-inner_v)),
            float(np.max(inner_v - cfg.v_max)),
        )
    if len(terminal):
        worst = max(worst, float(np.max(terminal.A @ np.array([d[-1], v[-1]]) - terminal.b)))
    return worst


def _assemble(cfg, sys, params, road, x0, front_speeds, reference, terminal, psi0, prev_torque):
    """Sparse matrices of one quadratic program"""
    n = cfg.horizon
    lay = _Layout(n)
    s = cfg.torque_scale
    t_s = sys.t_s

    # cost rows: weight * (row . z + const)^2
    rows, consts, weights = [], [], []

    def term(entries, const, weight):
        if weight == 0:
            return
        row = np.zeros(lay.size)
        for idx, val in entries:
            row[idx] += val
        rows.append(row)
        consts.append(const)
        weights.append(weight)

    for k in range(1, n + 1):
        term([(lay.d(k), 1.0)], -cfg.d_min, cfg.weight_q)

    # scaled torque T_k / s as an affine function of z
    torque_terms = [([(lay.u(0), 1.0)], psi0 / s)]
    d_ref, v_ref = reference
    for k in range(1, n):
        psi, g_v, g_d = _psi_linearization(params, road, v_ref[k], d_ref[k])
        entries = [(lay.u(k), 1.0), (lay.v(k), g_v / s), (lay.d(k), g_d / s)]
        const = (psi - g_v * v_ref[k] - g_d * d_ref[k]) / s
        torque_terms.append((entries, const))

    for entries, const in torque_terms:
        term(entries, const, cfg.weight_r)
    if prev_torque is not None:
        entries, const = torque_terms[0]
        term(entries, const - prev_torque / s, cfg.weight_d)
    for k in range(1, n):
        cur_entries, cur_const = torque_terms[k]
        prev_entries, prev_const = torque_terms[k - 1]
        entries = cur_entries + [(i, -val) for i, val in prev_entries]
        term(entries, cur_const - prev_const, cfg.weight_d)

    if rows:
        G = np.array(rows)
        w = np.array(weights)
        c = np.array(consts)
        P = 2.0 * (G.T * w) @ G
        q = 2.0 * G.T @ (w * c)
    else:
        P = np.zeros((lay.size, lay.size))
        q = np.zeros(lay.size)

    A_rows, lower, upper = [], [], []

    def constraint(entries, lo, hi):
        row = np.zeros(lay.size)
        for idx, val in entries:
            row[idx] += val
        A_rows.append(row)
        lower.append(lo)
        upper.append(hi)

    gain = sys.input_gain * s
    for k in range(n):
        entries = [(lay.d(k + 1), 1.0)]
        rhs = t_s * front_speeds[k]
        if k == 0:
            rhs += x0.d - t_s * x0.v
        else:
            entries += [(lay.d(k), -1.0), (lay.v(k), t_s)]
        constraint(entries, rhs, rhs)

        entries = [(lay.v(k + 1), 1.0), (lay.u(k), -gain)]
        rhs = 0.0
        if k == 0:
            rhs = x0.v
        else:
            entries.append((lay.v(k), -1.0))
        constraint(entries, rhs, rhs)

    constraint([(lay.u(0), 1.0)], (cfg.torque_min - psi0) / s, (cfg.torque_max - psi0) / s)
    for k in range(1, n):
        constraint([(lay.u(k), 1.0)], sys.u_lo / s, sys.u_hi / s)
        constraint([(lay.d(k), 1.0)], cfg.d_min, np.inf)
        constraint([(lay.v(k), 1.0)], 0.0, cfg.v_max)
    for (a_d, a_v), b in zip(terminal.A, terminal.b):
        constraint([(lay.d(n), a_d), (lay.v(n), a_v)], -np.inf, b)

    P = sparse.csc_matrix(sparse.triu(sparse.csc_matrix(P)))
    A = sparse.csc_matrix(np.array(A_rows))
    return P, q, A, np.array(lower), np.array(upper)


def _cost(cfg, params, road, d, v, torques, prev_torque):
    s = cfg.torque_scale
    cost = cfg.weight_q * float(np.sum((d[1:] - cfg.d_min) ** 2))
    cost += cfg.weight_r * float(np.sum((torques / s) ** 2))
    diffs = np.diff(torques)
    if prev_torque is not None:
        diffs = np.concatenate([[torques[0] - prev_torque], diffs])
    cost += cfg.weight_d * float(np.sum((diffs / s) ** 2))
    return cost


def fallback_solution(cfg, reason=""):
    """Maximum braking"""
    if reason:
        logger.warning(f"Controller fallback to maximum braking: {reason}")
    return MpcSolution(
        inputs=np.full(cfg.horizon, cfg.torque_min),
        states=[],
        status=FALLBACK,
    )


def solve(
    x_tilde,
    predictor,
    family,
    cfg,
    params,
    sys=None,
    road=dynamics.FLAT_ROAD,
    t=0,
    prev_solution=None,
    prev_torque=None,
):
    """Solve the horizon problem from the estimate `x_tilde`.

    Parameters
    ----------
    x_tilde : PlatoonState
        estimated current state
    predictor : callable
        front acceleration per absolute step
    family : invariant.InvariantFamily
        terminal family, computed for the same bounds, step length and a_min
    cfg : MpcConfig
    params : dynamics.VehicleParams
    sys : invariant.LinearPlatoonSystem, optional
        by default ``cfg.linear_system(params)``
    road : dynamics.RoadProfile
    t : int
        current step, the origin of the predictor
    prev_solution : MpcSolution, optional
        warm start and linearization reference
    prev_torque : float, optional
        torque applied at the previous step, seeds the first increment

    Returns
    -------
    MpcSolution
    """
    sys = sys or cfg.linear_system(params)
    n = cfg.horizon
    if abs(family.metadata.get("a_min", sys.a_min) - sys.a_min) > 1e-12:
        logger.warning(
            f"Terminal family a_min={family.metadata.get('a_min')} differs from the controller a_min={sys.a_min}"
        )

    if (
        x_tilde.d < cfg.d_min - SAFETY_TOL
        or x_tilde.v > cfg.v_max + SAFETY_TOL
    ):
        return fallback_solution(cfg, f"initial state d={x_tilde.d:.3f}, v={x_tilde.v:.3f} outside X")

    front_speeds = np.empty(n + 1)
    front_speeds[0] = x_tilde.v_f
    for k in range(n):
        front_speeds[k + 1] = max(front_speeds[k] + sys.t_s * predictor(t + k), 0.0)
    terminal = invariant.terminal_halfspaces(family, front_speeds[n])
    psi0 = dynamics.steady_torque(params, road, x_tilde.v, x_tilde.d)

    # linearization reference and warm start from the shifted previous plan
    if prev_solution is not None and prev_solution.feasible and prev_solution.states:
        d_prev = [s.d for s in prev_solution.states]
        v_prev = [s.v for s in prev_solution.states]
        d_ref = np.array(d_prev[1:] + [d_prev[-1]])
        v_ref = np.array(v_prev[1:] + [v_prev[-1]])
        d_ref[0], v_ref[0] = x_tilde.d, x_tilde.v
        u_prev = list(prev_solution.linear_inputs[1:]) + [0.0]
        u_ref = np.array(u_prev)
    else:
        d_ref = np.full(n + 1, x_tilde.d)
        v_ref = np.full(n + 1, x_tilde.v)
        u_ref = np.zeros(n)

    settings = _osqp_settings()
    best = None
    total_iter = 0
    for sqp in range(cfg.sqp_iters):
        P, q, A, lo, hi = _assemble(
            cfg, sys, params, road, x_tilde, front_speeds, (d_ref, v_ref), terminal, psi0, prev_torque
        )
        z0 = np.concatenate([d_ref[1:], v_ref[1:], u_ref / cfg.torque_scale])
        try:
            solver = osqp.OSQP()
            solver.setup(P=P, q=q, A=A, l=lo, u=hi, **settings)
            solver.warm_start(x=z0)
            res = solver.solve()
        except (ValueError, RuntimeError) as e:
            logger.warning(f"QP pass {sqp} raised {e}")
            continue
        status = str(res.info.status)
        total_iter += int(res.info.iter)
        x = res.x
        if x is None or np.any(~np.isfinite(np.asarray(x, dtype=float))):
            logger.debug(f"QP pass {sqp} returned no solution (status {status})")
            continue
        x = np.asarray(x, dtype=float)
        u_linear = x[2 * n:] * cfg.torque_scale
        d, v = _rollout(sys, x_tilde, u_linear, front_speeds)
        violation = _constraint_violation(cfg, sys, terminal, x_tilde, psi0, u_linear, d, v)
        if violation > SAFETY_TOL:
            logger.debug(f"QP pass {sqp} status {status}, constraint violation {violation:.2e}")
            continue
        if status in _SOLVED:
            mapped = OPTIMAL
        elif status in _INACCURATE:
            mapped = MAX_ITER
        else:
            continue
        best = (mapped, u_linear, d, v)
        d_ref, v_ref, u_ref = d, v, u_linear

    if best is None:
        return fallback_solution(cfg, f"no feasible QP solution at step {t}")

    status, u_linear, d, v = best
    if status == MAX_ITER:
        logger.warning(f"QP at step {t} solved inaccurately, constraints hold within {SAFETY_TOL}")
        warnings.warn(f"Inaccurate QP solve at step {t}")
    torques = np.array(
        [u_linear[0] + psi0]
        + [u_linear[k] + dynamics.steady_torque(params, road, v[k], max(d[k], 0.0)) for k in range(1, n)]
    )
    torques[0] = min(max(torques[0], cfg.torque_min), cfg.torque_max)
    states = [
        PlatoonState(d=float(d[k]), v=max(float(v[k]), 0.0), v_f=float(front_speeds[k]))
        for k in range(n + 1)
    ]
    return MpcSolution(
        inputs=torques,
        states=states,
        status=status,
        cost=_cost(cfg, params, road, d, v, torques, prev_torque),
        linear_inputs=u_linear,
        iterations=total_iter,
        terminal_node=float(family.grid[family.slice_index(front_speeds[n])]),
    )


class CaccController:
    """One vehicle's controller with its memory of the previous step.

    Parameters
    ----------
    params : dynamics.VehicleParams
        parameters of the controlled vehicle
    cfg : MpcConfig
    family : invariant.InvariantFamily
        terminal family for cfg's bounds
    channel : v2v.ChannelConfig
        delay and noise bounds the estimator accounts for
    road : dynamics.RoadProfile
    sys : invariant.LinearPlatoonSystem, optional
    """

    def __init__(self, params, cfg, family, channel=None, road=dynamics.FLAT_ROAD, sys=None):
        self.params = params
        self.cfg = cfg
        self.family = family
        self.channel = channel or v2v.ChannelConfig()
        self.road = road
        self.sys = sys or cfg.linear_system(params)
        self.prev_solution = None
        self.prev_torque = None

    def reset(self):
        self.prev_solution = None
        self.prev_torque = None

    def predictor(self, msg, t):
        return FrontPredictor(msg, t, self.cfg.a_min)

    def estimate(self, obs, ego_speeds, predictor, t):
        """Lower estimate of gap and front speed at step t"""
        h = int(t) - obs.stamp
        x = shift_state(
            obs,
            ego_speeds,
            h,
            predictor,
            self.cfg.t_s,
            n_d_max=self.channel.n_d_max,
            n_vf_max=self.channel.n_vf_max,
        )
        prev = self.prev_solution
        if prev is not None and prev.feasible and len(prev.states) > 1:
            # the previous plan's one-step prediction of d and v_f does not depend on its input
            nxt = prev.states[1]
            x = PlatoonState(d=max(x.d, nxt.d), v=x.v, v_f=max(x.v_f, nxt.v_f))
        return x

    def control(self, t, msg, obs, ego_speeds):
        """Torque to apply at step t and the solution it comes from"""
        if obs is None:
            solution = fallback_solution(self.cfg, f"no observation at step {t}")
        else:
            predictor = self.predictor(msg, t)
            x_tilde = self.estimate(obs, ego_speeds, predictor, t)
            solution = solve(
                x_tilde,
                predictor,
                self.family,
                self.cfg,
                self.params,
                sys=self.sys,
                road=self.road,
                t=t,
                prev_solution=self.prev_solution,
                prev_torque=self.prev_torque,
            )
        self.prev_solution = solution
        self.prev_torque = solution.applied
        return solution.applied, solution


@dataclass
class PlantState:
    """True closed-loop state with the ego history the estimator needs"""

    step: int
    d: float
    v: float
    v_f: float
    ego_positions: list = field(default_factory=list)
    ego_speeds: list = field(default_factory=list)
    history_start: int = 0

    def ego_position(self, k):
        i = int(k) - self.history_start
        if i < 0 or i >= len(self.ego_positions):
            raise cf.InsufficientHistoryError(f"No ego position recorded for step {k}")
        return self.ego_positions[i]

    @classmethod
    def start(cls, front, ego_speed, gap, prehistory=0):
        """Ego vehicle `gap` behind the front vehicle at step 0, having cruised at
        `ego_speed` for `prehistory` steps before it"""
        t_s = front.t_s
        p0 = front.position(0) - gap
        positions = [p0 - (prehistory - i) * t_s * ego_speed for i in range(prehistory + 1)]
        return cls(
            step=0,
            d=float(gap),
            v=float(ego_speed),
            v_f=front.speed(0),
            ego_positions=positions,
            ego_speeds=[float(ego_speed)] * (prehistory + 1),
            history_start=-prehistory,
        )


def step_closed_loop(plant, front, channel, controller):
    """Run one receding-horizon step and advance the plant.

    Parameters
    ----------
    plant : PlantState
        true state at the current step, updated in place
    front : v2v.FrontTrajectory
    channel : v2v.ChannelConfig
    controller : CaccController

    Returns
    -------
    tuple
        (applied torque, log record of the current step)
    """
    t = plant.step
    cfg = controller.cfg
    try:
        msg = v2v.emit(front, t, channel, (cfg.a_min, cfg.a_max))
        obs = v2v.receive(msg, plant.ego_position(msg.stamp), channel, step=t)
    except cf.InsufficientHistoryError as e:
        logger.warning(f"Step {t}: {e}")
        msg, obs = None, None

    torque, solution = controller.control(t, msg, obs, plant.ego_speeds)
    params = controller.params
    record = {
        "t": t * cfg.t_s,
        "d": plant.d,
        "v": plant.v,
        "v_f": plant.v_f,
        "T_w": torque,
        "P_wheel": torque * plant.v / params.wheel_radius,
        "status": solution.status,
        "iterations": solution.iterations,
    }
    logger.debug(f"Step {t}: d={plant.d:.3f} v={plant.v:.3f} T={torque:.1f} {solution.status}")

    x = PlatoonState(d=plant.d, v=plant.v, v_f=plant.v_f)
    nxt = dynamics.step(params, controller.road, x, torque, front.accel(t), cfg.t_s)
    plant.ego_positions.append(plant.ego_positions[-1] + cfg.t_s * plant.v)
    plant.ego_speeds.append(nxt.v)
    plant.step = t + 1
    plant.d = front.position(t + 1) - plant.ego_positions[-1]
    plant.v = nxt.v
    plant.v_f = front.speed(t + 1)
    return torque, record
