"""Robust control invariant sets for the two-vehicle system.

The controller's terminal constraint comes from this module. Cancelling gravity, rolling
resistance and air drag in the wheel torque turns the longitudinal dynamics into a linear
system in x = (d, v, v_f) with a linear input u (a torque in N m):

    d'   = d + t_s (v_f - v)
    v'   = v + t_s / (M R_w) u
    v_f' = (v_f + t_s a_f)^+,        a_f in [a_min, a_max]

The cancelled terms must be paid out of the torque range, so u is confined to the shrunk
interval [u_lo, u_hi] built by ``build_linear_system()``. ``safe_input()`` turns a linear
input back into a wheel torque, and the shrink guarantees that the torque stays inside the
physical bounds.

The invariant set is stored as a family of polytopes over (d, v), one per front speed on a
grid from 0 to v_max. The grid step divides the speed lost in one step of maximum front
braking, t_s |a_min|, into a whole number m of cells, so one worst-case step moves the front
speed exactly m nodes down. Slice 0 (front stopped) is the fixpoint of
Omega <- X intersect Pre(Omega); every other slice i is X intersect Pre(slice max(i - m, 0)).
Pre eliminates the input over [u_lo, u_hi] and holds for every front speed inside the cell.
Slices grow with the front speed, and a state is looked up in the slice of the largest node
not above its front speed.

Families are cached on disk under INVARIANT_CACHE_DIR, keyed by a digest of everything
that determines them:

::

        sys = invariant.build_linear_system(params, t_s=0.2, torque_min=-2500.0,
                                            torque_max=1083.0, v_max=40.0, a_min=-6.0)
        family = invariant.cached_invariant_family(sys, d_min=5.0, v_max=40.0)
        family.contains(20.0, 15.0, 25.0)
"""

import math
import os
import shutil
import tempfile
import warnings
from collections import OrderedDict
from dataclasses import dataclass

import kim_edn
import numpy as np

from . import dynamics
from . import polytopes
from .polytopes import Polytope
from .src import config as cf
from .src import provenance
from .src.logger import logging

logger = logging.getLogger("cacclab")

MANIFEST_FILE = "manifest.edn"
DEFAULT_A_MAX = 3.0
GRID_TOL = 1e-9
POLICY_TOL = 1e-6


@dataclass(frozen=True)
class LinearPlatoonSystem:
    """Feedback-linearized platoon dynamics with a shrunk input interval.

    Parameters
    ----------
    t_s : float
        step length [s]
    mass, wheel_radius : float
        ego vehicle mass [kg] and wheel radius [m]
    u_lo, u_hi : float
        linear input interval [N m]
    a_min, a_max : float
        front acceleration bounds [m/s^2]
    """

    t_s: float
    mass: float
    wheel_radius: float
    u_lo: float
    u_hi: float
    a_min: float
    a_max: float = DEFAULT_A_MAX
    half_drag: bool = False

    def __post_init__(self):
        if not self.t_s > 0:
            raise ValueError(f"Step length must be positive, got {self.t_s}")
        if not self.u_lo < self.u_hi:
            errmsg = (
                f"Input shrink leaves no control authority: u_lo={self.u_lo:.1f} >= u_hi={self.u_hi:.1f}"
            )
            logger.error(errmsg)
            raise cf.AuthorityAnnihilatedError(errmsg)
        if not self.a_min < 0 <= self.a_max:
            raise ValueError(
                f"Front acceleration bounds need a_min < 0 <= a_max, got [{self.a_min}, {self.a_max}]"
            )

    @property
    def input_gain(self):
        """Speed change per unit linear input over one step"""
        return self.t_s / (self.mass * self.wheel_radius)

    def matrices(self):
        """(A, B, E) of x' = A x + B u + E a_f before the front speed clamp"""
        A = np.array([[1.0, -self.t_s, self.t_s], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        B = np.array([0.0, self.input_gain, 0.0])
        E = np.array([0.0, 0.0, self.t_s])
        return A, B, E

    def successor(self, d, v, v_f, u, a_f):
        return (
            d + self.t_s * (v_f - v),
            v + self.input_gain * u,
            max(v_f + self.t_s * a_f, 0.0),
        )

    def key(self):
        return OrderedDict(
            [
                ("a_max", self.a_max),
                ("a_min", self.a_min),
                ("half_drag", self.half_drag),
                ("mass", self.mass),
                ("t_s", self.t_s),
                ("u_hi", self.u_hi),
                ("u_lo", self.u_lo),
                ("wheel_radius", self.wheel_radius),
            ]
        )


def grade_resistance_bounds(params, grade_min=0.0, grade_max=0.0):
    """Lower and upper bound of sin(theta) + C_r cos(theta) over a grade interval"""
    if grade_min > grade_max:
        raise ValueError(f"Empty grade range [{grade_min}, {grade_max}]")
    dynamics.RoadProfile(grade_min)
    dynamics.RoadProfile(grade_max)
    candidates = [grade_min, grade_max]
    stationary = math.atan2(1.0, params.c_r)
    if grade_min < stationary < grade_max:
        candidates.append(stationary)
    vals = [math.sin(th) + params.c_r * math.cos(th) for th in candidates]
    return min(vals), max(vals)


def build_linear_system(
    params,
    t_s,
    torque_min,
    torque_max,
    v_max,
    a_min,
    a_max=DEFAULT_A_MAX,
    grade_range=(0.0, 0.0),
    half_drag=False,
):
    """Shrink the torque range into the linear input interval.

    u_lo = T_min - R_w M g c_lo
    u_hi = T_max - R_w (M g c_hi + k rho A C_x,max v_max^2 + C_v v_max)

    where c_lo, c_hi bound sin(theta) + C_r cos(theta) over the grade range, C_x,max is the
    largest drag coefficient at any nonnegative gap, and k is 1, or 1/2 when `half_drag` is
    set.

    Raises
    ------
    AuthorityAnnihilatedError
        u_lo >= u_hi
    """
    c_lo, c_hi = grade_resistance_bounds(params, *grade_range)
    cx_max = max(params.c_x0, dynamics.drag_coefficient(params, 0.0))
    k = 0.5 if half_drag else 1.0
    weight = params.mass * params.gravity
    u_lo = torque_min - params.wheel_radius * weight * c_lo
    u_hi = torque_max - params.wheel_radius * (
        weight * c_hi
        + k * params.air_density * params.frontal_area * cx_max * v_max**2
        + params.c_v * v_max
    )
    logger.debug(f"Linear input interval [{u_lo:.1f}, {u_hi:.1f}] N m (half_drag={half_drag})")
    return LinearPlatoonSystem(
        t_s=float(t_s),
        mass=params.mass,
        wheel_radius=params.wheel_radius,
        u_lo=float(u_lo),
        u_hi=float(u_hi),
        a_min=float(a_min),
        a_max=float(a_max),
        half_drag=bool(half_drag),
    )


def speed_grid(sys, v_max, grid_step=1.0):
    """Front speed grid aligned with worst-case braking.

    Returns
    -------
    tuple
        (nodes, cell width, nodes moved per braking step)
    """
    if not grid_step > 0:
        raise ValueError(f"Grid step must be positive, got {grid_step}")
    drop = sys.t_s * abs(sys.a_min)
    m = max(1, math.ceil(drop / grid_step - GRID_TOL))
    delta = drop / m
    count = math.ceil(v_max / delta - GRID_TOL) + 1
    return delta * np.arange(count), delta, m


def state_constraints(d_min, v_max):
    """X = {d >= d_min, 0 <= v <= v_max} over (d, v)"""
    if not d_min > 0:
        raise ValueError(f"d_min must be positive, got {d_min}")
    return Polytope(
        np.array([[-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
        np.array([-d_min, v_max, 0.0]),
    )


def robust_pre(sys, target, front_speed, cell_width, X):
    """States of X that some u in [u_lo, u_hi] steers into `target` for every front speed
    in [front_speed, front_speed + cell_width]."""
    t_s = sys.t_s
    # (d, v, u) -> (d', v') at the lowest front speed of the cell
    M = np.array([[1.0, -t_s, 0.0], [0.0, 1.0, sys.input_gain]])
    P_xu = polytopes.affine_preimage(target, M, np.array([t_s * front_speed, 0.0]))
    P_xu = polytopes.erode(P_xu, [0.0], [cell_width], np.array([[t_s], [0.0], [0.0]]))
    projected = polytopes.project_out_input(P_xu, sys.u_lo, sys.u_hi)
    return polytopes.reduce(polytopes.intersect(X, projected))


class InvariantFamily:
    """Robust control invariant set as one (d, v) polytope per front speed node.

    Parameters
    ----------
    grid : array
        ascending front speed nodes starting at 0
    slices : list of Polytope
        one polytope over (d, v) per node
    metadata : dict
        a_min, a_max, d_min, v_max, torque bounds, t_s and computation details
    """

    def __init__(self, grid, slices, metadata):
        grid = np.asarray(grid, dtype=float)
        if len(slices) != grid.size or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise ValueError("Invariant family needs one slice per ascending grid node from 0")
        self.grid = grid
        self.slices = list(slices)
        self.metadata = dict(metadata)
        self.key = ""

    def __len__(self):
        return len(self.slices)

    def __repr__(self):
        return (
            f"InvariantFamily(a_min={self.metadata.get('a_min')}, nodes={len(self)}, "
            f"top={self.grid[-1]:.2f})"
        )

    @property
    def m_steps(self):
        return int(self.metadata["m_steps"])

    def slice_index(self, v_f):
        """Index of the largest node not above `v_f`; speeds beyond the grid use the top node"""
        if v_f < -GRID_TOL:
            raise ValueError(f"Front speed must be nonnegative, got {v_f}")
        idx = int(np.searchsorted(self.grid, v_f + GRID_TOL, side="right")) - 1
        return min(max(idx, 0), len(self) - 1)

    def slice_for(self, v_f):
        return self.slices[self.slice_index(v_f)]

    def contains(self, d, v, v_f, tol=polytopes.ABS_TOL):
        return bool(polytopes.contains(self.slice_for(v_f), [d, v], tol=tol))

    def save(self, path, key=None):
        """Write one polytope text file per node plus an edn manifest into `path`"""
        os.makedirs(path, exist_ok=True)
        files = []
        for i, P in enumerate(self.slices):
            name = f"slice_{i:03d}.txt"
            polytopes.save(P, os.path.join(path, name))
            files.append(name)
        manifest = OrderedDict()
        manifest["files"] = files
        manifest["format-version"] = cf.__format_version__
        manifest["grid"] = [float(g) for g in self.grid]
        manifest["key"] = key if key is not None else ""
        manifest["metadata"] = provenance._canonical(self.metadata)
        dest = os.path.join(path, MANIFEST_FILE)
        try:
            with open(dest, "w") as f:
                kim_edn.dump(manifest, f, indent=4)
        except OSError as e:
            raise OSError(f"Could not write invariant manifest {dest}: {e}") from e
        logger.info(f"Invariant family written to {path}")

    @classmethod
    def load(cls, path):
        dest = os.path.join(path, MANIFEST_FILE)
        if not os.path.isfile(dest):
            raise FileNotFoundError(f"No invariant manifest in {path}")
        with open(dest) as f:
            manifest = kim_edn.load(f)
        provenance.check_format_version(manifest.get("format-version", "0"), source=path)
        slices = [polytopes.load(os.path.join(path, name)) for name in manifest["files"]]
        family = cls(manifest["grid"], slices, manifest["metadata"])
        family.key = manifest.get("key", "")
        return family


def compute_invariant_family(sys, d_min, v_max, grid_step=1.0, tol=1e-6, max_iter=200):
    """Compute the robust control invariant family for `sys`.

    Parameters
    ----------
    sys : LinearPlatoonSystem
    d_min : float
        minimum gap [m]
    v_max : float
        maximum speed [m/s]
    grid_step : float
        largest allowed spacing of the front speed nodes [m/s]
    tol : float
        set equality tolerance of the fixpoint iteration
    max_iter : int
        iteration cap of the fixpoint; reaching it is reported, not raised

    Raises
    ------
    EmptyInvariantSetError
        no state can be kept safe under the bounds
    """
    grid, delta, m = speed_grid(sys, v_max, grid_step)
    X = state_constraints(d_min, v_max)

    omega = polytopes.reduce(X)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        nxt = robust_pre(sys, omega, grid[0], delta, X)
        if polytopes.is_empty(nxt):
            errmsg = (
                f"Invariant set empty for a_min={sys.a_min}, d_min={d_min}, "
                f"u in [{sys.u_lo:.1f}, {sys.u_hi:.1f}]"
            )
            logger.error(errmsg)
            raise cf.EmptyInvariantSetError(errmsg)
        done = polytopes.set_equal(nxt, omega, tol)
        omega = nxt
        logger.debug(f"Fixpoint iteration {iterations}: {len(omega)} facets")
        if done:
            converged = True
            break
    if not converged:
        logger.warning(
            f"Invariant fixpoint not converged after {max_iter} iterations (a_min={sys.a_min})"
        )
        warnings.warn(f"Invariant fixpoint not converged after {max_iter} iterations")

    slices = [omega]
    for i in range(1, grid.size):
        slices.append(robust_pre(sys, slices[max(i - m, 0)], grid[i], delta, X))

    metadata = OrderedDict(
        [
            ("a_max", sys.a_max),
            ("a_min", sys.a_min),
            ("cell_width", delta),
            ("converged", converged),
            ("d_min", float(d_min)),
            ("grid_step", float(grid_step)),
            ("half_drag", sys.half_drag),
            ("iterations", iterations),
            ("m_steps", m),
            ("t_s", sys.t_s),
            ("u_hi", sys.u_hi),
            ("u_lo", sys.u_lo),
            ("v_max", float(v_max)),
        ]
    )
    logger.info(
        f"Invariant family a_min={sys.a_min} computed: {grid.size} slices, "
        f"fixpoint {'converged' if converged else 'not converged'} after {iterations} iterations"
    )
    return InvariantFamily(grid, slices, metadata)


def family_cache_key(sys, d_min, v_max, grid_step=1.0, tol=1e-6, max_iter=200):
    key = sys.key()
    key.update(
        d_min=float(d_min),
        grid_step=float(grid_step),
        max_iter=int(max_iter),
        tol=float(tol),
        v_max=float(v_max),
    )
    return provenance.config_digest(key)


def cached_invariant_family(
    sys, d_min, v_max, grid_step=1.0, tol=1e-6, max_iter=200, cache_dir=None
):
    """Load the family from the cache when its key matches, otherwise compute and store it"""
    cache_dir = cache_dir or cf.INVARIANT_CACHE_DIR
    key = family_cache_key(sys, d_min, v_max, grid_step, tol, max_iter)
    path = os.path.join(cache_dir, key)
    if os.path.isfile(os.path.join(path, MANIFEST_FILE)):
        try:
            family = InvariantFamily.load(path)
            if family.key == key:
                logger.debug(f"Invariant cache hit {path}")
                return family
            logger.warning(f"Invariant cache entry {path} has a foreign key, recomputing")
        except (cf.IncompatibleFormatError, ValueError, OSError) as e:
            logger.warning(f"Invariant cache entry {path} unusable ({e}), recomputing")

    family = compute_invariant_family(sys, d_min, v_max, grid_step, tol, max_iter)
    try:
        os.makedirs(cache_dir, exist_ok=True)
        tmp = tempfile.mkdtemp(dir=cache_dir, prefix=".tmp-")
        family.save(tmp, key=key)
        if os.path.isdir(path):
            shutil.rmtree(path)
        os.replace(tmp, path)
    except OSError as e:
        logger.warning(f"Could not cache invariant family in {cache_dir}: {e}")
    family.key = key
    return family


def terminal_halfspaces(family, v_f_worst):
    """Terminal polytope over (d, v) for the predicted worst-case front speed at the
    horizon end, rounded down to the grid"""
    if v_f_worst < -GRID_TOL:
        raise ValueError(f"Worst-case front speed must be nonnegative, got {v_f_worst}")
    return family.slice_for(v_f_worst)


def safe_input(params, road, x, u_linear):
    """Wheel torque realizing the linear input `u_linear` on the full vehicle model.

    Adds back the resisting torque R_w (M g (sin(theta) + C_r cos(theta)) + C_v v
    + 1/2 rho A C_x(d) v^2) at the current state, so one step of ``dynamics.step`` moves the
    ego speed by exactly t_s u_linear / (M R_w) before the clamp.
    """
    return float(u_linear + dynamics.steady_torque(params, road, x.v, x.d))


def linear_input_interval(family, sys, d, v, v_f):
    """Interval of linear inputs whose successor stays in the family under worst-case
    front braking. Returns (lo, hi), with lo > hi when no such input exists."""
    i = family.slice_index(v_f)
    target = family.slices[max(i - family.m_steps, 0)]
    d_next = d + sys.t_s * (v_f - v)
    lo, hi = sys.u_lo, sys.u_hi
    for (a_d, a_v), b in zip(target.A, target.b):
        # a_d d' + a_v (v + gain u) <= b
        rest = b - a_d * d_next - a_v * v
        coef = a_v * sys.input_gain
        if abs(coef) <= polytopes.ZERO_ROW_TOL:
            if rest < -polytopes.ABS_TOL:
                return 1.0, -1.0
            continue
        bound = rest / coef
        if coef > 0:
            hi = min(hi, bound)
        else:
            lo = max(lo, bound)
    return lo, hi


def invariant_policy(family, sys, d, v, v_f, preferred=0.0):
    """Linear input closest to `preferred` that keeps the state in the family, or None"""
    lo, hi = linear_input_interval(family, sys, d, v, v_f)
    if lo > hi:
        # states on a facet may invert the interval within the fixpoint tolerance
        if lo - hi > POLICY_TOL / sys.input_gain:
            return None
        return float(0.5 * (lo + hi))
    return float(min(max(preferred, lo), hi))


def analytic_safe_set(sys, d_min, v_f, v_max=None):
    """Membership predicate over (d, v) from a direct stopping simulation.

    The ego brakes as hard as the linear input interval allows, without reversing, while
    the front vehicle brakes at a_min from `v_f` until it stops. A state is safe when it lies
    in X and the gap never drops below d_min before the ego vehicle has stopped.

    Returns
    -------
    callable
        predicate(d, v) accepting scalars or arrays
    """
    gain = sys.input_gain
    brake = -sys.u_lo * gain

    def predicate(d, v):
        d = np.asarray(d, dtype=float)
        v = np.asarray(v, dtype=float)
        d, v = np.broadcast_arrays(d, v)
        ok = (d >= d_min) & (v >= 0)
        if v_max is not None:
            ok &= v <= v_max
        gap = d.copy()
        ego = v.copy()
        front = float(v_f)
        while np.any(ego[ok] > 0):
            gap = gap + sys.t_s * (front - ego)
            ego = np.maximum(ego - brake, 0.0)
            front = max(front + sys.t_s * sys.a_min, 0.0)
            ok &= gap >= d_min
        return ok[()]

    return predicate
