"""Shared fixtures of the cacclab test suite.

Invariant families take a few seconds each, so they are computed once per test session
into a temporary cache directory and shared between test modules.
"""

import functools
import tempfile

import cacclab.dynamics as dynamics
import cacclab.invariant as invariant
import cacclab.parameters as parameters

CACHE_DIR = tempfile.mkdtemp(prefix="cacclab-test-cache-")

PARAMS = dynamics.VehicleParams()
T_S = 0.2
D_MIN = 5.0
V_MAX = 40.0
TORQUE_MIN = -2500.0
TORQUE_MAX = 1083.0


def linear_system(a_min=-6.0, half_drag=False):
    return invariant.build_linear_system(
        PARAMS,
        t_s=T_S,
        torque_min=TORQUE_MIN,
        torque_max=TORQUE_MAX,
        v_max=V_MAX,
        a_min=a_min,
        half_drag=half_drag,
    )


@functools.lru_cache(maxsize=None)
def cached_family(a_min=-6.0, half_drag=False):
    return invariant.cached_invariant_family(
        linear_system(a_min, half_drag), D_MIN, V_MAX, cache_dir=CACHE_DIR
    )


def make_config(**sections):
    """Default configuration with some sections changed"""
    return parameters.load_config(overrides=sections)
