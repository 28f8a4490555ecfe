"""This module is used to manage **cacc-lab** experiment configurations.

An experiment is described by a single edn file organized as a dict of sections
(``vehicle``, ``powertrain``, ``mpc``, ``channel``, ``scenario``, ``invariant``, ``fit``),
each holding flat key-value pairs in SI units. Every key has a default in
cacclab/settings/defaults.edn, and the allowed keys and value types of every section are
stored in cacclab/settings/config_standard.edn. The keys of a section may be viewed by
calling ``get_config_template()``.

A user file only needs to name the values it changes:

::

        {
            "mpc" {"a_min" -9.0}
            "scenario" {"sweep" "n_t" "values" [0 3 8]}
        }

``load_config()`` merges such a file over the defaults, and ``validate_config()`` checks
that every section and key is part of the standard before calling ``check_config_types()``
to verify that every value has the right type. The modules that consume a section turn it
into a typed, frozen object (``dynamics.VehicleParams.from_config()``,
``controller.MpcConfig.from_config()`` and so on), which performs the physical checks.

Infinite gaps, where a section needs them, are written as the string "inf".
"""

import copy
import math
import os

import kim_edn

from .src import config as cf
from .src.logger import logging

logger = logging.getLogger("cacclab")

SECTIONS = (
    "vehicle",
    "powertrain",
    "mpc",
    "channel",
    "scenario",
    "invariant",
    "fit",
)


def _read_edn(path):
    try:
        with open(path, "r") as f:
            return kim_edn.load(f)
    except OSError as e:
        raise OSError(f"Could not read configuration file {path}: {e}") from e
    except Exception as e:
        raise cf.InvalidConfigError(f"{path} is not a valid edn file: {e}") from e


def _read_config_standard():
    """Read the allowed keys and value types of every section from config_standard.edn

    Returns
    -------
    dict
        section name -> {key: type name}
    """
    return _read_edn(cf.CONFIG_STANDARD_FILE)


def default_config():
    """Return a fresh copy of the shipped default configuration"""
    return _read_edn(cf.DEFAULTS_FILE)


def get_config_template(section=None):
    """Return the allowed keys of one section, or of every section, with their value types.

    Parameters
    ----------
    section : str, optional
        one of SECTIONS, by default all of them

    Raises
    ------
    InvalidConfigFieldError
        section is not part of the standard
    """
    standard = _read_config_standard()
    if section is None:
        return standard
    try:
        return standard[section]
    except KeyError as e:
        raise cf.InvalidConfigFieldError(
            f"Configuration section '{section}' not recognized. Valid options include {', '.join(SECTIONS)}."
        ) from e


def _is_number(val):
    return isinstance(val, (int, float)) and not isinstance(val, bool)


def _check_value(section, key, val, kind):
    where = f"{section}.{key}"
    if kind == "float":
        if not _is_number(val):
            raise TypeError(f"Configuration field {where} must be a number, got {val!r}")
    elif kind == "int":
        if not isinstance(val, int) or isinstance(val, bool):
            raise TypeError(f"Configuration field {where} must be an integer, got {val!r}")
    elif kind == "bool":
        if not isinstance(val, bool):
            raise TypeError(f"Configuration field {where} must be true or false, got {val!r}")
    elif kind == "str":
        if not isinstance(val, str):
            raise TypeError(f"Configuration field {where} must be a string, got {val!r}")
    elif kind == "float-or-path":
        if not (_is_number(val) or isinstance(val, str)):
            raise TypeError(
                f"Configuration field {where} must be a constant or the path of a CSV map, got {val!r}"
            )
    elif kind == "list-float":
        if not isinstance(val, list) or not all(_is_number(v) for v in val):
            raise TypeError(f"Configuration field {where} must be a list of numbers, got {val!r}")
    elif kind == "list-int":
        if not isinstance(val, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in val
        ):
            raise TypeError(f"Configuration field {where} must be a list of integers, got {val!r}")
    elif kind == "list-events":
        if not isinstance(val, list):
            raise TypeError(f"Configuration field {where} must be a list of events, got {val!r}")
        for event in val:
            if (
                not isinstance(event, list)
                or len(event) != 3
                or not all(_is_number(v) for v in event)
            ):
                raise TypeError(
                    f"Every entry of {where} must be [t_start t_end accel], got {event!r}"
                )
    else:
        raise cf.InvalidConfigError(f"Unknown value type '{kind}' for {where} in the standard")


def check_config_types(conf):
    """Check that every value in the configuration has the type named in the standard.

    Parameters
    ----------
    conf : dict
        configuration dict, possibly partial

    Raises
    ------
    TypeError
        a value does not have the expected type
    InvalidConfigFieldError
        a section or key is not part of the standard
    """
    standard = _read_config_standard()
    for section, values in conf.items():
        if section not in standard:
            raise cf.InvalidConfigFieldError(
                f"Configuration section '{section}' not recognized."
            )
        if not isinstance(values, dict):
            raise TypeError(f"Configuration section '{section}' must be a dict")
        for key, val in values.items():
            try:
                kind = standard[section][key]
            except KeyError as e:
                raise cf.InvalidConfigFieldError(
                    f"Configuration field '{section}.{key}' not recognized."
                ) from e
            _check_value(section, key, val, kind)
    return conf


def validate_config(conf):
    """Check that all sections and keys of a configuration are known and correctly typed.

    Parameters
    ----------
    conf : dict
        configuration dict

    Returns
    -------
    dict
        the validated configuration

    Raises
    ------
    InvalidConfigFieldError
        unknown section or key
    InvalidConfigTypesError
        one or more values have the wrong type
    """
    if not isinstance(conf, dict):
        raise cf.InvalidConfigError("Configuration must be a dict of sections")
    try:
        check_config_types(conf)
    except TypeError as e:
        raise cf.InvalidConfigTypesError(
            "Types of one or more configuration fields are invalid"
        ) from e
    return conf


def merge_config(base, override):
    """Return a copy of `base` with the sections of `override` merged in key by key"""
    merged = copy.deepcopy(base)
    for section, values in override.items():
        if isinstance(values, dict) and isinstance(merged.get(section), dict):
            merged[section].update(copy.deepcopy(values))
        else:
            merged[section] = copy.deepcopy(values)
    return merged


def load_config(path=None, overrides=None):
    """Load an experiment configuration.

    Parameters
    ----------
    path : path-like, optional
        edn file with the sections to change, by default only the shipped defaults
    overrides : dict, optional
        further changes applied after the file, in the same layout

    Returns
    -------
    dict
        complete, validated configuration
    """
    conf = default_config()
    if path is not None:
        user = _read_edn(path)
        if not isinstance(user, dict):
            raise cf.InvalidConfigError(f"{path} must hold a dict of sections")
        validate_config(user)
        conf = merge_config(conf, user)
        logger.debug(f"Configuration loaded from {path}")
    if overrides:
        validate_config(overrides)
        conf = merge_config(conf, overrides)
    validate_config(conf)
    return conf


def write_config(conf, path):
    """Write a configuration to an edn file, creating the parent directory if needed"""
    validate_config(conf)
    dest_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(dest_dir, exist_ok=True)
    try:
        with open(path, "w") as outfile:
            kim_edn.dump(conf, outfile, indent=4)
    except OSError as e:
        raise OSError(f"Could not write configuration file {path}: {e}") from e


def parse_gap(val):
    """Read a gap value that may be the string "inf" (no front vehicle)"""
    if isinstance(val, str):
        if val.strip().lower() in ("inf", "+inf", "infinity"):
            return math.inf
        try:
            val = float(val)
        except ValueError as e:
            raise ValueError(f"Gap value {val!r} is neither a number nor 'inf'") from e
    val = float(val)
    if math.isnan(val):
        raise ValueError("Gap value must not be NaN")
    return val


def format_gap(val):
    """Inverse of parse_gap for file output"""
    return "inf" if math.isinf(val) else val
