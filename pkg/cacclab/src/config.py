import os
import re

"""This file stores the cacc-lab installation options, and parses environment options from default-environment.

If the values in default-environment are not desired for your installation of cacc-lab, create a
file called cacclab-env in one of the locations listed in ENVIRONMENT_LOCATIONS, where you may
specify alternative values that override the defaults. Variables set in the shell environment
take precedence over both files.

Additionally, this file contains the custom cacc-lab exception types used for internal error handling.
"""

__version__ = "0.3.0"

# on-disk layout of cached invariant families and run directories
__format_version__ = "1.0"
__format_support_spec__ = ">=1.0,<2.0"

# osqp renamed several settings in its 1.0 release
__osqp_renamed_settings_spec__ = ">=1.0"


# =============================================================================
# the environment parsing equipment
# =============================================================================
ENVIRONMENT_FILE_NAME = "cacclab-env"
here = os.path.dirname(os.path.realpath(__file__))
package_root = os.path.split(here)[0]
home_dir = os.path.expanduser("~")
cacclab_dir = os.path.join(home_dir, ".cacclab")
ENVIRONMENT_LOCATIONS = [
    os.environ.get("CACCLAB_ENVIRONMENT_FILE", ""),
    os.path.join(package_root, ENVIRONMENT_FILE_NAME),
    os.path.join(home_dir, ENVIRONMENT_FILE_NAME),
    os.path.join(cacclab_dir, ENVIRONMENT_FILE_NAME),
]

SETTINGS_DIR = os.path.join(package_root, "settings")
DEFAULTS_FILE = os.path.join(SETTINGS_DIR, "defaults.edn")
CONFIG_STANDARD_FILE = os.path.join(SETTINGS_DIR, "config_standard.edn")

# keys whose "None" value is resolved relative to CACCLAB_HOME
_HOME_RELATIVE = {"LOG_DIR": "logs", "INVARIANT_CACHE_DIR": "invariant-cache"}


def transform(val):
    # try to interpret the value as an int or float as well
    try:
        val = int(val)
    except ValueError:
        try:
            val = float(val)
        except ValueError:
            pass
    if val == "False":
        val = False
    if val == "True":
        val = True
    return val


def read_environment_file(filename):
    """
    Return a dictionary of key, value pairs from an environment file of the form:

        # comments begin like Python comments
        # no spaces in the preceding lines
        SOMETHING=value1
        SOMETHING_ELSE=12
        BOOLEAN_VALUE=True

        # can also reference other values with $VARIABLE
        NEW_VARIABLE=/path/to/$FILENAME
    """
    conf = {}
    with open(filename) as f:
        for line in f.readlines():
            if not re.match(r"^[A-Za-z0-9\_]+\=.", line):
                continue

            var, val = line.strip().split("=", 1)
            search = re.search(r"(\$[A-Za-z0-9\_]+)", val)
            if search:
                for rpl in search.groups():
                    val = val.replace(rpl, str(conf[rpl[1:]]))

            conf[var] = transform(val)

    return conf


class Configuration(object):
    def __init__(self):
        """
        Load the environment for this cacc-lab installation. First, load the default
        values shipped with the package, then modify them using the first override
        file found in ENVIRONMENT_LOCATIONS, and finally any matching variables set
        in the shell environment.
        """
        envf = os.path.join(package_root, "default-environment")
        conf = read_environment_file(envf)

        for loc in ENVIRONMENT_LOCATIONS:
            if loc and os.path.isfile(loc):
                conf.update(read_environment_file(loc))
                break

        for k in list(conf):
            tempval = os.environ.get(k, None)
            if tempval is not None:
                conf[k] = transform(tempval)

        if conf.get("CACCLAB_HOME") in (None, "None"):
            conf["CACCLAB_HOME"] = cacclab_dir
        for key, subdir in _HOME_RELATIVE.items():
            if conf.get(key) in (None, "None"):
                conf[key] = os.path.join(conf["CACCLAB_HOME"], subdir)

        self.conf = conf

    def get(self, var, default=None):
        return self.conf.get(var, default)

    def variables(self):
        return sorted(self.conf)


conf = Configuration()
globals().update(conf.conf)


# cacc-lab custom exception types:


class InvalidVehicleParamsError(ValueError):
    """Raised when vehicle parameters violate their physical sign constraints"""


class DragDomainError(ValueError):
    """Raised when the drag model is evaluated at a gap with d + C_x2 <= 0"""


class InvalidGradeError(ValueError):
    """Raised when a road grade is not strictly inside (-pi/2, pi/2)"""


class EfficiencyMapDomainError(ValueError):
    """Raised when an efficiency lookup leaves the map grid and extrapolation is disabled"""


class OutOfTableError(ValueError):
    """Raised when a savings-table query falls outside the table hull"""


class EmptyLogError(ValueError):
    """Raised when an energy integral is requested over a log with no samples"""


class DegenerateResidualError(ValueError):
    """Raised when residuals cannot be normalized because their RMS is zero or they are too short"""


class EmptyInputError(ValueError):
    """Raised when an operation that needs data receives none"""


class UnknownLabelError(KeyError):
    """Raised when a drive-log sample carries a gap label outside the declared label set"""


class DimensionMismatchError(ValueError):
    """Raised when polytopes or vectors of different ambient dimension are combined"""


class AuthorityAnnihilatedError(ValueError):
    """Raised when the shrunk input interval of the linear platoon system is empty"""


class EmptyInvariantSetError(RuntimeError):
    """Raised when the robust invariant set computation produces an empty slice"""


class InsufficientHistoryError(RuntimeError):
    """Raised when a V2V message is requested before the delayed sample exists"""


class MissingHistoryError(ValueError):
    """Raised when the ego speed history does not cover the delay window"""


class NoSteadyStateError(RuntimeError):
    """Raised when no constant-gap window is found in a trajectory log"""


class WindowMismatchError(ValueError):
    """Raised when the baseline log does not cover a steady-state window"""


class InvalidScenarioError(ValueError):
    """Raised when a scenario definition is not physically meaningful"""


class InvalidConfigError(ValueError):
    """General exception to raise when a configuration file does not conform to the standard"""


class InvalidConfigFieldError(KeyError):
    """Raised when a configuration section or key is not in the standard"""


class InvalidConfigTypesError(TypeError):
    """Raised when configuration values are not of the expected types"""


class IncompatibleFormatError(RuntimeError):
    """Raised when a cached family or run directory was written by an unsupported format version"""


class ProvenanceMismatchError(RuntimeError):
    """Raised when files in an output directory no longer match their recorded checksums"""
