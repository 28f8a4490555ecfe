"""This module records where cacc-lab output came from. Every directory written by the
command line (simulation runs, invariant families, fit results) carries a file called
provenance.edn, holding sha1 checksums of the files next to it, the event that produced
them, a timestamp, the package and on-disk format versions, and a digest of the
configuration that was used.

The same digest function keys the invariant-set cache, so two computations with equal
inputs share one cache entry.

In general, users should not edit provenance.edn by hand; `verify_provenance` will
refuse a directory whose files no longer match their recorded checksums.
"""

import os
import datetime
import hashlib
from collections import OrderedDict

import kim_edn
import packaging.specifiers
import packaging.version
from pytz import timezone

from .logger import logging
from . import config as cf

logger = logging.getLogger("cacclab")

PROVENANCE_FILE = "provenance.edn"

provenance_order = [
    "checksums",
    "comments",
    "config-digest",
    "event-type",
    "format-version",
    "package-version",
    "timestamp",
]

EVENT_TYPES = ["simulate", "invariant", "fit", "report"]


def _canonical(obj):
    """Convert numpy scalars, tuples and infinities into plain edn-friendly values"""
    if isinstance(obj, dict):
        return OrderedDict((str(k), _canonical(obj[k])) for k in sorted(obj, key=str))
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float):
        if obj != obj:
            return "nan"
        if obj in (float("inf"), float("-inf")):
            return "inf" if obj > 0 else "-inf"
        return float(repr(obj))
    return obj


def config_digest(obj):
    """Return a sha1 hex digest of the canonical edn dump of `obj`.

    Dictionary keys are sorted and floats written with full precision, so equal
    inputs always produce equal digests.
    """
    text = kim_edn.dumps(_canonical(obj))
    return hashlib.sha1(text.encode("utf-8")).hexdigest()


def file_checksums(path):
    """Return an ordered mapping of relative file name to sha1 checksum for every
    regular file below `path`, excluding provenance.edn and hidden files."""
    checksums = OrderedDict()
    for tmppath, subdirs, files in os.walk(path):
        subdirs.sort()
        for filename in sorted(files):
            if filename == PROVENANCE_FILE or filename.startswith("."):
                continue
            abs_loc = os.path.join(tmppath, filename)
            rel_loc = os.path.relpath(abs_loc, path)
            with open(abs_loc, "rb") as f:
                checksums[rel_loc] = hashlib.sha1(f.read()).hexdigest()
    return OrderedDict((k, checksums[k]) for k in sorted(checksums))


def write_provenance(path, event_type, config=None, comment=None):
    """Write provenance.edn into the output directory `path`.

    Parameters
    ----------
    path : path-like
        output directory, must already contain the files to be recorded
    event_type : str
        one of "simulate", "invariant", "fit", "report"
    config : dict, optional
        configuration that produced the files, stored as a digest
    comment : str, optional
        free-form note

    Returns
    -------
    OrderedDict
        the entry that was written
    """
    if event_type not in EVENT_TYPES:
        raise ValueError(f"Unknown provenance event type {event_type!r}")

    entry = OrderedDict()
    entry["checksums"] = file_checksums(path)
    if comment is not None:
        entry["comments"] = comment
    if config is not None:
        entry["config-digest"] = config_digest(config)
    entry["event-type"] = event_type
    entry["format-version"] = cf.__format_version__
    entry["package-version"] = cf.__version__
    entry["timestamp"] = datetime.datetime.now(timezone(cf.TIMEZONE)).strftime(
        "%Y-%m-%d %H:%M:%S %Z"
    )

    dest = os.path.join(path, PROVENANCE_FILE)
    try:
        with open(dest, "w") as outfile:
            kim_edn.dump(entry, outfile, indent=4)
    except OSError as e:
        raise OSError(f"Could not write provenance record {dest}: {e}") from e

    logger.debug(
        f"Provenance {event_type} recorded for {path} ({len(entry['checksums'])} files)"
    )
    return entry


def read_provenance(path):
    dest = os.path.join(path, PROVENANCE_FILE)
    if not os.path.isfile(dest):
        raise FileNotFoundError(f"No provenance record in {path}")
    with open(dest) as f:
        return kim_edn.load(f)


def check_format_version(version, source=""):
    """Raise IncompatibleFormatError unless `version` satisfies the supported format spec"""
    if packaging.version.Version(str(version)) not in packaging.specifiers.SpecifierSet(
        cf.__format_support_spec__
    ):
        errmsg = (
            f"{source}: format version {version} is not supported by this installation "
            f"({cf.__format_support_spec__})"
        )
        logger.error(errmsg)
        raise cf.IncompatibleFormatError(errmsg)


def verify_provenance(path):
    """Check the format version and every recorded checksum of an output directory.

    Returns
    -------
    dict
        the provenance entry

    Raises
    ------
    IncompatibleFormatError
        the directory was written by an unsupported format version
    ProvenanceMismatchError
        a recorded file is missing, changed, or an unrecorded file appeared
    """
    entry = read_provenance(path)
    check_format_version(entry.get("format-version", "0"), source=path)

    recorded = entry.get("checksums", {})
    current = file_checksums(path)
    changed = sorted(
        name
        for name in set(recorded) | set(current)
        if recorded.get(name) != current.get(name)
    )
    if changed:
        errmsg = f"Files in {path} do not match their provenance record: {', '.join(changed)}"
        logger.error(errmsg)
        raise cf.ProvenanceMismatchError(errmsg)
    return entry
