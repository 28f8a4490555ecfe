"""
This module can be imported in the following manner:

    from .src.logger import logging
    logger = logging.getLogger("cacclab")

Importing it configures the shared "cacclab" logger once: a rotating file handler
in LOG_DIR, and a console handler that colours records with pygments so that sweep
labels, solver statuses and paths stand out in long simulation runs.
"""

import logging
import logging.handlers as loghandlers
import os
import re
import sys

from pygments import highlight
from pygments.formatters import get_formatter_by_name
from pygments.lexer import RegexLexer, include
from pygments.style import Style
from pygments.token import Comment, Generic, Keyword, Name, Number, Operator, Text, Token

from . import config as cf

LOGGER_NAME = "cacclab"
LOG_FILE = "cacclab.log"
FILE_LEVEL = logging.DEBUG
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
DEBUG_FORMAT = "%(filename)s:%(lineno)d _ " + LOG_FORMAT


class RunLogStyle(Style):
    background_color = "#101010"
    default_style = "#c0c0c0"

    styles = {
        Token: "#c0c0c0",
        Name.Label: "bold #3fb0d0",
        Name.Namespace: "#707070",
        Comment.Preproc: "#909090",
        Number.Float: "#d070d0",
        Number.Integer: "#b060b0",
        Keyword.Constant: "bold #40c040",
        Keyword.Reserved: "bold #e0c020",
        Generic.Error: "bold #ff3030",
        Generic.Prompt: "#8080ff",
        Generic.Inserted: "#40a0ff",
        Generic.Strong: "bold #ffffff",
        Operator: "#808080",
    }


class RunLogLexer(RegexLexer):
    """Tokens of a cacc-lab log line: timestamp, level, sweep labels, solver outcomes"""

    name = "cacc-lab logs"
    aliases = ["cacclog"]
    filenames = [LOG_FILE]

    flags = re.VERBOSE

    tokens = {
        "space": [(r"\s+", Text)],
        "root": [
            include("space"),
            (r"\d{4}-\d{2}-\d{2}\s\d{2}:\d{2}:\d{2},\d{3}", Comment.Preproc),
            (r"cacclab(?:\.[a-z_.]+)?", Name.Namespace),
            (r"DEBUG|INFO", Generic.Prompt),
            (r"WARNING", Keyword.Reserved),
            (r"ERROR|CRITICAL", Generic.Error),
            (r"(?:h|a_min|n_t|noise|n_max|v_f|seed)=-?[0-9.]+", Name.Label),
            (r"(?:step|iteration|slice)\s[0-9]+", Generic.Strong),
            (r"infeasible-fallback|violat\w*", Generic.Error),
            (r"max-iter|not\sconverged|inaccurate|rank\sdeficient", Keyword.Reserved),
            (r"optimal|converged|safe", Keyword.Constant),
            (r"(?:[\w.-]*/)+[\w.-]+", Generic.Inserted),
            (r"-?[0-9]+\.[0-9]+(?:[eE][-+]?[0-9]+)?", Number.Float),
            (r"-?[0-9]+", Number.Integer),
            (r"[A-Za-z_]\w*", Text),
            (r"[^\sA-Za-z0-9_]", Operator),
        ],
    }


def pygmentize(text, outfile=sys.stderr, formatter="256"):
    highlight(text, RunLogLexer(), get_formatter_by_name(formatter, style=RunLogStyle), outfile)


class PygmentHandler(logging.StreamHandler):
    """Console handler that colours each record before writing it"""

    def emit(self, record):
        try:
            pygmentize(self.format(record))
        except Exception:
            self.handleError(record)


def _file_handler(formatter):
    try:
        os.makedirs(cf.LOG_DIR, exist_ok=True)
        handler = loghandlers.RotatingFileHandler(
            os.path.join(cf.LOG_DIR, LOG_FILE), maxBytes=10 * 1024 * 1024, backupCount=3
        )
    except OSError as e:
        # read-only homes still get console logging
        sys.stderr.write(f"cacclab: file logging disabled, {cf.LOG_DIR}: {e}\n")
        return None
    handler.setLevel(FILE_LEVEL)
    handler.setFormatter(formatter)
    return handler


def configure_logger():
    """Attach the file and console handlers to the "cacclab" logger, once per process"""
    logger = logging.getLogger(LOGGER_NAME)
    formatter = logging.Formatter(DEBUG_FORMAT if cf.CACCLAB_DEBUG else LOG_FORMAT)
    if logger.handlers:
        return formatter
    logger.setLevel(FILE_LEVEL)
    logger.propagate = False

    handler = _file_handler(formatter)
    if handler is not None:
        logger.addHandler(handler)

    console = PygmentHandler()
    console.setLevel(logging.DEBUG if cf.CACCLAB_DEBUG else logging.INFO)
    console.setFormatter(formatter)
    logger.addHandler(console)
    return formatter


log_formatter = configure_logger()
