from . import config
from . import logger
from . import provenance

__all__ = ["config", "logger", "provenance"]
