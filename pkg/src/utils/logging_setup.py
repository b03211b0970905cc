import logging
import os
import sys
from typing import Optional

from src.utils.errors import DataValidationError

LOG_FORMAT = "[%(levelname)s] %(name)s: %(message)s"


def setup_logging(level: Optional[str] = None) -> None:
    """
    Configure the root logger once.

    Level resolution: explicit argument, then SDM_LOG_LEVEL, then INFO.
    """
    level_name = (level or os.getenv("SDM_LOG_LEVEL") or "INFO").upper()
    numeric = getattr(logging, level_name, None)
    if not isinstance(numeric, int):
        raise DataValidationError(f"unknown log level: {level_name}")

    root = logging.getLogger()
    root.setLevel(numeric)
    for handler in list(root.handlers):
        if getattr(handler, "_sdm_handler", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._sdm_handler = True
    root.addHandler(handler)
