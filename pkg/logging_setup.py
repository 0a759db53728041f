from __future__ import annotations

import logging
import sys
from typing import Union


_configured = False


def configure_logging(level: Union[int, str] = logging.INFO) -> None:
    """
    Configure process-wide logging to stderr once.

    Subsequent calls only adjust the level. stdout stays free for command output.
    """
    global _configured
    root = logging.getLogger()
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO
    if _configured:
        root.setLevel(level)
        return

    handler = logging.StreamHandler(sys.stderr)
    formatter = logging.Formatter(
        fmt="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    handler.setFormatter(formatter)

    root.setLevel(level)
    root.handlers.clear()
    root.addHandler(handler)

    _configured = True
