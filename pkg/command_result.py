from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

from errors import EXIT_OK


@dataclass
class CommandResult:
    """
    Outcome of one CLI command: what to print and which exit code to return.
    """

    success: bool
    message: str
    exit_code: int = EXIT_OK
    metadata: Dict[str, object] = field(default_factory=dict)


__all__ = ["CommandResult"]
