"""Centralized path resolution for flexpilot.

Handles XDG Base Directory support for logs and the packaged data files.
"""

from __future__ import annotations

import os
from pathlib import Path

# Overrides the state directory (logs) when set
STATE_DIR_ENV = "FLEXPILOT_STATE_DIR"

DATA_DIR = Path(__file__).parent / "data"


def get_xdg_state_home() -> Path:
    """Get XDG_STATE_HOME, defaulting to ~/.local/state."""
    return Path(os.environ.get("XDG_STATE_HOME", Path.home() / ".local" / "state"))


def get_state_dir() -> Path:
    """Directory holding flexpilot's rotating log files.

    Resolution order:
    1. $FLEXPILOT_STATE_DIR
    2. $XDG_STATE_HOME/flexpilot
    3. ~/.local/state/flexpilot
    """
    override = os.environ.get(STATE_DIR_ENV)
    if override:
        return Path(os.path.expanduser(override))
    return get_xdg_state_home() / "flexpilot"


def default_coefficients_path() -> Path:
    """Frozen cost-model coefficients shipped with the package."""
    return DATA_DIR / "default_coefficients.json"


def resolve_output_dir(out: str | os.PathLike[str] | None, fallback: str | None = None) -> Path:
    """Resolve a run output directory from the --out flag or the config value.

    Args:
        out: Value of --out, takes precedence when given
        fallback: output_dir from the pipeline config

    Returns:
        Absolute path (not created)
    """
    chosen = out if out is not None else (fallback or "flexpilot-run")
    return Path(os.path.expanduser(str(chosen))).resolve()
