# settings.py
"""
Runtime settings read from environment variables.

Experiment parameters live in the JSON run configuration; this module only holds
knobs about how a run executes (workers, progress output, step control).
"""

import os
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional

import psutil

DEFAULT_MAX_HALVINGS = 12
DEFAULT_STABILITY_LIMIT = 5.0


def _env_flag(name: str, default: str = "false") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


def default_threads() -> int:
    """Physical core count, falling back to logical cores, never below 1."""
    cores = psutil.cpu_count(logical=False) or psutil.cpu_count(logical=True) or 1
    return max(1, int(cores))


@dataclass(frozen=True)
class RuntimeSettings:
    """Execution knobs for integration runs and sweeps."""
    threads: int = 1
    progress: bool = False
    max_halvings: int = DEFAULT_MAX_HALVINGS
    stability_limit: float = DEFAULT_STABILITY_LIMIT
    log_level: str = "INFO"

    @classmethod
    def from_env(cls) -> "RuntimeSettings":
        """Build settings from environment variables with defaults."""
        raw_threads = os.getenv("CHEMOREDUCE_THREADS", "").strip()
        threads = int(raw_threads) if raw_threads else default_threads()
        return cls(
            threads=max(1, threads),
            progress=_env_flag("CHEMOREDUCE_PROGRESS"),
            max_halvings=int(os.getenv("CHEMOREDUCE_MAX_HALVINGS", str(DEFAULT_MAX_HALVINGS))),
            stability_limit=float(
                os.getenv("CHEMOREDUCE_STABILITY_LIMIT", str(DEFAULT_STABILITY_LIMIT))
            ),
            log_level=os.getenv("LOG_LEVEL", "INFO").upper(),
        )

    def with_overrides(self, threads: Optional[int] = None, progress: Optional[bool] = None) -> "RuntimeSettings":
        """Apply CLI overrides; None leaves the environment value in place."""
        changes: Dict[str, Any] = {}
        if threads is not None:
            changes["threads"] = max(1, int(threads))
        if progress is not None:
            changes["progress"] = bool(progress)
        return replace(self, **changes) if changes else self

    def as_dict(self) -> Dict[str, Any]:
        return {
            "threads": self.threads,
            "progress": self.progress,
            "max_halvings": self.max_halvings,
            "stability_limit": self.stability_limit,
            "log_level": self.log_level,
        }
