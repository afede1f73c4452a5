import os
from dataclasses import dataclass, field, fields
from typing import Tuple

from dotenv import load_dotenv

load_dotenv()


@dataclass(frozen=True)
class Thresholds:
    """Every tunable threshold of the pipeline with its default.

    Units of ``tau_d`` and ``tau_g`` are the dataset's depth units.
    """

    quantile: float = 0.9
    grad_threshold: float = 0.05
    tau_d: float = 0.2
    tau_g: float = 0.01
    tau_c: float = 0.1
    tau_num: int = 10
    lam: float = 0.2
    zoom_range: Tuple[float, float] = (4.0, 5.0)
    dolly_range: Tuple[float, float] = (0.5, 0.6)

    def replace(self, **overrides) -> "Thresholds":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update({k: v for k, v in overrides.items() if v is not None})
        for key in ("zoom_range", "dolly_range"):
            values[key] = tuple(float(x) for x in values[key])
        return Thresholds(**values)

    def as_dict(self) -> dict:
        return {f.name: (list(getattr(self, f.name)) if f.name.endswith("_range") else getattr(self, f.name))
                for f in fields(self)}


@dataclass(frozen=True)
class RuntimeSettings:
    threads: int = 1
    log_level: str = "WARNING"
    thresholds: Thresholds = field(default_factory=Thresholds)


def default_threads() -> int:
    value = os.getenv("CLOSEUP_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


def load_settings() -> RuntimeSettings:
    """Settings derived from the environment (after ``.env`` is loaded)."""
    return RuntimeSettings(
        threads=default_threads(),
        log_level=os.getenv("CLOSEUP_LOG_LEVEL", "WARNING").upper(),
    )
