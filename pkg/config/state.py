import json

from config.settings import Thresholds
from core.errors import InvalidPreset
from core.scene_io import atomic_path

PRESET_KEYS = {
    "quantile": (float, int),
    "grad_threshold": (float, int),
    "tau_d": (float, int),
    "tau_g": (float, int),
    "tau_c": (float, int),
    "tau_num": int,
    "lam": (float, int),
    "zoom_range": list,
    "dolly_range": list,
}


def validate_preset(preset):
    """Raise InvalidPreset unless ``preset`` is a mapping of known threshold keys."""
    if not isinstance(preset, dict):
        raise InvalidPreset("<root>", "expected a JSON object")

    for key, value in preset.items():
        if key not in PRESET_KEYS:
            raise InvalidPreset(key, "unknown key")
        expected_type = PRESET_KEYS[key]
        # bool is an int subclass
        if isinstance(value, bool) or not isinstance(value, expected_type):
            raise InvalidPreset(key, f"wrong type {type(value).__name__}")
        if expected_type is list:
            if len(value) != 2 or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
                raise InvalidPreset(key, "expected two numbers")
            if value[0] > value[1]:
                raise InvalidPreset(key, "range is reversed")
        elif key != "lam" and value <= 0:
            raise InvalidPreset(key, "must be positive")
    if "quantile" in preset and not 0 < preset["quantile"] < 1:
        raise InvalidPreset("quantile", "must lie in (0, 1)")
    if "lam" in preset and not 0 <= preset["lam"] <= 1:
        raise InvalidPreset("lam", "must lie in [0, 1]")
    return True


def load_preset(path, base=None):
    """Load a JSON threshold preset on top of ``base`` (defaults when None)."""
    base = base or Thresholds()
    try:
        with open(path, "r", encoding="utf-8") as f:
            preset = json.load(f)
    except FileNotFoundError:
        raise InvalidPreset("<file>", f"preset '{path}' not found")
    except json.JSONDecodeError as e:
        raise InvalidPreset("<file>", f"preset '{path}' is not valid JSON: {e}")

    validate_preset(preset)
    return base.replace(**preset)


def save_state(path, state):
    """Write ``state`` as sorted, indented JSON, replacing ``path`` atomically."""
    with atomic_path(path) as tmp_path:
        with open(tmp_path, "w", encoding="utf-8") as f:
            json.dump(state, f, indent=2, sort_keys=True)
            f.write("\n")


def load_state(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        return {}
    except json.JSONDecodeError:
        return {}
