"""Run configuration: JSON file, strict schema, defaults, flag overrides.

Every command validates its full configuration before doing any work;
unknown keys are rejected with their dotted path so typos never silently
fall back to defaults.
"""

from __future__ import annotations

import copy
import json

from .errors import ConfigError

_NUMBER = (int, float)

# Schema nodes are {"_type": ..., "_default": ...} leaves or nested dicts.
SCHEMA = {
    "dataset": {
        "mode": {"_type": str, "_default": "synth", "_choices": ("synth", "files")},
        "path": {"_type": (str, type(None)), "_default": None},
        "synth": {
            "n_takes": {"_type": int, "_default": 12},
            "frames_per_take": {"_type": int, "_default": 320},
            "n_verbs": {"_type": int, "_default": 4},
            "n_objects": {"_type": int, "_default": 3},
            "motion_noise": {"_type": _NUMBER, "_default": 0.05},
            "feature_noise": {"_type": _NUMBER, "_default": 0.1},
            "seed": {"_type": int, "_default": 0},
            "feature_dim": {"_type": int, "_default": 512},
            "native_hz": {"_type": _NUMBER, "_default": 30.0},
            "segments_per_take": {"_type": int, "_default": 6},
        },
        "val_fraction": {"_type": _NUMBER, "_default": 0.25},
        "split_seed": {"_type": int, "_default": 0},
        "stride": {"_type": int, "_default": 6},
        "background_keep": {"_type": _NUMBER, "_default": 1.0},
        "reference_lengths": {
            "_type": (str, type(None)),
            "_default": None,
            "_help": "path to a bone-lengths file; null uses anatomical defaults",
        },
        "unit_lengths": {"_type": bool, "_default": False},
    },
    "model": {
        "kind": {
            "_type": str,
            "_default": "mm_tmlp",
            "_choices": ("rgb_seq", "mm_tmlp", "fusionnet", "hp_mlp"),
        },
        "d_rgb": {"_type": int, "_default": 512},
        "d_hp": {"_type": int, "_default": 128},
        "hp_hidden": {"_type": int, "_default": 256},
        "head_hidden": {"_type": int, "_default": 256},
        "activation": {"_type": str, "_default": "gelu", "_choices": ("relu", "gelu")},
        "rgb_backend": {
            "_type": str,
            "_default": "precomputed",
            "_choices": ("precomputed", "reference"),
        },
        "reference": {
            "image_size": {"_type": int, "_default": 64},
            "channels": {"_type": int, "_default": 3},
            "patch_size": {"_type": int, "_default": 8},
            "hidden": {"_type": int, "_default": 1024},
        },
        "temporal": {
            "depth": {"_type": int, "_default": 2},
            "time_ratio": {"_type": _NUMBER, "_default": 2.0},
            "channel_ratio": {"_type": _NUMBER, "_default": 2.0},
            "activation": {"_type": str, "_default": "gelu", "_choices": ("relu", "gelu")},
        },
    },
    "rates": {
        "native_hz": {"_type": _NUMBER, "_default": 30.0},
        "f_rgb": {"_type": _NUMBER, "_default": 30.0},
        "f_hp": {"_type": _NUMBER, "_default": 30.0},
        "window_seconds": {"_type": _NUMBER, "_default": 2.0},
    },
    "grid": {"_type": list, "_default": []},
    "train": {
        "epochs": {"_type": int, "_default": 12},
        "batch_size": {"_type": int, "_default": 32},
        "lr": {"_type": _NUMBER, "_default": 1e-3},
        "seed": {"_type": int, "_default": 0},
        "augment": {"_type": list, "_default": ["jitter"]},
        "eval_every": {"_type": int, "_default": 1},
    },
    "bench": {
        "enabled": {"_type": bool, "_default": True},
        "reps": {"_type": int, "_default": 15},
        "warmup": {"_type": int, "_default": 3},
        "window_seconds": {"_type": _NUMBER, "_default": 1.0},
        "input_seed": {"_type": int, "_default": 0},
    },
    "output": {
        "dir": {"_type": str, "_default": "runs/out"},
        "json": {"_type": bool, "_default": True},
    },
}

_GRID_KEYS = {"model_kind", "f_rgb", "f_hp"}


def _is_leaf(node):
    return isinstance(node, dict) and "_type" in node


def _type_name(expected):
    if isinstance(expected, tuple):
        return " or ".join(t.__name__ for t in expected)
    return expected.__name__


def _validate_node(value, schema, path):
    if _is_leaf(schema):
        expected = schema["_type"]
        if isinstance(value, bool) and expected in (int, _NUMBER):
            raise ConfigError(f"{path}: expected {_type_name(expected)}, got bool")
        if not isinstance(value, expected):
            raise ConfigError(
                f"{path}: expected {_type_name(expected)}, got {type(value).__name__}"
            )
        choices = schema.get("_choices")
        if choices and value not in choices:
            raise ConfigError(f"{path}: {value!r} not in {choices}")
        return value
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object")
    out = {}
    for key, sub in schema.items():
        child_path = f"{path}.{key}" if path else key
        if key in value:
            out[key] = _validate_node(value[key], sub, child_path)
        else:
            out[key] = _defaults(sub)
    unknown = set(value) - set(schema)
    if unknown:
        raise ConfigError(
            f"{path or 'config'}: unknown keys {sorted(unknown)}; "
            f"allowed: {sorted(schema)}"
        )
    return out


def _defaults(schema):
    if _is_leaf(schema):
        return copy.deepcopy(schema["_default"])
    return {k: _defaults(v) for k, v in schema.items()}


def default_config():
    return _defaults(SCHEMA)


def validate_config(raw: dict) -> dict:
    """Check ``raw`` against the schema and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = _validate_node(raw, SCHEMA, "")
    for i, point in enumerate(cfg["grid"]):
        if not isinstance(point, dict):
            raise ConfigError(f"grid[{i}]: expected an object")
        unknown = set(point) - _GRID_KEYS
        if unknown:
            raise ConfigError(f"grid[{i}]: unknown keys {sorted(unknown)}")
        missing = _GRID_KEYS - set(point)
        if missing:
            raise ConfigError(f"grid[{i}]: missing keys {sorted(missing)}")
        if not isinstance(point["model_kind"], str):
            raise ConfigError(f"grid[{i}].model_kind: expected str")
        for key in ("f_rgb", "f_hp"):
            if isinstance(point[key], bool) or not isinstance(point[key], _NUMBER):
                raise ConfigError(f"grid[{i}].{key}: expected a number")
    for i, op in enumerate(cfg["train"]["augment"]):
        if not isinstance(op, str):
            raise ConfigError(f"train.augment[{i}]: expected str")
    return cfg


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return validate_config(raw)


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``--set dotted.key=value`` pairs, then re-validate."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        dotted, _, raw_value = item.partition("=")
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value  # bare strings are fine
        node = cfg
        keys = dotted.split(".")
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                raise ConfigError(f"--set {dotted}: no such config section {key!r}")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(f"--set {dotted}: unknown config key")
        node[keys[-1]] = value
    return validate_config(cfg)
