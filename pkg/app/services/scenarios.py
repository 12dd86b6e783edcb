"""
Scenario Service
Built-in scenarios and config file loading (TOML or JSON)
"""

import copy
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import ValidationError

from app.core.errors import ConfigError
from app.models.schemas import ScenarioConfig

CAT_MAP = [[2, 1], [1, 1]]
CAT_TIMES_ID = [[2, 1, 0], [1, 1, 0], [0, 0, 1]]
VERTICAL_CIRCLES_3D = {"kind": "linear", "directions": [[0, 0, 1]]}

# Stable listing order
BUILTIN_SCENARIOS: Dict[str, Dict] = {
    "catmap-shadow": {
        "description": "Cat map, point foliation: grid shadows agree with the exact hyperbolic shadow",
        "seed": 7,
        "steps": ["shadow"],
        "map": {"matrix": CAT_MAP},
        "foliation": {"kind": "points"},
        "grid": {"resolution": 128},
        "shadow": {"delta": 0.002, "epsilon": 0.05, "length": 49, "trials": 100, "compare_exact": True,
                   "require_orbit": False},
    },
    "catmap-stability": {
        "description": "Perturbed cat map: set-valued semiconjugacy meets the stability contract",
        "seed": 11,
        "steps": ["semiconj"],
        "map": {"matrix": CAT_MAP},
        "foliation": {"kind": "points"},
        "grid": {"resolution": 256},
        "semiconj": {
            "perturbation": [{"freq": [0, 1], "coeff": [0.002, 0.0], "phase": "sin"}],
            "epsilon": 0.05,
            "delta": 0.0025,
            "horizon": 20,
            "horizon_sweep": [10, 20, 40],
            "seeds": 25,
            "segment_length": 20,
            "max_images": 2,
            "deltas": [0.1, 0.01, 0.001],
            "rho": 0.05,
            "delta_contract": 0.01,
            "continuity_pairs": 20,
        },
    },
    "t3-center": {
        "description": "A x id on T^3 with center circles: chain-recurrent cells carry periodic leaves",
        "seed": 3,
        "steps": ["cr-set"],
        "map": {"matrix": CAT_TIMES_ID},
        "foliation": VERTICAL_CIRCLES_3D,
        "grid": {"resolution": 32},
        "cr_set": {"delta": 0.02, "epsilon": 0.1, "kmax": 8, "leaf_tol": 1e-6},
    },
    "t3-quotient": {
        "description": "A x id on T^3: foliated shadows project to cat-map shadows on the leaf space",
        "seed": 5,
        "steps": ["quotient"],
        "map": {"matrix": CAT_TIMES_ID},
        "foliation": VERTICAL_CIRCLES_3D,
        "grid": {"resolution": 32},
        "quotient": {"delta": 0.005, "epsilon": 0.05, "trials": 50, "length": 12, "samples": 200},
    },
    "t2-vertical-noexp": {
        "description": "Skew rotation on T^2: vertical circles admit non-separating leaf pairs",
        "seed": 13,
        "steps": ["expansivity-scan"],
        "map": {
            "matrix": [[1, 0], [0, 1]],
            "perturbation": [
                {"freq": [0, 0], "coeff": [0.375, 0.0], "phase": "cos"},
                {"freq": [1, 0], "coeff": [0.0, 0.1], "phase": "sin"},
            ],
        },
        "foliation": {"kind": "linear", "directions": [[0, 1]]},
        "grid": {"resolution": 128},
        "expansivity": {"e_values": [0.1, 0.05, 0.02], "horizon": 100, "expect": "witness", "quotient_checks": True},
    },
    "single-leaf-trivial": {
        "description": "One-leaf foliation: every map shadows and is expansive with e = eps0",
        "seed": 17,
        "steps": ["shadow", "expansivity-scan"],
        "map": {"matrix": CAT_MAP},
        "foliation": {"kind": "whole"},
        "grid": {"resolution": 16},
        "shadow": {"delta": 0.05, "epsilon": 0.05, "length": 20, "trials": 5},
        "expansivity": {"e_values": [0.1], "epsilon0": 0.1, "horizon": 5, "expect": "none_found"},
    },
    "points-lotus": {
        "description": "Point foliation: foliated expansivity is classical expansivity of the cat map",
        "seed": 19,
        "steps": ["expansivity-scan"],
        "map": {"matrix": CAT_MAP},
        "foliation": {"kind": "points"},
        "grid": {"resolution": 48},
        "expansivity": {"e_values": [0.1], "epsilon0": 0.05, "horizon": 8, "estimate": True, "n_max": 16,
                        "expect": "none_found"},
    },
    "circle-north-south": {
        "description": "x + 0.1 sin 2 pi x on the circle: recurrence sits at the two fixed points",
        "seed": 23,
        "steps": ["cr-set"],
        "map": {"matrix": [[1]], "perturbation": [{"freq": [1], "coeff": [0.1], "phase": "sin"}]},
        "foliation": {"kind": "points"},
        "grid": {"resolution": 200},
        "cr_set": {"delta": 0.002, "epsilon": 0.05, "kmax": 4},
    },
}


def list_scenarios() -> List[Tuple[str, str]]:
    return [(name, spec["description"]) for name, spec in BUILTIN_SCENARIOS.items()]


def builtin_scenario(name: str) -> ScenarioConfig:
    if name not in BUILTIN_SCENARIOS:
        known = ", ".join(BUILTIN_SCENARIOS)
        raise ConfigError(f"unknown scenario '{name}' (known: {known})", {"scenario": name})
    data = copy.deepcopy(BUILTIN_SCENARIOS[name])
    data["name"] = name
    return validate_config(data, source=f"builtin:{name}")


def _format_validation(err: ValidationError, source: str) -> ConfigError:
    problems = []
    for item in err.errors():
        field = ".".join(str(part) for part in item["loc"]) or "<root>"
        problems.append({"field": field, "message": item["msg"]})
    first = problems[0]
    return ConfigError(f"{source}: field '{first['field']}': {first['message']}", {"errors": problems})


def validate_config(data: Dict, source: str = "<config>") -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as err:
        raise _format_validation(err, source) from err


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    """Parse a TOML (default) or JSON (.json) scenario file"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}", {"path": str(path)}) from err
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}:{err.lineno}:{err.colno}: {err.msg}",
                              {"path": str(path), "line": err.lineno, "column": err.colno}) from err
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}", {"path": str(path)}) from err
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table", {"path": str(path)})
    data.setdefault("name", path.stem)
    return validate_config(data, source=str(path))


def resolve_config(config_path: Optional[str] = None, scenario: Optional[str] = None) -> ScenarioConfig:
    if config_path and scenario:
        raise ConfigError("use either --config or --scenario, not both")
    if scenario:
        return builtin_scenario(scenario)
    if config_path:
        return load_config(config_path)
    raise ConfigError("no scenario given: pass --config <path> or --scenario <name>")
