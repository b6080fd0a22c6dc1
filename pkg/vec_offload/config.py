"""
Scenario file ingestion

The scenario file is a JSON document with four optional sections:

    {
        "scenario":   {... ScenarioConfig fields, noise as "noise_psd_dbm_hz" ...},
        "tasks":      {... TaskTemplate fields ...},
        "solver":     {... SolverConfig fields ...},
        "experiment": {"axis": "T", "values": [...], "schemes": [...],
                       "num_seeds": 5, "base_seed": 0, ...}
    }

Missing sections or keys fall back to the model defaults.
"""

import json
import logging
import os
from typing import Any, Dict, Optional

from .errors import ScenarioError
from .models import ExperimentSpec, ScenarioConfig, SolverConfig, TaskTemplate

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
SECTIONS = ("scenario", "tasks", "solver", "experiment")


def dbm_per_hz_to_watts(value_dbm: float) -> float:
    """Convert a noise density in dBm/Hz to W/Hz"""
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


def load_config(config_file: str = CONFIG_FILE) -> Dict[str, Any]:
    """Load the raw configuration, defaults for everything the file leaves out"""
    config: Dict[str, Any] = {section: {} for section in SECTIONS}

    if not os.path.exists(config_file):
        logger.info("No config file at %s, using defaults", config_file)
        return config

    try:
        with open(config_file, "r", encoding="utf-8") as f:
            file_config = json.load(f)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"Invalid JSON in {config_file}: {e}") from e

    if not isinstance(file_config, dict):
        raise ScenarioError(f"{config_file} must hold a JSON object")

    unknown = set(file_config) - set(SECTIONS)
    if unknown:
        raise ScenarioError(f"Unknown sections in {config_file}: {', '.join(sorted(unknown))}")

    for section in SECTIONS:
        config[section].update(file_config.get(section) or {})
    logger.info("Loaded configuration from %s", config_file)
    return config


def scenario_from_section(section: Dict[str, Any]) -> ScenarioConfig:
    """Build a ScenarioConfig, converting the dBm/Hz noise density once"""
    fields = dict(section)
    if "noise_psd_dbm_hz" in fields:
        if "noise_psd" in fields:
            raise ScenarioError("give either noise_psd (W/Hz) or noise_psd_dbm_hz, not both")
        fields["noise_psd"] = dbm_per_hz_to_watts(float(fields.pop("noise_psd_dbm_hz")))
    return ScenarioConfig(**fields)


def experiment_from_config(
    config: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None
) -> ExperimentSpec:
    """Assemble an ExperimentSpec from a loaded config plus CLI overrides"""
    experiment = dict(config.get("experiment") or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            experiment[key] = value
    return ExperimentSpec(
        scenario=scenario_from_section(config.get("scenario") or {}),
        tasks=TaskTemplate(**(config.get("tasks") or {})),
        solver=SolverConfig(**(config.get("solver") or {})),
        **experiment,
    )
