"""Configs, orchestration, artifacts and the command line."""
from .artifacts import RunArtifacts, read_checkpoint, write_checkpoint
from .config import ScenarioConfig, config_hash, emit_config, parse_config
from .runner import run_scenario
from .verify import verify_suite

__all__ = ["RunArtifacts", "ScenarioConfig", "config_hash", "emit_config", "parse_config",
           "read_checkpoint", "run_scenario", "verify_suite", "write_checkpoint"]
