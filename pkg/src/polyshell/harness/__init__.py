"""Configuration, output files, presets, subcommand runners and the CLI."""

from .config import RunConfig, help_text, load_config, parse_config
from .io import read_binary, read_csv, read_fields, write_binary, write_csv, write_fields
from .scenarios import load_preset, scenario_catalogue

__all__ = ["RunConfig", "help_text", "load_config", "parse_config", "read_binary", "read_csv", "read_fields",
           "write_binary", "write_csv", "write_fields", "load_preset", "scenario_catalogue"]
