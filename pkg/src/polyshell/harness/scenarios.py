"""Named presets, each stored as a committed configuration file."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from ..errors import ConfigError
from .config import RunConfig, parse_config


@dataclass(frozen=True)
class Scenario:
    name: str
    command: str  # CLI subcommand the preset is meant for
    description: str


CATALOGUE = (
    Scenario("rest-state", "simulate", "equilibrium data, no forcing; all diagnostics stay flat"),
    Scenario("shear-fixed-domain", "fpk", "random densities in a prescribed simple shear on a fixed layer"),
    Scenario("free-shell-vibration", "shell", "shell released from a cosine displacement"),
    Scenario("forced-breathing-shell", "simulate", "coupled run with a time-periodic shell load"),
    Scenario("blow-up-guard", "simulate", "steady load driving the shell into the admissibility guard"),
)


def scenario_catalogue() -> list[str]:
    return [s.name for s in CATALOGUE]


def scenario(name: str) -> Scenario:
    for s in CATALOGUE:
        if s.name == name:
            return s
    raise ConfigError(f"unknown preset {name!r}", key=name)


def preset_text(name: str) -> str:
    scenario(name)
    return resources.files(__package__).joinpath("presets", f"{name}.cfg").read_text()


def load_preset(name: str) -> RunConfig:
    return parse_config(preset_text(name), f"preset:{name}")
