"""Flat dotted-key text configuration with documented defaults.

A config document is lines of ``dotted.key = value`` with ``#`` comments.
Values are parsed as int, float, bool, or string; the resolved document (all
defaults applied, keys sorted) is what gets hashed and written into run
folders, so a run's configuration is always reproducible from its artifacts.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from ..spectral import SpectralField, TorusSpec
from ..sde import ForcingSpec, NoiseSpec, SimulationParams
from ..feynman_kac import PotentialDictionary
from ..eigen import SymbolGrid

DEFAULTS: dict[str, object] = {
    "torus.truncation_radius": 8,
    "torus.grid_size": 32,
    "torus.dealias_fraction": 2.0 / 3.0,
    "sim.viscosity": 0.5,
    "sim.dt": 0.005,
    "forcing.amplitude": 0.6,
    "noise.sigma": 0.35,
    "symbol_grid.n_h": 8,
    "eigen.n_particles": 64,
    "eigen.n_iters": 40,
    "eigen.kb_terms": 6,
    "eigen.kb_paths": 16,
    "pressure.t": 20.0,
    "pressure.n_paths": 1000,
    "ldp.occupation_T": 40.0,
    "ldp.clt_T": 40.0,
    "ldp.clt_paths": 512,
    "ldp.rate_cap": 5.0,
    "bracket.max_levels": 6,
    "bracket.rank_tol": 1e-8,
    "run.seed": 12345,
    "run.workers": 1,
    "run.chunk_size": 256,
}


class ConfigError(ValueError):
    """Raised with the offending key path when a config document is invalid."""


def _parse_value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config_text(text: str) -> dict[str, object]:
    out: dict[str, object] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        out[key.strip()] = _parse_value(raw)
    return out


def load_config(path: str | Path | None, overrides: dict[str, object] | None = None) -> dict[str, object]:
    """Defaults, overlaid by a config file, overlaid by --set overrides; unknown keys rejected."""
    cfg = dict(DEFAULTS)
    merged: dict[str, object] = {}
    if path is not None:
        merged.update(parse_config_text(Path(path).read_text()))
    if overrides:
        merged.update(overrides)
    for key, value in merged.items():
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(cfg[key], float) and isinstance(value, int):
            value = float(value)
        if type(value) is not type(cfg[key]):
            raise ConfigError(
                f"{key}: expected {type(cfg[key]).__name__}, got {type(value).__name__}"
            )
        cfg[key] = value
    return cfg


def format_config(cfg: dict[str, object]) -> str:
    lines = [f"{k} = {cfg[k]!r}" if isinstance(cfg[k], str) else f"{k} = {cfg[k]}" for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict[str, object]) -> str:
    return hashlib.sha256(format_config(cfg).encode()).hexdigest()


def write_defaults_reference(path: str | Path) -> None:
    Path(path).write_text(format_config(DEFAULTS))


# ---------------------------------------------------------------------------
# factories
# ---------------------------------------------------------------------------

def make_torus(cfg) -> TorusSpec:
    return TorusSpec(cfg["torus.truncation_radius"], cfg["torus.grid_size"], cfg["torus.dealias_fraction"])


def make_params(cfg) -> SimulationParams:
    return SimulationParams(cfg["sim.viscosity"], cfg["sim.dt"], make_torus(cfg))


def make_forcing(cfg) -> ForcingSpec:
    return ForcingSpec.default(make_torus(cfg), cfg["forcing.amplitude"])


def make_noise(cfg) -> NoiseSpec:
    return NoiseSpec.default(make_torus(cfg), cfg["noise.sigma"])


def make_dictionary(cfg) -> PotentialDictionary:
    return PotentialDictionary.default(make_torus(cfg))


def make_grid(cfg) -> SymbolGrid:
    return SymbolGrid(cfg["symbol_grid.n_h"])
