"""Run manifests: the config, its hash, artifact list, timing, and seed ledger.

CSV artifacts produced under a manifest are bitwise reproducible from the
resolved config; the manifest itself carries wall-clock and is not.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict, field
from pathlib import Path

from . import config as _config


@dataclass
class RunManifest:
    subcommand: str
    config_hash: str
    seed: int
    workers: int
    artifacts: list[str] = field(default_factory=list)
    seed_ledger: dict[str, int] = field(default_factory=dict)
    wall_clock_s: float = 0.0
    code_version: str = "fkns-0.1.0"


class RunFolder:
    """Output folder owning the resolved config, manifest, and artifact registry."""

    def __init__(self, out_dir: str | Path, subcommand: str, cfg: dict):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.manifest = RunManifest(
            subcommand, _config.config_hash(cfg), cfg["run.seed"], cfg["run.workers"]
        )
        self._t0 = time.perf_counter()
        (self.dir / "config.resolved.cfg").write_text(_config.format_config(cfg))

    def path(self, name: str) -> Path:
        self.manifest.artifacts.append(name)
        return self.dir / name

    def note_seed(self, purpose: str, seed: int) -> None:
        self.manifest.seed_ledger[purpose] = int(seed)

    def finish(self) -> Path:
        self.manifest.wall_clock_s = time.perf_counter() - self._t0
        p = self.dir / "manifest.json"
        p.write_text(json.dumps(asdict(self.manifest), indent=2, sort_keys=True) + "\n")
        return p


def format_float(x) -> str:
    """Full-precision deterministic float formatting for CSV artifacts."""
    return repr(float(x))


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = [format_float(c) if isinstance(c, float) else str(c) for c in row]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
