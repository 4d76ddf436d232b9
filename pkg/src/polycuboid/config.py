"""Pipeline configuration with file (TOML/JSON) and flag overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .core import PolycuboidError


class ConfigError(PolycuboidError):
    pass


_LENGTHS = (
    "eps", "min_size", "tau_touch", "tau_side", "contact_radius", "band", "margin",
    "dedup", "min_slab", "min_thickness", "fine_interval", "interval",
)


@dataclass
class PipelineConfig:
    mode: str = "oracle"
    level: str = "coarse"
    eps: float = 0.03
    min_pts: int = 10
    min_size: float = 0.05
    k: int = 5
    k_normals: int = 30
    tau_touch: float = 0.05
    tau_side: float = 0.01
    contact_radius: float = 0.15
    relabel: Optional[bool] = None
    band: float = 0.05
    margin: float = 0.02
    dedup: float = 0.02
    min_slab: float = 0.01
    min_thickness: float = 0.02
    fine_interval: float = 0.1
    merge_quads: bool = True
    sigma: float = 0.005
    interval: float = 0.01
    seed: int = 0
    layout_mask: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in ("oracle", "classical"):
            raise ConfigError(f"mode must be oracle or classical, not {self.mode!r}")
        if self.level not in ("coarse", "fine"):
            raise ConfigError(f"level must be coarse or fine, not {self.level!r}")
        for name in _LENGTHS:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.min_pts < 1 or self.k < 1 or self.k_normals < 3:
            raise ConfigError("min_pts and k must be >= 1, k_normals >= 3")

    @property
    def do_relabel(self) -> bool:
        # off by default with ground-truth labels, on for the classical provider
        return self.mode == "classical" if self.relabel is None else bool(self.relabel)

    def to_dict(self) -> dict:
        return asdict(self)

    def merged(self, overrides: dict) -> "PipelineConfig":
        data = self.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return from_mapping(data)


def from_mapping(data: dict) -> PipelineConfig:
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return PipelineConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        else:
            data = json.loads(path.read_text())
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    # allow a [pipeline] table in TOML
    if isinstance(data.get("pipeline"), dict):
        data = data["pipeline"]
    return from_mapping(data)
