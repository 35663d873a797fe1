"""Scenario configuration files.

A scenario is one YAML document.  Angles are radians and powers dBm, as in
every other file the package reads or writes.  Unknown keys are rejected so
that typos fail loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .channel import NetworkLayout, RadioConfig
from .codebook import LevelSpec, SectorGeometry
from .netsim import Hotspot, SimParams, TrafficModel
from .optimizer import DesignSpace

PRESETS = ("mass_event", "rural")


class ConfigError(ValueError):
    """The scenario file is malformed."""


@dataclass(frozen=True)
class OptimizerSettings:
    grid_points: int = 8
    refine_rounds: int = 3
    steer_samples: int = 25
    grid_resolution: int = 512
    quadrature_resolution: int = 512


@dataclass(frozen=True)
class SimulationSettings:
    horizon_s: float = 1000.0
    warmup_s: Optional[float] = None
    m_shapes: tuple = (math.inf,)
    level_caps: tuple = (None,)
    slot_s: float = 1e-3
    pf_window: float = 100.0
    mean_file_bits: float = 4e6
    user_cap: int = 500

    def params(self, m_shape: float, level_cap: Optional[int]) -> SimParams:
        return SimParams(m_shape=m_shape, level_cap=level_cap, slot_s=self.slot_s, pf_window=self.pf_window,
                         mean_file_bits=self.mean_file_bits, user_cap=self.user_cap)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    design_space: DesignSpace
    levels: tuple
    relaxed: bool
    geometry: SectorGeometry
    rings: int
    traffic: TrafficModel
    radio: RadioConfig
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    seed: int = 1
    output_dir: str = "out"

    @property
    def level_sizes(self) -> list[tuple[int, int]]:
        """Sizes the side-lobe constraint covers: every level above the wide level-0 beam."""
        sizes = [(lv.n_x, lv.n_z) for lv in self.levels[1:]]
        return sizes or [(self.levels[0].n_x, self.levels[0].n_z)]

    def layout(self) -> NetworkLayout:
        g = self.geometry
        return NetworkLayout(g.isd_m, self.rings, g.antenna_height_m, g.ue_height_m)

    def to_dict(self) -> dict:
        sim = asdict(self.simulation)
        sim["m_shapes"] = [_inf_out(m) for m in self.simulation.m_shapes]
        sim["level_caps"] = list(self.simulation.level_caps)
        traffic = {"uniform": self.traffic.uniform_intensity}
        if self.traffic.hotspot is not None:
            h = self.traffic.hotspot
            traffic["hotspot"] = {"x_m": h.x_m, "y_m": h.y_m, "std_m": h.std_m, "peak": h.peak_intensity}
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "design_space": asdict(self.design_space),
            "optimizer": asdict(self.optimizer),
            "levels": [{k: v for k, v in asdict(lv).items() if v is not None} for lv in self.levels],
            "relaxed": self.relaxed,
            "geometry": asdict(self.geometry),
            "rings": self.rings,
            "traffic": traffic,
            "radio": asdict(self.radio),
            "simulation": sim,
        }


def _inf_out(m):
    return "inf" if m == math.inf else m


def _inf_in(m):
    if isinstance(m, str):
        if m.strip().lower() in ("inf", ".inf", "infinity"):
            return math.inf
        raise ConfigError(f"bad Nakagami shape {m!r}")
    return float(m)


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    allowed = set(cls.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


TOP_KEYS = {"scenario", "seed", "output_dir", "design_space", "optimizer", "levels", "relaxed",
            "geometry", "rings", "traffic", "radio", "simulation"}
REQUIRED = {"scenario", "design_space", "levels", "geometry", "traffic"}


def from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("scenario file must be a mapping")
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown field(s) {sorted(unknown)}")
    missing = REQUIRED - set(data)
    if missing:
        raise ConfigError(f"missing field(s) {sorted(missing)}")
    if data["scenario"] not in PRESETS + ("custom",):
        raise ConfigError(f"scenario must be one of {PRESETS + ('custom',)}")

    levels_raw = data["levels"]
    if not isinstance(levels_raw, list) or not levels_raw:
        raise ConfigError("levels: expected a non-empty list")
    levels = tuple(_build(LevelSpec, lv, f"levels[{i}]") for i, lv in enumerate(levels_raw))

    traffic_raw = dict(data["traffic"] or {})
    unknown = set(traffic_raw) - {"uniform", "hotspot"}
    if unknown:
        raise ConfigError(f"traffic: unknown field(s) {sorted(unknown)}")
    hs = traffic_raw.get("hotspot")
    hotspot = None
    if hs is not None:
        hs = dict(hs)
        if "peak" in hs:
            hs["peak_intensity"] = hs.pop("peak")
        hotspot = _build(Hotspot, hs, "traffic.hotspot")
    try:
        traffic = TrafficModel(float(traffic_raw.get("uniform", 0.0)), hotspot)
    except ValueError as exc:
        raise ConfigError(f"traffic: {exc}") from exc

    sim_raw = dict(data.get("simulation") or {})
    if "m_shapes" in sim_raw:
        sim_raw["m_shapes"] = tuple(_inf_in(m) for m in sim_raw["m_shapes"])
        if any(m < 1 for m in sim_raw["m_shapes"]):
            raise ConfigError("simulation.m_shapes: Nakagami shape must be >= 1")
    if "level_caps" in sim_raw:
        sim_raw["level_caps"] = tuple(None if c is None else int(c) for c in sim_raw["level_caps"])
    sim = _build(SimulationSettings, sim_raw, "simulation")
    if sim.horizon_s <= 0:
        raise ConfigError("simulation.horizon_s must be positive")

    return ScenarioConfig(
        scenario=data["scenario"],
        design_space=_build(DesignSpace, data["design_space"], "design_space"),
        levels=levels,
        relaxed=bool(data.get("relaxed", False)),
        geometry=_build(SectorGeometry, data["geometry"], "geometry"),
        rings=int(data.get("rings", 2)),
        traffic=traffic,
        radio=_build(RadioConfig, data.get("radio"), "radio"),
        optimizer=_build(OptimizerSettings, data.get("optimizer"), "optimizer"),
        simulation=sim,
        seed=int(data.get("seed", 1)),
        output_dir=str(data.get("output_dir", "out")),
    )


def load_config(path_or_preset) -> ScenarioConfig:
    """Read a scenario file, or a bundled preset by name."""
    name = str(path_or_preset)
    if name in PRESETS:
        text = resources.files("beamsim.presets").joinpath(f"{name}.yaml").read_text()
    else:
        path = Path(name)
        if not path.is_file():
            raise ConfigError(f"no such config file or preset: {name}")
        text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    return from_dict(copy.deepcopy(data))
