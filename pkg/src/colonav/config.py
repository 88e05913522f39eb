"""Run configuration: colon layout files, run files, canonical hashing.

A run is fully described by one JSON file plus the colon layout it points at.
Both are resolved into a single canonical dict whose sha256 stamps every
artifact (logs, checkpoints), so replay and evaluation can refuse mismatched
inputs up front.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .agent import UpdateConfig
from .env import EnvConfig
from .geometry import (DEFAULT_TURN_RADIUS_MM, DEFAULT_WAYPOINT_SPACING_MM,
                       SegmentSpec, build_colon, default_segments)
from .hiloop import HIConfig
from .scope import ScopeConfig

ALGORITHMS = ("ppo", "hi-ppo")
SOURCES = ("none", "scripted", "remote")
DEFAULT_COLON = "colon_default.cfg"


# ---------------------------------------------------------------------------
# colon layout files (INI)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColonLayout:
    """Parsed colon file: segment list plus construction knobs."""

    segments: tuple
    turn_radius_mm: float = DEFAULT_TURN_RADIUS_MM
    waypoint_spacing_mm: float = DEFAULT_WAYPOINT_SPACING_MM

    def restricted(self, names) -> "ColonLayout":
        """Layout containing only the named segments, in layout order."""
        wanted = list(names)
        known = {s.name for s in self.segments}
        missing = [n for n in wanted if n not in known]
        if missing:
            raise ValueError(f"unknown segments: {missing}")
        kept = tuple(s for s in self.segments if s.name in set(wanted))
        return ColonLayout(kept, self.turn_radius_mm, self.waypoint_spacing_mm)

    def build(self, seed: int = 0):
        return build_colon(list(self.segments), seed=seed,
                           turn_radius=self.turn_radius_mm,
                           waypoint_spacing=self.waypoint_spacing_mm)

    def to_dict(self) -> dict:
        return {
            "turn_radius_mm": self.turn_radius_mm,
            "waypoint_spacing_mm": self.waypoint_spacing_mm,
            "segments": [
                {
                    "name": s.name,
                    "length_mm": s.length_mm,
                    "radius_range_mm": list(s.radius_range_mm),
                    "curvature": [[f, d, a] for f, d, a in s.curvature],
                }
                for s in self.segments
            ],
        }


def _parse_curvature(text: str) -> tuple:
    """Comma-separated turn events, each `fraction:direction:angle_deg`."""
    events = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad curvature entry {chunk!r}")
        events.append((float(parts[0]), parts[1].strip(), float(parts[2])))
    return tuple(events)


def load_colon_layout(path: str | Path) -> ColonLayout:
    """Read a colon layout from an INI file."""
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    parser.read_string(text)
    turn_radius = DEFAULT_TURN_RADIUS_MM
    spacing = DEFAULT_WAYPOINT_SPACING_MM
    if parser.has_section("colon"):
        turn_radius = parser.getfloat("colon", "turn_radius_mm", fallback=turn_radius)
        spacing = parser.getfloat("colon", "waypoint_spacing_mm", fallback=spacing)
    segments = []
    for section in parser.sections():
        if not section.startswith("segment:"):
            continue
        name = section.split(":", 1)[1]
        sec = parser[section]
        spec = SegmentSpec(
            name=name,
            length_mm=float(sec["length_mm"]),
            curvature=_parse_curvature(sec.get("curvature", "")),
            radius_range_mm=(float(sec.get("radius_min_mm", 14.0)),
                             float(sec.get("radius_max_mm", 20.0))),
        )
        spec.validate()
        segments.append(spec)
    if not segments:
        raise ValueError(f"no [segment:*] sections in {path}")
    return ColonLayout(tuple(segments), turn_radius, spacing)


def default_layout() -> ColonLayout:
    return ColonLayout(tuple(default_segments()))


def packaged_colon_path() -> Path:
    """Path of the colon layout file shipped inside the package."""
    return Path(resources.files("colonav").joinpath("data", DEFAULT_COLON))


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Everything one training or evaluation run depends on."""

    algorithm: str = "hi-ppo"
    colon_file: str = ""                 # empty: packaged default layout
    segments: tuple = ()                 # empty: whole layout
    seed: int = 0
    colon_seed: int = 0                  # frame roll of the built anatomy
    total_steps: int = 20000
    buffer_size: int = 2048
    gamma: float = 0.99
    gae_lambda: float = 0.95
    hidden_size: int = 128
    n_layers: int = 2
    normalize_obs: bool = True
    checkpoint_every_updates: int = 0    # 0: final checkpoint only
    intervention_source: str = "scripted"
    env: EnvConfig = field(default_factory=EnvConfig)
    update: UpdateConfig = field(default_factory=UpdateConfig)
    hi: HIConfig = field(default_factory=HIConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.intervention_source not in SOURCES:
            raise ValueError(f"intervention_source must be one of {SOURCES}")
        if self.buffer_size < 1 or self.total_steps < 1:
            raise ValueError("buffer_size and total_steps must be positive")
        if self.algorithm == "ppo":
            # plain PPO ignores the intervention machinery entirely
            object.__setattr__(self, "intervention_source", "none")

    # -- resolution ----------------------------------------------------

    def layout(self) -> ColonLayout:
        if self.colon_file:
            lay = load_colon_layout(self.colon_file)
        else:
            lay = default_layout()
        if self.segments:
            lay = lay.restricted(self.segments)
        return lay

    def build_model(self):
        return self.layout().build(seed=self.colon_seed)

    def resolved(self) -> dict:
        """Canonical dict of everything that affects run behavior."""
        env_d = asdict(self.env)
        env_d["scope"] = asdict(self.env.scope) if isinstance(self.env.scope, ScopeConfig) \
            else dict(self.env.scope)
        return {
            "version": 1,
            "algorithm": self.algorithm,
            "colon": self.layout().to_dict(),
            "segments": list(self.segments),
            "seed": self.seed,
            "colon_seed": self.colon_seed,
            "total_steps": self.total_steps,
            "buffer_size": self.buffer_size,
            "gamma": self.gamma,
            "gae_lambda": self.gae_lambda,
            "hidden_size": self.hidden_size,
            "n_layers": self.n_layers,
            "normalize_obs": self.normalize_obs,
            "intervention_source": self.intervention_source,
            "env": env_d,
            "update": asdict(self.update),
            "hi": asdict(self.hi),
        }

    def config_hash(self) -> str:
        return canonical_hash(self.resolved())


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def canonical_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def _dataclass_from_dict(cls, data: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def load_run_config(path: str | Path) -> RunConfig:
    """Read a run config from JSON; unknown keys are errors."""
    data = json.loads(Path(path).read_text())
    return run_config_from_dict(data, base_dir=Path(path).parent)


def run_config_from_dict(data: dict, base_dir: Path | None = None) -> RunConfig:
    data = dict(data)
    env_d = dict(data.pop("env", {}))
    scope_d = env_d.pop("scope", None)
    scope = _dataclass_from_dict(ScopeConfig, scope_d) if scope_d else ScopeConfig()
    env = _dataclass_from_dict(EnvConfig, {**env_d, "scope": scope})
    update = _dataclass_from_dict(UpdateConfig, dict(data.pop("update", {})))
    hi = _dataclass_from_dict(HIConfig, dict(data.pop("hi", {})))
    if "segments" in data:
        data["segments"] = tuple(data["segments"])
    colon_file = data.get("colon_file", "")
    if colon_file and base_dir is not None and not Path(colon_file).is_absolute():
        data["colon_file"] = str((base_dir / colon_file).resolve())
    allowed = {f.name for f in fields(RunConfig)} - {"env", "update", "hi"}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown RunConfig keys: {sorted(unknown)}")
    return RunConfig(env=env, update=update, hi=hi, **data)
