"""
Pipeline configuration.

A flat "key = value" file supplies defaults; TWINMAP_THREADS (also read from
a .env file) overrides the worker count; command-line flags win over both.
"""

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, Mapping, Optional, Union

from .converter import ConversionConfig
from .errors import ConfigError, PreconditionError
from .geo_ingest import DEFAULT_DENY, LocalFrame
from .meshgen import TessellationParams
from .registration import IcpParams

logger = logging.getLogger(__name__)

THREADS_ENV = "TWINMAP_THREADS"

PATH_KEYS = ("osm", "dem", "cloud", "xodr", "graph", "out")
KNOWN_KEYS = frozenset(PATH_KEYS + (
    "workers", "origin_lat", "origin_lon", "name", "road.deny",
    "icp.max_iterations", "icp.convergence_tol", "icp.max_correspondence_dist",
    "icp.resample_step",
    "ground.cell_size", "ground.percentile", "ground.band",
    "convert.fit_mode", "convert.arc_tolerance", "convert.simplify_epsilon",
    "convert.elevation_sample_step", "convert.default_lane_width",
    "convert.bridge_clearance_min", "convert.sidewalk_width", "convert.shoulder_width",
    "convert.name",
    "mesh.ds", "mesh.terrain_skirt",
))
CLASS_KEY = re.compile(r"^class\.[A-Za-z0-9_]+\.(lanes_left|lanes_right|width)$")


@dataclass(frozen=True)
class GroundParams:
    cell_size: float = 1.0
    percentile: float = 0.05
    band: float = 0.3

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ConfigError("ground.cell_size must be positive")
        if not 0.0 <= self.percentile <= 1.0:
            raise ConfigError("ground.percentile must be in [0, 1]")
        if not self.band > 0:
            raise ConfigError("ground.band must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    osm: Optional[Path] = None
    dem: Optional[Path] = None
    cloud: Optional[Path] = None
    xodr: Optional[Path] = None
    graph: Optional[Path] = None
    out: Path = Path("out")
    frame: Optional[LocalFrame] = None
    icp: IcpParams = field(default_factory=IcpParams)
    ground: GroundParams = field(default_factory=GroundParams)
    conversion: ConversionConfig = field(default_factory=ConversionConfig)
    tessellation: TessellationParams = field(default_factory=TessellationParams)
    workers: int = 1
    deny: FrozenSet[str] = DEFAULT_DENY

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError(f"worker count must be >= 1, got {self.workers}")

    def require(self, *names: str) -> None:
        """Raise unless each named input path is set and exists."""
        for name in names:
            path = getattr(self, name)
            if path is None:
                raise PreconditionError(f"missing required input --{name}")
            if not Path(path).exists():
                raise PreconditionError(f"{name} file not found: {path}")

    @property
    def adjusted_graph_path(self) -> Path:
        return self.out / "adjusted_graph.jsonl"

    @property
    def xodr_path(self) -> Path:
        return self.xodr if self.xodr is not None else self.out / f"{self.conversion.name}.xodr"


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse flat "key = value" text; '#' starts a comment line."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS and not CLASS_KEY.match(key):
            raise ConfigError(f"unknown key '{key}'", lineno)
        values[key] = value
    return values


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def _number(values: Mapping[str, Any], key: str, kind=float):
    value = values.get(key)
    if value is None or isinstance(value, (int, float)):
        return value
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"'{key}' expects {kind.__name__}, got {value!r}")


def resolve_workers(flag: Optional[int], file_value: Optional[str],
                    environ: Optional[Mapping[str, str]] = None) -> int:
    """Worker count: flag, then TWINMAP_THREADS, then the config file, then 1."""
    environ = os.environ if environ is None else environ
    if flag is not None:
        return int(flag)
    env_value = environ.get(THREADS_ENV)
    if env_value:
        try:
            return int(env_value)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} expects an integer, got {env_value!r}")
    if file_value is not None:
        return int(_number({"workers": file_value}, "workers", int))
    return 1


def build_pipeline_config(
    file_values: Optional[Mapping[str, str]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> PipelineConfig:
    """
    Merge config file values and command-line overrides.

    Args:
        file_values: Parsed config file
        overrides: Flag values; None entries are ignored
        environ: Environment (defaults to os.environ)

    Returns:
        PipelineConfig with every nested parameter block validated
    """
    file_values = dict(file_values or {})
    flags = {k: v for k, v in (overrides or {}).items() if v is not None}
    merged: Dict[str, Any] = {**file_values, **flags}

    paths = {key: Path(merged[key]) for key in PATH_KEYS if key in merged}
    if "out" not in paths:
        paths["out"] = Path("out")

    origin_lat = _number(merged, "origin_lat")
    origin_lon = _number(merged, "origin_lon")
    if (origin_lat is None) != (origin_lon is None):
        raise ConfigError("origin_lat and origin_lon must be given together")
    frame = LocalFrame(origin_lat, origin_lon) if origin_lat is not None else None

    icp_kwargs = {
        name: _number(merged, f"icp.{name}", int if name == "max_iterations" else float)
        for name in ("max_iterations", "convergence_tol", "max_correspondence_dist", "resample_step")
    }
    ground_kwargs = {name: _number(merged, f"ground.{name}")
                     for name in ("cell_size", "percentile", "band")}
    mesh_kwargs = {name: _number(merged, f"mesh.{name}") for name in ("ds", "terrain_skirt")}

    conversion_overrides = {
        "fit_mode": flags.get("fit_mode"),
        "name": merged.get("name"),
    }
    conversion = ConversionConfig.from_mapping(
        {k: v for k, v in merged.items() if isinstance(k, str) and k.startswith(("convert.", "class."))},
        **conversion_overrides,
    )

    deny = DEFAULT_DENY
    if "road.deny" in merged:
        deny = frozenset(item.strip() for item in str(merged["road.deny"]).split(",") if item.strip())

    try:
        icp = IcpParams(**{k: v for k, v in icp_kwargs.items() if v is not None})
        tessellation = TessellationParams(**{k: v for k, v in mesh_kwargs.items() if v is not None})
    except PreconditionError as exc:
        raise ConfigError(str(exc))

    return PipelineConfig(
        frame=frame,
        icp=icp,
        ground=GroundParams(**{k: v for k, v in ground_kwargs.items() if v is not None}),
        conversion=conversion,
        tessellation=tessellation,
        workers=resolve_workers(flags.get("workers"), file_values.get("workers"), environ),
        deny=deny,
        **paths,
    )
